"""Drift parser for sdebounds.

A drift is named either by a built-in (``zero``, ``const@0.5``,
``worst-minus@1.0``, ...) or by a small arithmetic expression over the current
state ``x``, the running maximum ``m``, the time ``t``, the drift bound ``C``
and the lagged state ``at(tau)``. Expressions are compiled from a whitelisted
``ast`` subset; nothing is handed to ``eval``.
"""

import ast
import math
import operator
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml

from .exceptions import DriftParsingError
from .models import WorstKind
from .sde_lab import DriftFunctional, PathView, worst_drift

_BUILTIN = re.compile(r"^(?P<name>[a-z][a-z-]*)(?:@(?P<arg>[^@\s]+))?$")

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _clamp(v, lo, hi):
    return np.clip(v, lo, hi)


_FUNCTIONS: Dict[str, Callable[..., Any]] = {
    "sign": np.sign,
    "clamp": _clamp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "tanh": np.tanh,
    "min": np.minimum,
    "max": np.maximum,
}

_ARITY = {"clamp": 3, "min": 2, "max": 2}

_VARIABLES = ("x", "m", "t", "C", "pi")

Compiled = Callable[[Dict[str, Any]], Any]


class _Compiler:
    """Turns a whitelisted expression tree into nested closures."""

    def __init__(self, source: str):
        self.source = source
        self.uses_history = False

    def compile(self) -> Compiled:
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as e:
            raise DriftParsingError(f"Invalid drift expression '{self.source}': {e}")
        return self._node(tree.body)

    def _node(self, node: ast.AST) -> Compiled:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(
                node.value, (int, float)
            ):
                raise DriftParsingError(f"Unsupported constant {node.value!r}")
            value = float(node.value)
            return lambda env: value

        if isinstance(node, ast.Name):
            if node.id not in _VARIABLES:
                raise DriftParsingError(
                    f"Unknown name '{node.id}' in '{self.source}'; "
                    f"allowed: {', '.join(_VARIABLES)}"
                )
            name = node.id
            return lambda env: env[name]

        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            op = _BINARY[type(node.op)]
            left, right = self._node(node.left), self._node(node.right)
            return lambda env: op(left(env), right(env))

        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op = _UNARY[type(node.op)]
            operand = self._node(node.operand)
            return lambda env: op(operand(env))

        if isinstance(node, ast.Call):
            return self._call(node)

        raise DriftParsingError(
            f"Unsupported syntax {type(node).__name__} in '{self.source}'"
        )

    def _call(self, node: ast.Call) -> Compiled:
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise DriftParsingError(f"Unsupported call in '{self.source}'")
        name = node.func.id
        if name != "at" and name not in _FUNCTIONS:
            raise DriftParsingError(
                f"Unknown function '{name}'; allowed: at, {', '.join(_FUNCTIONS)}"
            )
        args = [self._node(a) for a in node.args]

        if name == "at":
            if len(args) != 1:
                raise DriftParsingError("at() takes exactly one time argument")
            self.uses_history = True
            lag = args[0]
            return lambda env: env["view"].at(float(lag(env)))

        expected = _ARITY.get(name, 1)
        if len(args) != expected:
            raise DriftParsingError(
                f"{name}() takes {expected} argument(s), got {len(args)}"
            )
        fn = _FUNCTIONS[name]
        return lambda env: fn(*(a(env) for a in args))


def compile_expression(
    source: str, C: float = 1.0, description: Optional[str] = None
) -> DriftFunctional:
    """Build a drift from an expression such as ``-C*sign(x-1)``."""
    compiler = _Compiler(source)
    program = compiler.compile()

    def func(view: PathView) -> np.ndarray:
        env = {
            "x": view.current,
            "m": view.running_max,
            "t": view.time,
            "C": C,
            "pi": math.pi,
            "view": view,
        }
        return program(env)

    return DriftFunctional(
        bound_C=C,
        func=func,
        description=description or source,
        needs_history=compiler.uses_history,
    )


def _float_arg(name: str, arg: Optional[str], default: float) -> float:
    if arg is None:
        return default
    try:
        return float(arg)
    except ValueError:
        raise DriftParsingError(f"Built-in drift '{name}' needs a numeric argument")


def _builtin(name: str, arg: Optional[str], C: float) -> Optional[DriftFunctional]:
    label = name if arg is None else f"{name}@{arg}"
    if name == "zero":
        return DriftFunctional(
            bound_C=C, func=lambda view: np.zeros_like(view.current), description=label
        )
    if name == "const":
        value = _float_arg(name, arg, C)
        if abs(value) > C:
            raise DriftParsingError(f"Constant drift {value} exceeds the bound {C}")
        return DriftFunctional(
            bound_C=C, func=lambda view: np.full_like(view.current, value),
            description=label,
        )
    if name in ("worst-minus", "worst-plus"):
        kind = WorstKind.MINUS if name == "worst-minus" else WorstKind.PLUS
        drift = worst_drift(kind, C, _float_arg(name, arg, 0.0))
        return drift.model_copy(update={"description": label})
    if name == "lipschitz":
        slope = _float_arg(name, arg, 5.0)
        return compile_expression(f"clamp(-{slope!r}*x, -C, C)", C, label)
    if name == "sin-lag":
        return compile_expression("C*sin(at(t/2))", C, label)
    if name == "runmax":
        return compile_expression("-C*clamp(m, -1, 1)", C, label)
    return None


BUILTIN_NAMES = (
    "zero",
    "const",
    "worst-minus",
    "worst-plus",
    "lipschitz",
    "sin-lag",
    "runmax",
)


class DriftParser:
    """Parser for drift names, expressions and YAML drift suites."""

    def __init__(self, C: float = 1.0):
        if not C > 0:
            raise DriftParsingError(f"Drift bound must be positive, got {C}")
        self.C = C

    def parse(self, spec: str) -> DriftFunctional:
        """Parse a built-in name or an expression."""
        spec = spec.strip()
        if not spec:
            raise DriftParsingError("Empty drift specification")
        match = _BUILTIN.match(spec)
        if match and match.group("name") in BUILTIN_NAMES:
            drift = _builtin(match.group("name"), match.group("arg"), self.C)
            if drift is not None:
                return drift
        return compile_expression(spec, self.C)

    def parse_file(self, filepath: str) -> List[DriftFunctional]:
        """Parse a drift suite from a YAML file."""
        try:
            path = Path(filepath)
            if not path.exists():
                raise DriftParsingError(f"Drift file not found: {filepath}")

            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)

            return self.parse_dict(data)

        except yaml.YAMLError as e:
            raise DriftParsingError(f"Invalid YAML in {filepath}: {e}")
        except DriftParsingError:
            raise
        except Exception as e:
            raise DriftParsingError(f"Failed to parse drift file {filepath}: {e}")

    def parse_dict(self, data: Dict[str, Any]) -> List[DriftFunctional]:
        """Parse a drift suite from a dictionary.

        The suite lists ``drifts`` as plain strings or as mappings with
        ``name`` and ``expr``. A top-level ``C`` must not exceed the parser's
        bound, since every drift is compared against the same bounds.
        """
        if not isinstance(data, dict) or "drifts" not in data:
            raise DriftParsingError("Drift suite must include 'drifts'")

        suite_C = float(data.get("C", self.C))
        if suite_C > self.C:
            raise DriftParsingError(
                f"Suite drift bound {suite_C} exceeds the verification bound {self.C}"
            )
        parser = DriftParser(suite_C) if suite_C != self.C else self

        drifts = []
        for entry in data["drifts"]:
            drifts.append(parser._parse_entry(entry))
        self.validate_suite(drifts)
        return drifts

    def _parse_entry(self, entry: Any) -> DriftFunctional:
        if isinstance(entry, str):
            return self.parse(entry)
        if not isinstance(entry, dict):
            raise DriftParsingError(f"Unsupported drift entry: {entry!r}")
        if "expr" not in entry:
            raise DriftParsingError("Drift entry must have an 'expr' field")
        drift = self.parse(str(entry["expr"]))
        if "name" in entry:
            drift = drift.model_copy(update={"description": str(entry["name"])})
        return drift

    def validate_suite(self, drifts: List[DriftFunctional]) -> None:
        """Reject suites with repeated drift names."""
        names = [d.description for d in drifts]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise DriftParsingError(f"Duplicate drift names: {', '.join(duplicates)}")


def default_suite(C: float = 1.0) -> List[DriftFunctional]:
    """Admissible drifts used for the sandwich property checks."""
    parser = DriftParser(C)
    return [
        parser.parse(spec)
        for spec in ("zero", "const", "lipschitz", "sin-lag", "runmax")
    ]
