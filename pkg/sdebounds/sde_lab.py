"""Euler–Maruyama engine for SDEs with bounded, path-dependent drift.

Paths are simulated in fixed-size blocks. Block ``k`` draws its Gaussian
increments from a Philox stream keyed by the run seed with ``k`` in the top
counter word, and every step draws a full ``block_size`` batch, so the sample
for a given path index never depends on ``n_paths`` or on the thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import DomainError, LookaheadError, NonFiniteState
from .models import SampleSet, SimConfig, WorstKind

logger = logging.getLogger(__name__)

# relative slack when comparing a drift norm to its bound
_BOUND_SLACK = 1e-12


def block_generator(seed: int, block_index: int) -> np.random.Generator:
    """Counter-based generator for one block of paths."""
    counter = np.array([0, 0, 0, block_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def generalized_sign(v: np.ndarray) -> np.ndarray:
    """Row-wise ``v / |v|``, zero for rows at the origin."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norms > 0, v / np.where(norms > 0, norms, 1.0), 0.0)


class PathView:
    """What a drift may see at grid time ``step * dt``: the path up to now."""

    def __init__(
        self,
        current: np.ndarray,
        running_max: np.ndarray,
        step: int,
        dt: float,
        history: Optional[np.ndarray] = None,
    ):
        self.current = current
        self.running_max = running_max
        self.step = step
        self.dt = dt
        self._history = history

    @property
    def time(self) -> float:
        return self.step * self.dt

    def at(self, tau: float) -> np.ndarray:
        """Path value at the last grid time not after ``tau``."""
        if tau > self.time + 1e-9 * self.dt:
            raise LookaheadError(
                f"Drift asked for the path at {tau:g} while at time {self.time:g}"
            )
        if self._history is None:
            raise LookaheadError("Drift reads past path values but keeps no history")
        index = min(self.step, max(0, int(math.floor(tau / self.dt + 1e-9))))
        return self._history[index]


class DriftFunctional(BaseModel):
    """Predictable drift ``b(s, path)`` bounded in Euclidean norm by ``bound_C``.

    ``func`` maps a :class:`PathView` to an ``(m, d)`` array (anything that
    broadcasts to it). Values above the bound are scaled back onto it.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    bound_C: float
    func: Callable[[PathView], np.ndarray]
    description: str = "drift"
    needs_history: bool = False

    @field_validator("bound_C")
    @classmethod
    def validate_bound(cls, v):
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError("Drift bound must be finite and nonnegative")
        return v

    @classmethod
    def markov(
        cls,
        fn: Callable[[float, np.ndarray], np.ndarray],
        bound_C: float,
        description: str = "markov drift",
    ) -> "DriftFunctional":
        """Drift depending only on time and the current state."""
        return cls(
            bound_C=bound_C,
            func=lambda view: fn(view.time, view.current),
            description=description,
        )

    def evaluate(self, view: PathView) -> Tuple[np.ndarray, bool]:
        """Drift values for every path, clamped to the bound; flags clamping."""
        values = np.broadcast_to(
            np.asarray(self.func(view), dtype=float), view.current.shape
        ).copy()
        return clamp_rows(values, self.bound_C)


def clamp_rows(values: np.ndarray, bound: float) -> Tuple[np.ndarray, bool]:
    """Scale rows whose norm exceeds ``bound`` back onto the bound."""
    norms = np.linalg.norm(values, axis=-1)
    over = norms > bound * (1.0 + _BOUND_SLACK) + _BOUND_SLACK
    if not np.any(over):
        return values, False
    values[over] *= (bound / norms[over])[:, None]
    return values, True


def worst_drift(
    kind: WorstKind, C: float = 1.0, shift: Optional[np.ndarray] = None
) -> DriftFunctional:
    """``+C sgn(x - shift)`` (plus, fleeing) or ``-C sgn(x - shift)`` (minus)."""
    kind = WorstKind(kind)
    sign = 1.0 if kind == WorstKind.PLUS else -1.0
    center = None if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))

    def func(view: PathView) -> np.ndarray:
        state = view.current if center is None else view.current - center
        return sign * C * generalized_sign(state)

    where = "0" if center is None else ",".join(f"{c:g}" for c in center)
    return DriftFunctional(
        bound_C=C,
        func=func,
        description=f"worst-{kind.value}@{where} C={C:g}",
    )


def _start_point(x0, d: int) -> np.ndarray:
    start = np.atleast_1d(np.asarray(x0, dtype=float))
    if start.shape != (d,):
        raise DomainError(f"Start point has shape {start.shape}, expected ({d},)")
    if not np.all(np.isfinite(start)):
        raise DomainError("Start point must be finite")
    return start


def _check_finite(state: np.ndarray, step: int, what: str) -> None:
    if not np.all(np.isfinite(state)):
        raise NonFiniteState(f"{what} left the finite reals at step {step}")


def _run_blocks(
    cfg: SimConfig,
    block_fn: Callable[[int, int], Tuple[np.ndarray, Optional[np.ndarray]]],
    threads: int,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    n_blocks = -(-cfg.n_paths // cfg.block_size)
    sizes = [
        min(cfg.block_size, cfg.n_paths - b * cfg.block_size) for b in range(n_blocks)
    ]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(block_fn, range(n_blocks), sizes))
    terminal = np.concatenate([r[0] for r in results], axis=0)
    paths = None
    if results[0][1] is not None:
        paths = np.concatenate([r[1] for r in results], axis=1)
    return terminal, paths


def simulate(
    drift: DriftFunctional, x0, cfg: SimConfig, threads: int = 1
) -> SampleSet:
    """Left-point Euler scheme ``X += b(t_k, path up to t_k) dt + sqrt(dt) xi``."""
    start = _start_point(x0, cfg.d)
    n_steps, dt = cfg.n_steps, cfg.step
    root_dt = math.sqrt(dt)
    keep_history = drift.needs_history or cfg.store_full_paths
    logger.debug(
        "Simulating %s: %d paths, %d steps, d=%d",
        drift.description,
        cfg.n_paths,
        n_steps,
        cfg.d,
    )

    def block(index: int, m: int):
        rng = block_generator(cfg.seed, index)
        x = np.tile(start, (m, 1))
        running_max = x.copy()
        history = None
        if keep_history:
            history = np.empty((n_steps + 1, m, cfg.d))
            history[0] = x
        warned = False
        for k in range(n_steps):
            view = PathView(
                x, running_max, k, dt, None if history is None else history[: k + 1]
            )
            b, clamped = drift.evaluate(view)
            if clamped and not warned:
                logger.warning(
                    "Drift %s exceeded its bound %g in block %d; values clamped",
                    drift.description,
                    drift.bound_C,
                    index,
                )
                warned = True
            xi = rng.standard_normal((cfg.block_size, cfg.d))[:m]
            x = x + b * dt + root_dt * xi
            _check_finite(x, k + 1, "Path")
            np.maximum(running_max, x, out=running_max)
            if history is not None:
                history[k + 1] = x
        return x, (history if cfg.store_full_paths else None)

    terminal, paths = _run_blocks(cfg, block, threads)
    return SampleSet(
        terminal_values=terminal,
        config=cfg,
        drift_description=drift.description,
        paths=paths,
    )


def simulate_worst(
    kind: WorstKind, x0, cfg: SimConfig, threads: int = 1
) -> SampleSet:
    """Simulate ``dY = +-sgn(Y) dt + dW`` with the generalized signum."""
    return simulate(worst_drift(kind), x0, cfg, threads)


def simulate_worst_radius(
    kind: WorstKind, x0: float, cfg: SimConfig, threads: int = 1
) -> SampleSet:
    """Exact samples of ``|Y+-_x0|`` on the time mesh, d = 1.

    ``|Y-|`` (``|Y+|``) is Brownian motion with drift -1 (+1) reflected at the
    origin. Each step draws the increment and the Brownian-bridge minimum
    ``m = (D - sqrt(D^2 - 2 dt log U)) / 2`` and sets
    ``R' = max(R + D, D - m)``, so the mesh has no discretization bias.
    """
    kind = WorstKind(kind)
    if cfg.d != 1:
        raise DomainError("Exact worst-case radii are simulated in d = 1 only")
    r0 = abs(float(_start_point(x0, 1)[0]))
    mu = 1.0 if kind == WorstKind.PLUS else -1.0
    n_steps, dt = cfg.n_steps, cfg.step
    root_dt = math.sqrt(dt)

    def block(index: int, m: int):
        rng = block_generator(cfg.seed, index)
        r = np.full((m, 1), r0)
        history = None
        if cfg.store_full_paths:
            history = np.empty((n_steps + 1, m, 1))
            history[0] = r
        for k in range(n_steps):
            step = mu * dt + root_dt * rng.standard_normal((cfg.block_size, 1))[:m]
            u = 1.0 - rng.random((cfg.block_size, 1))[:m]
            low = 0.5 * (step - np.sqrt(step * step - 2.0 * dt * np.log(u)))
            r = np.maximum(r + step, step - low)
            if history is not None:
                history[k + 1] = r
        return r, history

    terminal, paths = _run_blocks(cfg, block, threads)
    return SampleSet(
        terminal_values=terminal,
        config=cfg,
        drift_description=f"radius-{kind.value} x0={r0:g}",
        paths=paths,
    )


def _radius_step(c: np.ndarray, d: int, dt: float) -> np.ndarray:
    """Positive root of ``u = c + (d - 1) dt / (2u)``; a reflection in d = 1."""
    if d == 1:
        return np.abs(c)
    return 0.5 * (c + np.sqrt(c * c + 2.0 * (d - 1) * dt))


def simulate_square_radius(
    kind: WorstKind, x0, cfg: SimConfig, threads: int = 1
) -> SampleSet:
    """Simulate ``Z = |Y|^2`` directly from ``dZ = (d +- 2 sqrt Z) dt + 2 sqrt Z dB``.

    The scheme runs on ``U = sqrt Z``, which by Ito solves
    ``dU = ((d - 1) / (2U) +- 1) dt + dB``. The ``(d - 1) / (2U)`` term is
    taken implicitly, so U stays positive for d >= 2; in d = 1 the step is
    reflected, which reproduces ``|Y|`` of the Euler scheme for Y in law.
    Z has no atom at the origin. The output has one column for every d.
    """
    kind = WorstKind(kind)
    start = _start_point(x0, cfg.d)
    u0 = float(np.linalg.norm(start))
    sign = 1.0 if kind == WorstKind.PLUS else -1.0
    n_steps, dt = cfg.n_steps, cfg.step
    root_dt = math.sqrt(dt)

    def block(index: int, m: int):
        rng = block_generator(cfg.seed, index)
        u = np.full((m, 1), u0)
        history = None
        if cfg.store_full_paths:
            history = np.empty((n_steps + 1, m, 1))
            history[0] = u * u
        for k in range(n_steps):
            xi = rng.standard_normal((cfg.block_size, 1))[:m]
            # sgn(0) = 0, as for the drift of Y
            c = u + sign * (u > 0) * dt + root_dt * xi
            u = _radius_step(c, cfg.d, dt)
            _check_finite(u, k + 1, "Radius")
            if history is not None:
                history[k + 1] = u * u
        return u * u, history

    terminal, paths = _run_blocks(cfg, block, threads)
    return SampleSet(
        terminal_values=terminal,
        config=cfg,
        drift_description=f"square-radius-{kind.value} d={cfg.d}",
        paths=paths,
    )


def simulate_diffusion(
    drift: DriftFunctional,
    sigma: Callable[[np.ndarray], np.ndarray],
    x0: float,
    cfg: SimConfig,
    threads: int = 1,
) -> SampleSet:
    """Euler scheme for ``dX = b dt + sigma(X) dW`` in one dimension.

    ``sigma`` must accept an array of states.
    """
    if cfg.d != 1:
        raise DomainError("State-dependent diffusion is simulated in d = 1 only")
    start = _start_point(x0, 1)
    n_steps, dt = cfg.n_steps, cfg.step
    root_dt = math.sqrt(dt)
    keep_history = drift.needs_history or cfg.store_full_paths

    def block(index: int, m: int):
        rng = block_generator(cfg.seed, index)
        x = np.tile(start, (m, 1))
        running_max = x.copy()
        history = None
        if keep_history:
            history = np.empty((n_steps + 1, m, 1))
            history[0] = x
        for k in range(n_steps):
            view = PathView(
                x, running_max, k, dt, None if history is None else history[: k + 1]
            )
            b, _ = drift.evaluate(view)
            vol = np.broadcast_to(np.asarray(sigma(x), dtype=float), x.shape)
            xi = rng.standard_normal((cfg.block_size, 1))[:m]
            x = x + b * dt + vol * root_dt * xi
            _check_finite(x, k + 1, "Path")
            np.maximum(running_max, x, out=running_max)
            if history is not None:
                history[k + 1] = x
        return x, (history if cfg.store_full_paths else None)

    terminal, paths = _run_blocks(cfg, block, threads)
    return SampleSet(
        terminal_values=terminal,
        config=cfg,
        drift_description=f"{drift.description} with state-dependent sigma",
        paths=paths,
    )


def comparison_slack(bound: float, dt: float) -> float:
    """Discretization allowance for the pathwise comparison of two Euler paths."""
    return 2.0 * bound * dt + 4.0 * math.sqrt(dt * max(0.0, math.log(1.0 / dt)))


def coupled_compare(
    drift_markov: Callable[[float, np.ndarray], np.ndarray],
    x0: float,
    y0: float,
    cfg: SimConfig,
    bound: float = 1.0,
    threads: int = 1,
) -> int:
    """Count (path, step) pairs where the lower start overtakes the upper one.

    Both paths share every Gaussian increment. An overtake counts when
    ``X - Y`` exceeds :func:`comparison_slack`.
    """
    if cfg.d != 1:
        raise DomainError("Comparison coupling is one-dimensional")
    if not x0 <= y0:
        raise DomainError(f"Comparison needs x0 <= y0, got {x0} > {y0}")
    n_steps, dt = cfg.n_steps, cfg.step
    root_dt = math.sqrt(dt)
    slack = comparison_slack(bound, dt)

    def drift(s: float, state: np.ndarray) -> np.ndarray:
        values = np.broadcast_to(
            np.asarray(drift_markov(s, state), dtype=float), state.shape
        ).copy()
        return clamp_rows(values, bound)[0]

    def block(index: int, m: int):
        rng = block_generator(cfg.seed, index)
        x = np.full((m, 1), float(x0))
        y = np.full((m, 1), float(y0))
        count = 0
        for k in range(n_steps):
            s = k * dt
            xi = rng.standard_normal((cfg.block_size, 1))[:m]
            x = x + drift(s, x) * dt + root_dt * xi
            y = y + drift(s, y) * dt + root_dt * xi
            _check_finite(x, k + 1, "Lower path")
            _check_finite(y, k + 1, "Upper path")
            count += int(np.count_nonzero(x - y > slack))
        return np.array([[count]]), None

    counts, _ = _run_blocks(cfg, block, threads)
    violations = int(counts.sum())
    if violations:
        logger.warning(
            "Comparison coupling: %d overtakes beyond slack %.3g", violations, slack
        )
    return violations


def terminal_norms(samples: SampleSet, center=None) -> np.ndarray:
    """Euclidean distances of the terminal values to ``center``."""
    values = samples.terminal_values
    if center is not None:
        values = values - np.atleast_1d(np.asarray(center, dtype=float))
    return np.linalg.norm(values, axis=1)
