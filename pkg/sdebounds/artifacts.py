"""CSV and JSON writers for run outputs.

Every table starts with one ``#`` line holding the run parameters as compact,
key-sorted JSON. Nothing time-dependent goes into a table, so repeated runs
produce byte-identical files; wall time lives in ``run_manifest.json`` only.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .models import DPSolution, RunManifest, SampleSet, SandwichReport

MANIFEST_NAME = "run_manifest.json"
FAILURE_NAME = "failure.json"


def run_header(subcommand: str, parameters: Dict[str, Any], seed: int) -> Dict[str, Any]:
    """Parameters recorded at the top of every table of a run."""
    return {
        "subcommand": subcommand,
        "parameters": parameters,
        "seed": seed,
        "version": __version__,
    }


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_table(
    path: Path,
    header: Dict[str, Any],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Path:
    """Write a CSV with a ``#`` JSON header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("#" + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])
    return path


def read_table(path: Path):
    """Read a table back as (header dict, column names, list of string rows)."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        first = f.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path} has no parameter header")
        header = json.loads(first[1:])
        reader = csv.reader(f)
        columns = next(reader)
        return header, columns, list(reader)


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_bounds(
    path: Path,
    header: Dict[str, Any],
    xs: Sequence[float],
    lower: Sequence[float],
    upper: Sequence[float],
    d: int = 1,
) -> Path:
    """Columns ``x, alpha, beta`` (d = 1) or ``x, alpha_lower, beta_upper``."""
    columns = ["x", "alpha", "beta"] if d == 1 else ["x", "alpha_lower", "beta_upper"]
    return write_table(path, header, columns, zip(xs, lower, upper))


def write_samples(path: Path, samples: SampleSet, header: Dict[str, Any]) -> List[Path]:
    """One row per path plus a JSON sidecar with seed and drift description."""
    path = Path(path)
    full_header = {**header, "sim_config": samples.config.model_dump()}
    columns = [f"x{i + 1}" for i in range(samples.d)]
    table = write_table(path, full_header, columns, samples.terminal_values)
    sidecar = write_json(
        path.with_suffix(".json"),
        {
            "seed": samples.config.seed,
            "drift": samples.drift_description,
            "n_paths": samples.n,
            "d": samples.d,
            "sim_config": samples.config.model_dump(),
        },
    )
    return [table, sidecar]


def write_sandwich(
    path: Path, report: SandwichReport, header: Dict[str, Any], with_json: bool = True
) -> List[Path]:
    """Columns ``x, alpha, rho_hat, ci, beta, verdict``, optionally a JSON twin."""
    path = Path(path)
    d = len(report.points[0].x) if report.points else 1
    x_columns = ["x"] if d == 1 else [f"x{i + 1}" for i in range(d)]
    rows = (
        [*p.x, p.alpha, p.rho_hat, p.ci, p.beta, p.verdict.value] for p in report.points
    )
    outputs = [
        write_table(
            path, header, x_columns + ["alpha", "rho_hat", "ci", "beta", "verdict"], rows
        )
    ]
    if with_json:
        outputs.append(
            write_json(
                path.with_suffix(".json"),
                {**header, "report": report.model_dump(mode="json"),
                 "counts": report.counts()},
            )
        )
    return outputs


def write_dp_solution(
    path: Path, sol: DPSolution, header: Dict[str, Any], step: int = 0
) -> Path:
    """Value and policy slices at time index ``step``."""
    policy_step = min(step, sol.grid.n_steps - 1)
    return write_table(
        path,
        {**header, "step": step},
        ["x", "value", "policy"],
        zip(sol.nodes, sol.value[step], sol.policy[policy_step]),
    )


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    return write_json(Path(out_dir) / MANIFEST_NAME, manifest.model_dump(mode="json"))


def write_failure(
    out_dir: Path, subcommand: str, error: BaseException, detail: Optional[Dict] = None
) -> Path:
    """Machine-readable description of a failed run."""
    payload = {
        "subcommand": subcommand,
        "error_type": type(error).__name__,
        "message": str(error),
    }
    gap = getattr(error, "gap", None)
    if gap is not None:
        payload["gap"] = gap
    if detail:
        payload["detail"] = detail
    return write_json(Path(out_dir) / FAILURE_NAME, payload)
