"""Pydantic models shared across the sdebounds modules."""

import math
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SingularEnd(str, Enum):
    """Which endpoint of an integral carries a 1/sqrt singularity."""

    LEFT = "left"
    RIGHT = "right"
    NONE = "none"


class HittingKind(str, Enum):
    """First hitting time of the origin for the worst-case processes."""

    TAU_MINUS = "tau_minus"
    THETA_PLUS = "theta_plus"


class WorstKind(str, Enum):
    """Sign of the worst-case drift: Y+ flees the origin, Y- is attracted to it."""

    PLUS = "plus"
    MINUS = "minus"


class PlusPrefactor(int, Enum):
    """Candidate prefactors of the explicit term in the Y+ transition density."""

    ONE = 1
    TWO = 2


class Objective(str, Enum):
    """Direction of the ball-probability control problem."""

    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class Verdict(str, Enum):
    """Outcome of comparing one density estimate against its bounds."""

    INSIDE = "inside"
    VIOLATION_LOW = "violation_low"
    VIOLATION_HIGH = "violation_high"
    INCONCLUSIVE = "inconclusive"


class QuadratureConfig(BaseModel):
    """Error targets and subdivision budget for adaptive quadrature."""

    model_config = ConfigDict(frozen=True)

    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 200

    @field_validator("abs_tol", "rel_tol")
    @classmethod
    def validate_tolerance(cls, v):
        if not v > 0:
            raise ValueError("Quadrature tolerances must be positive")
        return v

    @field_validator("max_subdivisions")
    @classmethod
    def validate_subdivisions(cls, v):
        if v < 1:
            raise ValueError("max_subdivisions must be at least 1")
        return v


class QuadratureResult(BaseModel):
    """Value of an integral with its error estimate."""

    value: float
    error_estimate: float
    subdivisions_used: int = 0
    converged: bool = True

    @field_validator("error_estimate")
    @classmethod
    def validate_error(cls, v):
        if v < 0:
            raise ValueError("Error estimate cannot be negative")
        return v


class BoundsQuery(BaseModel):
    """One evaluation of the d-dimensional bounds at a point relative to the start."""

    d: int
    t: float
    C: float
    x: List[float]

    @field_validator("d")
    @classmethod
    def validate_dimension(cls, v):
        if v < 1:
            raise ValueError("Dimension must be at least 1")
        return v

    @field_validator("t", "C")
    @classmethod
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError("Time and drift bound must be positive")
        return v

    @field_validator("x")
    @classmethod
    def validate_point(cls, v, info):
        if not all(math.isfinite(xi) for xi in v):
            raise ValueError("Evaluation point must be finite")
        d = info.data.get("d")
        if d is not None and len(v) != d:
            raise ValueError(f"Evaluation point has {len(v)} coordinates, expected {d}")
        return v


class HittingKernel(BaseModel):
    """Law of the first hitting time of the origin started from x."""

    kind: HittingKind
    x: float
    atom_at_infinity: float = 0.0

    @model_validator(mode="after")
    def fill_atom(self):
        if self.kind == HittingKind.THETA_PLUS:
            self.atom_at_infinity = -math.expm1(-2.0 * abs(self.x))
        else:
            self.atom_at_infinity = 0.0
        return self

    @property
    def degenerate(self) -> bool:
        """Started at the origin, the hit happens at time zero."""
        return self.x == 0.0


class LampertiModel(BaseModel):
    """One-dimensional SDE with state-dependent diffusion coefficient."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    sigma: Callable[[float], float]
    sigma_lipschitz: float = 0.0
    drift_bound: float = 0.0
    epsilon_lower: float
    x0: float = 0.0
    # exact sup |b / sigma| when the caller knows it
    drift_sigma_sup: Optional[float] = None

    @field_validator("sigma_lipschitz", "drift_bound")
    @classmethod
    def validate_nonnegative(cls, v):
        if v < 0:
            raise ValueError("Lipschitz and drift bounds cannot be negative")
        return v

    @field_validator("epsilon_lower")
    @classmethod
    def validate_epsilon(cls, v):
        if not v > 0:
            raise ValueError("Lower bound on sigma must be positive")
        return v

    @property
    def drift_constant(self) -> float:
        """Drift bound C of the transformed unit-diffusion process."""
        ratio = self.drift_sigma_sup
        if ratio is None:
            ratio = self.drift_bound / self.epsilon_lower
        return ratio + self.sigma_lipschitz / 2.0


class SimConfig(BaseModel):
    """Euler–Maruyama run parameters."""

    model_config = ConfigDict(frozen=True)

    d: int = 1
    t_end: float = 1.0
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 20240601
    store_full_paths: bool = False
    # paths per generator stream; fixed so results do not depend on threading
    block_size: int = 4096

    @field_validator("d", "n_paths", "block_size")
    @classmethod
    def validate_count(cls, v):
        if v < 1:
            raise ValueError("Counts must be at least 1")
        return v

    @field_validator("t_end", "dt")
    @classmethod
    def validate_time(cls, v):
        if not v > 0:
            raise ValueError("Times must be positive")
        return v

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("Seed must be a 64-bit unsigned integer")
        return v

    @model_validator(mode="after")
    def validate_step(self):
        if self.dt > self.t_end:
            raise ValueError("Time step cannot exceed the horizon")
        return self

    @property
    def n_steps(self) -> int:
        """Number of Euler steps; the grid always ends exactly at t_end."""
        return max(1, int(round(self.t_end / self.dt)))

    @property
    def step(self) -> float:
        """Effective step size t_end / n_steps."""
        return self.t_end / self.n_steps


class SampleSet(BaseModel):
    """Monte Carlo terminal values with their provenance."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    terminal_values: np.ndarray
    config: SimConfig
    drift_description: str
    paths: Optional[np.ndarray] = None  # (n_steps + 1, n_paths, d)

    @model_validator(mode="after")
    def validate_rows(self):
        if self.terminal_values.ndim != 2:
            raise ValueError("Terminal values must be an n_paths x d matrix")
        if self.terminal_values.shape[0] != self.config.n_paths:
            raise ValueError("Row count must equal n_paths")
        return self

    @property
    def n(self) -> int:
        return int(self.terminal_values.shape[0])

    @property
    def d(self) -> int:
        return int(self.terminal_values.shape[1])


class DensityEstimate(BaseModel):
    """Binned density values with confidence half-widths."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    centers: np.ndarray
    values: np.ndarray
    half_widths: np.ndarray
    n: int
    bin_width: float
    confidence: float = 0.99


class SandwichPoint(BaseModel):
    """One grid point of a sandwich comparison."""

    x: List[float]
    alpha: float
    rho_hat: float
    beta: float
    ci: float
    margin: float
    verdict: Verdict
    # bounds averaged over the estimator's bin, what rho_hat estimates without bias
    alpha_bin: Optional[float] = None
    beta_bin: Optional[float] = None

    @property
    def bin_bounds(self) -> Tuple[float, float]:
        return (
            self.alpha if self.alpha_bin is None else self.alpha_bin,
            self.beta if self.beta_bin is None else self.beta_bin,
        )


class SandwichReport(BaseModel):
    """Grid-wise comparison of an estimated density against the bounds."""

    drift: str
    t: float
    C: float
    x0: List[float]
    bin_width: float
    n_paths: int
    points: List[SandwichPoint] = []

    def counts(self) -> Dict[str, int]:
        """Number of grid points per verdict."""
        out = {v.value: 0 for v in Verdict}
        for point in self.points:
            out[point.verdict.value] += 1
        return out

    def has_violations(self) -> bool:
        """Whether any point falls outside the bounds beyond its margin."""
        return any(
            p.verdict in (Verdict.VIOLATION_LOW, Verdict.VIOLATION_HIGH)
            for p in self.points
        )

    def nearest(self, x: float) -> SandwichPoint:
        """Grid point closest to x (first coordinate)."""
        return min(self.points, key=lambda p: abs(p.x[0] - x))

    def summary(self) -> str:
        """Human readable verdict counts."""
        counts = self.counts()
        return ", ".join(f"{k}: {v}" for k, v in counts.items())


class AttainmentCheck(BaseModel):
    """Whether a worst-case drift touches its bound at the designated point."""

    bound: str  # "alpha" or "beta"
    x_star: float
    target: float
    rho_hat: float
    margin: float
    attained: bool
    bin_target: Optional[float] = None  # extremal density averaged over the bin

    @property
    def gap(self) -> float:
        return self.rho_hat - self.target

    @property
    def reference(self) -> float:
        """Value the estimate is compared with."""
        return self.target if self.bin_target is None else self.bin_target

    @property
    def binning_bias(self) -> float:
        """Difference between the bound and what the histogram estimates at x*."""
        return 0.0 if self.bin_target is None else self.target - self.bin_target


class OptimalityReport(BaseModel):
    """Attainment of both bounds by the shifted worst-case drifts."""

    x_star: float
    t: float
    C: float
    upper: AttainmentCheck
    lower: AttainmentCheck
    upper_sandwich: SandwichReport
    lower_sandwich: SandwichReport

    @property
    def passed(self) -> bool:
        return self.upper.attained and self.lower.attained


class DPGrid(BaseModel):
    """Space grid and time mesh for the backward induction."""

    n_steps: int
    T: float = 1.0
    eps: float = 0.25
    C: float = 1.0
    x0: float = 0.0
    space_min: Optional[float] = None
    space_max: Optional[float] = None
    n_space: int = 2049

    @field_validator("n_steps")
    @classmethod
    def validate_steps(cls, v):
        if v < 1:
            raise ValueError("n_steps must be at least 1")
        return v

    @field_validator("n_space")
    @classmethod
    def validate_space(cls, v):
        if v < 3:
            raise ValueError("n_space must be at least 3")
        return v

    @field_validator("T", "eps", "C")
    @classmethod
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError("T, eps and C must be positive")
        return v

    @model_validator(mode="after")
    def fill_range(self):
        half = abs(self.x0) + self.C * self.T + 8.0 * math.sqrt(self.T)
        if self.space_min is None:
            self.space_min = -half
        if self.space_max is None:
            self.space_max = half
        if not self.space_max > self.space_min:
            raise ValueError("space_max must exceed space_min")
        return self

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.space_min, self.space_max, self.n_space)

    @property
    def cell_width(self) -> float:
        return (self.space_max - self.space_min) / (self.n_space - 1)


class DPSolution(BaseModel):
    """Value function and optimal policy of the backward induction."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: DPGrid
    objective: Objective
    nodes: np.ndarray
    value: np.ndarray  # (n_steps + 1, n_space)
    policy: np.ndarray  # (n_steps, n_space)
    spread: np.ndarray  # objective range over admissible controls, per node

    def value_at(self, x: float, step: int = 0) -> float:
        """Linearly interpolated value at time index ``step``."""
        return float(np.interp(x, self.nodes, self.value[step]))


class BangBangReport(BaseModel):
    """Nodes whose optimal control is not at the boundary of [-C, C]."""

    objective: Objective
    checked: int
    excluded: int
    exceptions: List[Dict[str, float]] = []

    @property
    def fraction_bang_bang(self) -> float:
        if self.checked == 0:
            return 1.0
        return 1.0 - len(self.exceptions) / self.checked


class ConvergenceRow(BaseModel):
    """Value of the discretized control problem for one time mesh."""

    n_steps: int
    value: float
    gap_oracle: float
    gap_mc: Optional[float] = None


class ConvergenceReport(BaseModel):
    """Convergence of the discrete control values to the continuous ball probability."""

    objective: Objective
    T: float
    eps: float
    x0: float
    oracle: float
    mc_estimate: Optional[float] = None
    mc_half_width: Optional[float] = None
    rows: List[ConvergenceRow] = []
    monotone_from: int = 16
    grid_tolerance: float = 2e-3
    monotone: bool = False
    final_within_tolerance: bool = False

    @property
    def passed(self) -> bool:
        return self.monotone and self.final_within_tolerance


class RunManifest(BaseModel):
    """Everything needed to reproduce one CLI invocation."""

    subcommand: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    version: str
    wall_time: float = 0.0
    outputs: List[str] = []
