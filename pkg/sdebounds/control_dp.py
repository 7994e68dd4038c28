"""Backward induction for the ball-probability control problem in d = 1.

With controls held constant on the mesh ``T k / n`` the value function solves

    V_n(x) = 1{|x| <= eps},
    V_k(x) = opt_{|v| <= C} E[V_{k+1}(x + v dt + sqrt(dt) xi)].

The expectation is a lattice correlation with the Gaussian N(v dt, dt) sampled
at the nodes, built exactly for every scanned control so that no sub-cell
interpolation enters. The inner optimization over ``v`` is a sub-grid scan
followed by a golden-section refinement, so the bang-bang shape of the
optimizer is observed rather than assumed.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
from scipy import interpolate, ndimage, stats

from .bounds_core import ball_probability
from .exceptions import DomainError, GridTooNarrow
from .models import (
    BangBangReport,
    ConvergenceReport,
    ConvergenceRow,
    DPGrid,
    DPSolution,
    Objective,
    QuadratureConfig,
    SampleSet,
    WorstKind,
)
from .numerics import DEFAULT_QUADRATURE

logger = logging.getLogger(__name__)

KERNEL_WIDTHS = 8.0
BOUNDARY_MASS = 1e-8
CONTROL_SUBGRID = 33
GOLDEN_ITERATIONS = 40
FLAT_SPREAD = 1e-12
MIN_STEP_CELLS = 2.0

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def check_grid(grid: DPGrid) -> None:
    """Raise GridTooNarrow if N(x0 +- C T, T) puts too much mass off the grid."""
    sd = math.sqrt(grid.T)
    drift = grid.C * grid.T
    escaped = max(
        stats.norm.cdf((grid.space_min - (grid.x0 - drift)) / sd),
        stats.norm.sf((grid.space_max - (grid.x0 + drift)) / sd),
    )
    if escaped >= BOUNDARY_MASS:
        raise GridTooNarrow(
            f"Grid [{grid.space_min:g}, {grid.space_max:g}] loses mass {escaped:.2e} "
            f"(limit {BOUNDARY_MASS:g})"
        )


def _kernel_reach(grid: DPGrid) -> int:
    reach = int(math.ceil(KERNEL_WIDTHS * math.sqrt(grid.dt) / grid.cell_width)) + 1
    return min(reach, grid.n_space - 1)


def shifted_weights(grid: DPGrid, shifts) -> np.ndarray:
    """Weights of N(shift, dt) on the lattice offsets ``-reach..reach``, one row per shift.

    Sampling the Gaussian at the nodes keeps the mean and variance of the step
    exact up to terms of order exp(-2 pi^2 dt / h^2), so repeated steps add no
    numerical diffusion.
    """
    sigma = math.sqrt(grid.dt)
    reach = _kernel_reach(grid)
    offsets = np.arange(-reach, reach + 1) * grid.cell_width
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    weights = stats.norm.pdf((offsets[None, :] - shifts[:, None]) / sigma)
    return weights / weights.sum(axis=1, keepdims=True)


def terminal_value(grid: DPGrid) -> np.ndarray:
    """Indicator of the eps-ball averaged over each cell."""
    h = grid.cell_width
    x = grid.nodes
    inside = np.minimum(x + 0.5 * h, grid.eps) - np.maximum(x - 0.5 * h, -grid.eps)
    return np.clip(inside, 0.0, h) / h


def _expectations(value: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """E[V(x_i + v dt + sqrt(dt) xi)] for every node and every weight row."""
    return np.stack(
        [ndimage.correlate1d(value, row, mode="nearest") for row in weights], axis=1
    )


def _expectation_at(
    value: np.ndarray, rows: np.ndarray, shifts: np.ndarray, grid: DPGrid
) -> np.ndarray:
    """Same expectation with a separate shift per node."""
    reach = _kernel_reach(grid)
    offsets = np.arange(-reach, reach + 1)
    cols = np.clip(rows[:, None] + offsets[None, :], 0, grid.n_space - 1)
    weights = stats.norm.pdf(
        (offsets[None, :] * grid.cell_width - shifts[:, None]) / math.sqrt(grid.dt)
    )
    return (weights * value[cols]).sum(axis=1) / weights.sum(axis=1)


def _spline_at(spline: interpolate.CubicSpline, controls: np.ndarray, v: np.ndarray):
    """Evaluate the per-node splines, node i at v[i]."""
    rows = np.arange(v.size)
    piece = np.clip(np.searchsorted(controls, v, side="right") - 1, 0, controls.size - 2)
    dx = v - controls[piece]
    out = spline.c[0, piece, rows]
    for k in range(1, 4):
        out = out * dx + spline.c[k, piece, rows]
    return out


def _optimize_step(
    value_next: np.ndarray,
    weights: np.ndarray,
    controls: np.ndarray,
    grid: DPGrid,
    sign: float,
):
    """Best control per node of ``sign * E[V(x + v dt + sqrt(dt) xi)]`` over ``|v| <= C``.

    The scan over ``controls`` is exact. Golden-section search then runs on a
    cubic spline through the scan, and a refined control is kept only if its
    exact expectation beats the scan.
    """
    scan = sign * _expectations(value_next, weights)
    n_controls = controls.size
    best = np.argmax(scan, axis=1)
    rows = np.arange(scan.shape[0])
    grid_v = controls[best]
    grid_f = scan[rows, best]
    spread = scan.max(axis=1) - scan.min(axis=1)

    spline = interpolate.CubicSpline(controls, scan, axis=1)
    lo = controls[np.maximum(best - 1, 0)]
    hi = controls[np.minimum(best + 1, n_controls - 1)]
    for _ in range(GOLDEN_ITERATIONS):
        c = hi - _INV_PHI * (hi - lo)
        d = lo + _INV_PHI * (hi - lo)
        left = _spline_at(spline, controls, c) >= _spline_at(spline, controls, d)
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
    refined_v = 0.5 * (lo + hi)

    policy = grid_v.copy()
    value = grid_f.copy()
    candidates = np.flatnonzero(_spline_at(spline, controls, refined_v) > grid_f + FLAT_SPREAD)
    if candidates.size:
        exact = sign * _expectation_at(
            value_next, candidates, refined_v[candidates] * grid.dt, grid
        )
        better = exact > grid_f[candidates]
        policy[candidates[better]] = refined_v[candidates[better]]
        value[candidates[better]] = exact[better]
    return sign * value, policy, spread


def dp_solve(grid: DPGrid, objective: Objective) -> DPSolution:
    """Solve the discrete control problem by backward induction.

    Raises:
        GridTooNarrow: if the space grid cannot contain the controlled law.
    """
    objective = Objective(objective)
    check_grid(grid)
    if not grid.space_min <= grid.x0 <= grid.space_max:
        raise DomainError(f"x0={grid.x0} lies outside the space grid")
    sign = 1.0 if objective == Objective.MAXIMIZE else -1.0
    nodes = grid.nodes
    if math.sqrt(grid.dt) < MIN_STEP_CELLS * grid.cell_width:
        logger.warning(
            "Step sd %.3g spans fewer than %g cells; refine n_space",
            math.sqrt(grid.dt),
            MIN_STEP_CELLS,
        )
    controls = np.linspace(-grid.C, grid.C, CONTROL_SUBGRID)
    weights = shifted_weights(grid, controls * grid.dt)

    value = np.empty((grid.n_steps + 1, grid.n_space))
    policy = np.empty((grid.n_steps, grid.n_space))
    spread = np.empty((grid.n_steps, grid.n_space))
    value[grid.n_steps] = terminal_value(grid)

    for k in range(grid.n_steps - 1, -1, -1):
        value[k], policy[k], spread[k] = _optimize_step(
            value[k + 1], weights, controls, grid, sign
        )

    logger.debug(
        "Solved %s problem: n=%d, V0(x0)=%.8f",
        objective.value,
        grid.n_steps,
        float(np.interp(grid.x0, nodes, value[0])),
    )
    return DPSolution(
        grid=grid,
        objective=objective,
        nodes=nodes,
        value=value,
        policy=policy,
        spread=spread,
    )


def dp_policy_is_bangbang(sol: DPSolution, tol: float = 1e-6) -> BangBangReport:
    """List nodes whose optimal control is not ``-C sgn(x)`` (max) or ``+C sgn(x)`` (min).

    Nodes with ``|x| <= max(h, C dt)`` and nodes where every admissible
    control gives the same value are excluded.
    """
    grid = sol.grid
    sign = -1.0 if sol.objective == Objective.MAXIMIZE else 1.0
    cutoff = max(grid.cell_width, grid.C * grid.dt)
    exceptions = []
    checked = excluded = 0
    for k in range(grid.n_steps):
        for i, x in enumerate(sol.nodes):
            if abs(x) <= cutoff or sol.spread[k, i] < FLAT_SPREAD:
                excluded += 1
                continue
            checked += 1
            expected = sign * grid.C * math.copysign(1.0, x)
            if abs(sol.policy[k, i] - expected) > tol * grid.C:
                exceptions.append(
                    {"step": float(k), "x": float(x), "control": float(sol.policy[k, i])}
                )
    report = BangBangReport(
        objective=sol.objective,
        checked=checked,
        excluded=excluded,
        exceptions=exceptions,
    )
    logger.info(
        "Bang-bang %s: %.4f of %d nodes", sol.objective.value,
        report.fraction_bang_bang, checked,
    )
    return report


def oracle_probability(
    objective: Objective,
    T: float,
    eps: float,
    x0: float,
    C: float = 1.0,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> float:
    """Continuous-time optimum ``P(|Y_x0(T)| <= eps)`` with bound C, by quadrature."""
    kind = WorstKind.MINUS if Objective(objective) == Objective.MAXIMIZE else WorstKind.PLUS
    # Y with bound C at time T is Y with bound 1 at time T C^2, shrunk by C
    return ball_probability(T * C * C, C * eps, C * x0, kind, cfg).value


def dp_convergence_check(
    T: float,
    eps: float,
    x0: float,
    n_list: Sequence[int],
    mc_oracle: Optional[SampleSet] = None,
    objective: Objective = Objective.MAXIMIZE,
    C: float = 1.0,
    n_space: int = 2049,
    confidence: float = 0.99,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    monotone_from: int = 16,
    grid_tolerance: float = 2e-3,
) -> ConvergenceReport:
    """Compare the discrete values with the quadrature and Monte Carlo oracles."""
    objective = Objective(objective)
    n_list = list(n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError("n_list must be a nonempty increasing sequence")

    oracle = oracle_probability(objective, T, eps, x0, C, cfg)
    mc_estimate = mc_half_width = None
    if mc_oracle is not None:
        hits = np.abs(mc_oracle.terminal_values[:, 0]) <= eps
        mc_estimate = float(hits.mean())
        z = float(stats.norm.ppf(0.5 + 0.5 * confidence))
        mc_half_width = z * math.sqrt(mc_estimate * (1 - mc_estimate) / hits.size)

    rows: List[ConvergenceRow] = []
    for n in n_list:
        grid = DPGrid(n_steps=n, T=T, eps=eps, C=C, x0=x0, n_space=n_space)
        value = dp_solve(grid, objective).value_at(x0)
        rows.append(
            ConvergenceRow(
                n_steps=n,
                value=value,
                gap_oracle=abs(value - oracle),
                gap_mc=None if mc_estimate is None else abs(value - mc_estimate),
            )
        )
        logger.info("n=%d: V0=%.6f, gap to oracle %.2e", n, value, rows[-1].gap_oracle)

    tail = [r.gap_oracle for r in rows if r.n_steps >= monotone_from]
    monotone = all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    final = rows[-1]
    within = final.gap_oracle <= grid_tolerance
    if final.gap_mc is not None:
        within = within and final.gap_mc <= mc_half_width + grid_tolerance

    return ConvergenceReport(
        objective=objective,
        T=T,
        eps=eps,
        x0=x0,
        oracle=oracle,
        mc_estimate=mc_estimate,
        mc_half_width=mc_half_width,
        rows=rows,
        monotone_from=monotone_from,
        grid_tolerance=grid_tolerance,
        monotone=monotone,
        final_within_tolerance=within,
    )
