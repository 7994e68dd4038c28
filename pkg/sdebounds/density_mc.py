"""Monte Carlo density estimates and their comparison with the bounds.

The histogram estimator is used throughout. Violations are judged against the
pointwise bounds with the 99% normal-approximation half-width plus the margin
``C * bin_width`` for the binning bias. Gaps and attainment are judged against
the bounds averaged over the bin, which the histogram estimates without bias,
so only the confidence half-width enters.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .bounds_core import (
    alpha1,
    ball_probability,
    alpha_d_lower,
    beta1,
    beta_d_upper,
    bounds_grid,
    lamperti_bounds,
    p_density,
)
from .exceptions import AttainmentFailed, DomainError, EmptySample
from .models import (
    AttainmentCheck,
    BoundsQuery,
    DensityEstimate,
    LampertiModel,
    OptimalityReport,
    PlusPrefactor,
    QuadratureConfig,
    SampleSet,
    SandwichPoint,
    SandwichReport,
    SimConfig,
    Verdict,
    WorstKind,
)
from .numerics import DEFAULT_QUADRATURE, ball_volume
from .sde_lab import (
    DriftFunctional,
    simulate,
    simulate_diffusion,
    simulate_worst,
    terminal_norms,
    worst_drift,
)

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 0.05
# composite Simpson on four panels across a bin
_BIN_OFFSETS = np.array([-0.5, -0.25, 0.0, 0.25, 0.5])
_BIN_WEIGHTS = np.array([1.0, 4.0, 2.0, 4.0, 1.0]) / 12.0


def default_grid() -> np.ndarray:
    """x in [-3, 3] with step 0.05."""
    return np.round(np.linspace(-3.0, 3.0, 121), 10)


def critical_z(confidence: float) -> float:
    """Two-sided standard normal quantile for ``confidence``."""
    return float(stats.norm.ppf(0.5 + 0.5 * confidence))


def _one_dimensional(samples: SampleSet) -> np.ndarray:
    if samples.terminal_values.size == 0:
        raise EmptySample("No samples to estimate a density from")
    if samples.d != 1:
        raise DomainError(f"Expected one-dimensional samples, got d={samples.d}")
    return samples.terminal_values[:, 0]


def _histogram(values: np.ndarray, grid: np.ndarray, bin_width: float, z: float):
    ordered = np.sort(values)
    half = 0.5 * bin_width
    counts = np.searchsorted(ordered, grid + half, side="right") - np.searchsorted(
        ordered, grid - half, side="left"
    )
    n = ordered.size
    p = counts / n
    return p / bin_width, z * np.sqrt(p * (1.0 - p) / n) / bin_width


def estimate_density_1d(
    samples: SampleSet,
    grid: Sequence[float],
    bin_width: float = DEFAULT_BIN_WIDTH,
    confidence: float = 0.99,
) -> DensityEstimate:
    """Centered-bin histogram ``#{|X_i - x| <= h/2} / (n h)`` with binomial CIs."""
    if not bin_width > 0:
        raise DomainError(f"Bin width must be positive, got {bin_width}")
    values = _one_dimensional(samples)
    centers = np.asarray(grid, dtype=float)
    density, half_widths = _histogram(
        values, centers, bin_width, critical_z(confidence)
    )
    return DensityEstimate(
        centers=centers,
        values=density,
        half_widths=half_widths,
        n=values.size,
        bin_width=bin_width,
        confidence=confidence,
    )


def _ball_fraction(
    distances: np.ndarray, eps: float, d: int, confidence: float
) -> Tuple[float, float]:
    if distances.size == 0:
        raise EmptySample("No samples to estimate a ball density from")
    volume = ball_volume(d, eps)
    p = float(np.count_nonzero(distances <= eps)) / distances.size
    ci = critical_z(confidence) * math.sqrt(p * (1.0 - p) / distances.size)
    return p / volume, ci / volume


def estimate_ball_density(
    samples: SampleSet, center, eps: float, confidence: float = 0.99
) -> Tuple[float, float]:
    """``P(|X - center| <= eps) / V_eps`` estimated from the terminal values."""
    if not eps > 0:
        raise DomainError(f"Ball radius must be positive, got {eps}")
    if samples.terminal_values.size == 0:
        raise EmptySample("No samples to estimate a ball density from")
    return _ball_fraction(
        terminal_norms(samples, center), eps, samples.d, confidence
    )


def radial_ball_density(
    samples_Z: SampleSet, d: int, eps: float, confidence: float = 0.99
) -> Tuple[float, float]:
    """Ball density at the origin from squared-radius samples, ``P(Z <= eps^2) / V_eps``."""
    if not eps > 0:
        raise DomainError(f"Ball radius must be positive, got {eps}")
    z = samples_Z.terminal_values[:, 0]
    return _ball_fraction(np.sqrt(np.maximum(z, 0.0)), eps, d, confidence)


def classify(
    alpha: float, rho_hat: float, beta: float, ci: float, margin: float
) -> Verdict:
    """Verdict for one grid point."""
    if rho_hat < alpha - margin:
        return Verdict.VIOLATION_LOW
    if rho_hat > beta + margin:
        return Verdict.VIOLATION_HIGH
    if 2.0 * ci > beta - alpha:
        return Verdict.INCONCLUSIVE
    return Verdict.INSIDE


def bin_averaged_bounds(
    t: float,
    C: float,
    xs,
    bin_width: float,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> Tuple[np.ndarray, np.ndarray]:
    """alpha1 and beta1 averaged over ``[x - h/2, x + h/2]`` for every x.

    Since alpha1 <= rho <= beta1 pointwise, the averages bracket the expected
    histogram value exactly.
    """
    xs = np.asarray(xs, dtype=float)
    sub = np.round(xs[:, None] + bin_width * _BIN_OFFSETS[None, :], 12)
    alphas, betas = bounds_grid(t, C, sub.ravel(), cfg)
    shape = sub.shape
    return alphas.reshape(shape) @ _BIN_WEIGHTS, betas.reshape(shape) @ _BIN_WEIGHTS


def _drift_bound(drift: DriftFunctional, C: Optional[float]) -> float:
    bound = drift.bound_C if C is None else C
    if not bound > 0:
        raise DomainError("Sandwich checks need a positive drift bound")
    if drift.bound_C > bound:
        raise DomainError(
            f"Drift bound {drift.bound_C} exceeds the bound {bound} of the envelopes"
        )
    return bound


def sandwich_check(
    drift: DriftFunctional,
    x0,
    cfg: SimConfig,
    grid=None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    bounds_cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    confidence: float = 0.99,
    threads: int = 1,
    C: Optional[float] = None,
    samples: Optional[SampleSet] = None,
) -> SandwichReport:
    """Simulate ``drift`` from ``x0`` and compare the density with the bounds.

    In d = 1 the grid is a list of points and the bounds are ``alpha1``/``beta1``
    at ``x - x0``. For d > 1 the grid holds d-vectors, the estimate is the ball
    density with radius ``bin_width / 2`` and the bounds are the product bounds.
    """
    bound = _drift_bound(drift, C)
    start = np.atleast_1d(np.asarray(x0, dtype=float))
    if samples is None:
        samples = simulate(drift, start, cfg, threads)
    t = cfg.t_end
    bias = bound * bin_width
    points: List[SandwichPoint] = []

    if cfg.d == 1:
        xs = default_grid() if grid is None else np.asarray(grid, dtype=float)
        estimate = estimate_density_1d(samples, xs, bin_width, confidence)
        alphas, betas = bounds_grid(t, bound, xs - start[0], bounds_cfg)
        alpha_bins, beta_bins = bin_averaged_bounds(
            t, bound, xs - start[0], bin_width, bounds_cfg
        )
        for x, a, rho, b, ci, a_bin, b_bin in zip(
            xs, alphas, estimate.values, betas, estimate.half_widths, alpha_bins, beta_bins
        ):
            margin = float(ci) + bias
            points.append(
                SandwichPoint(
                    x=[float(x)],
                    alpha=float(a),
                    rho_hat=float(rho),
                    beta=float(b),
                    ci=float(ci),
                    margin=margin,
                    verdict=classify(a, rho, b, ci, margin),
                    alpha_bin=float(a_bin),
                    beta_bin=float(b_bin),
                )
            )
    else:
        if grid is None:
            raise DomainError("A grid of d-vectors is required for d > 1")
        eps = 0.5 * bin_width
        for point in np.atleast_2d(np.asarray(grid, dtype=float)):
            query = BoundsQuery(d=cfg.d, t=t, C=bound, x=list(point - start))
            a = alpha_d_lower(query, bounds_cfg)
            b = beta_d_upper(query, bounds_cfg)
            rho, ci = estimate_ball_density(samples, point, eps, confidence)
            margin = ci + bias
            points.append(
                SandwichPoint(
                    x=[float(v) for v in point],
                    alpha=a,
                    rho_hat=rho,
                    beta=b,
                    ci=ci,
                    margin=margin,
                    verdict=classify(a, rho, b, ci, margin),
                )
            )

    report = SandwichReport(
        drift=drift.description,
        t=t,
        C=bound,
        x0=[float(v) for v in start],
        bin_width=bin_width,
        n_paths=samples.n,
        points=points,
    )
    logger.info("Sandwich for %s at t=%g: %s", drift.description, t, report.summary())
    return report


def _clear_of_bounds(point: SandwichPoint) -> bool:
    if point.alpha_bin is None:
        lo, hi, slack = point.alpha, point.beta, point.margin
    else:
        (lo, hi), slack = point.bin_bounds, point.ci
    return point.rho_hat - lo > slack and hi - point.rho_hat > slack


def gap_fraction(report: SandwichReport) -> float:
    """Share of points with positive estimate strictly away from both bounds.

    In d = 1 the estimate is compared with the bin-averaged bounds, so the
    confidence half-width is the only slack.
    """
    covered = [p for p in report.points if p.rho_hat > 0]
    if not covered:
        return 0.0
    return sum(_clear_of_bounds(p) for p in covered) / len(covered)


def _with_horizon(cfg: SimConfig, t: float) -> SimConfig:
    if cfg.t_end == t:
        return cfg
    return SimConfig(**{**cfg.model_dump(), "t_end": t})


def attainment_check(
    kind: WorstKind,
    report: SandwichReport,
    x_star: float,
    bounds_cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> AttainmentCheck:
    """Whether the sandwich of a worst-case drift touches its bound at x*.

    ``-C sgn(x - x*)`` (minus) touches ``beta1(t, C, x* - x0)``;
    ``+C sgn(x - x*)`` (plus) touches ``alpha1(t, C, x* - x0)``. The histogram
    estimates the extremal density averaged over its bin,
    ``P(|Y_{C(x0 - x*)}(t C^2)| <= C h / 2) / h``, so the estimate must fall
    within the confidence half-width of that average.
    """
    kind = WorstKind(kind)
    distance = x_star - report.x0[0]
    if kind == WorstKind.MINUS:
        name, target = "beta", beta1(report.t, report.C, distance, bounds_cfg)
    else:
        name, target = "alpha", alpha1(report.t, report.C, distance, bounds_cfg)
    C, h = report.C, report.bin_width
    bin_target = (
        ball_probability(report.t * C * C, 0.5 * C * h, -C * distance, kind, bounds_cfg).value
        / h
    )
    point = report.nearest(x_star)
    check = AttainmentCheck(
        bound=name,
        x_star=x_star,
        target=target,
        rho_hat=point.rho_hat,
        margin=point.ci,
        attained=abs(point.rho_hat - bin_target) <= point.ci,
        bin_target=bin_target,
    )
    logger.debug(
        "%s at x*=%g: bound %.6f, bin average %.6f, estimate %.6f +- %.6f",
        name, x_star, target, bin_target, point.rho_hat, point.ci,
    )
    return check


def optimality_check(
    x_star: float,
    t: float,
    C: float,
    cfg: SimConfig,
    x0: float = 0.0,
    grid=None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    bounds_cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    confidence: float = 0.99,
    threads: int = 1,
    raise_on_failure: bool = False,
) -> OptimalityReport:
    """Check that ``-C sgn(x - x*)`` touches beta and ``+C sgn(x - x*)`` touches alpha at x*.

    The touching values are ``beta1(t, C, x* - x0)`` and ``alpha1(t, C, x* - x0)``.

    Raises:
        AttainmentFailed: with ``raise_on_failure`` and a bound not touched.
    """
    if cfg.d != 1:
        raise DomainError("Attainment is checked in one dimension")
    sim = _with_horizon(cfg, t)
    xs = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if not np.any(np.isclose(xs, x_star)):
        xs = np.sort(np.append(xs, x_star))

    reports = {}
    for kind in (WorstKind.MINUS, WorstKind.PLUS):
        drift = worst_drift(kind, C, x_star)
        reports[kind] = sandwich_check(
            drift, [x0], sim, xs, bin_width, bounds_cfg, confidence, threads, C
        )

    upper = attainment_check(
        WorstKind.MINUS, reports[WorstKind.MINUS], x_star, bounds_cfg
    )
    lower = attainment_check(WorstKind.PLUS, reports[WorstKind.PLUS], x_star, bounds_cfg)
    report = OptimalityReport(
        x_star=x_star,
        t=t,
        C=C,
        upper=upper,
        lower=lower,
        upper_sandwich=reports[WorstKind.MINUS],
        lower_sandwich=reports[WorstKind.PLUS],
    )
    for check in (upper, lower):
        logger.info(
            "Attainment of %s at x*=%g: estimate %.6f, target %.6f, margin %.2g",
            check.bound,
            x_star,
            check.rho_hat,
            check.target,
            check.margin,
        )
    if raise_on_failure and not report.passed:
        failed = upper if not upper.attained else lower
        raise AttainmentFailed(
            f"{failed.bound} not attained at x*={x_star}: estimate {failed.rho_hat:.6g} is "
            f"{abs(failed.rho_hat - failed.reference):.3g} from {failed.reference:.6g}, "
            f"beyond the margin {failed.margin:.3g}",
            gap=failed.gap,
        )
    return report


def estimate_extremal_density(
    kind: WorstKind,
    x,
    t: float,
    C: float,
    cfg: SimConfig,
    eps: float = 0.1,
    confidence: float = 0.99,
    threads: int = 1,
) -> Tuple[float, float]:
    """Estimate ``beta_{d,t,C}(x)`` (minus) or ``alpha_{d,t,C}(x)`` (plus).

    By space-time scaling the bound equals ``C^d`` times the density at the
    origin of ``Y_{Cx}`` at time ``t C^2``, estimated with a ball of radius
    ``C eps``. The step size ``cfg.dt`` is taken on the scaled clock.
    """
    if not C > 0:
        raise DomainError(f"Drift bound must be positive, got {C}")
    start = C * np.atleast_1d(np.asarray(x, dtype=float))
    sim = _with_horizon(cfg, t * C * C)
    samples = simulate_worst(kind, start, sim, threads)
    value, ci = estimate_ball_density(
        samples, np.zeros(cfg.d), C * eps, confidence
    )
    scale = C**cfg.d
    return value * scale, ci * scale


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov–Smirnov distance."""
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("Kolmogorov–Smirnov needs two nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)


def ks_critical_value(n: int, m: int, level: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value at significance ``level``."""
    if n < 1 or m < 1:
        raise DomainError("Sample sizes must be positive")
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def plus_prefactor_mc_check(
    samples: SampleSet,
    x: float,
    grid=None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    confidence: float = 0.99,
) -> Dict[int, int]:
    """Grid points where each Y+ density variant disagrees with a histogram.

    ``samples`` must hold ``Y+_x`` at ``samples.config.t_end``. Returns the
    number of points outside CI plus bias allowance, per prefactor variant.
    """
    t = samples.config.t_end
    xs = np.linspace(-3.0, 3.0, 61) if grid is None else np.asarray(grid, float)
    estimate = estimate_density_1d(samples, xs, bin_width, confidence)
    misses: Dict[int, int] = {}
    for variant in PlusPrefactor:
        exact = np.array([p_density(t, x, y, cfg, prefactor=variant) for y in xs])
        slack = estimate.half_widths + bin_width
        misses[variant.value] = int(
            np.count_nonzero(np.abs(estimate.values - exact) > slack)
        )
    logger.info("Y+ prefactor check against Monte Carlo: %s", misses)
    return misses


def lamperti_sandwich_check(
    model: LampertiModel,
    drift: DriftFunctional,
    cfg: SimConfig,
    grid=None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    bounds_cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    confidence: float = 0.99,
    threads: int = 1,
) -> SandwichReport:
    """Sandwich check for ``dX = b dt + sigma(X) dW`` against ``lamperti_bounds``."""
    if drift.bound_C > model.drift_bound:
        raise DomainError(
            f"Drift bound {drift.bound_C} exceeds the model's bound {model.drift_bound}"
        )
    t = cfg.t_end
    xs = default_grid() + model.x0 if grid is None else np.asarray(grid, float)
    samples = simulate_diffusion(drift, model.sigma, model.x0, cfg, threads)
    estimate = estimate_density_1d(samples, xs, bin_width, confidence)
    bias = max(model.drift_constant, 1.0) * bin_width / model.epsilon_lower
    points = []
    for x, rho, ci in zip(xs, estimate.values, estimate.half_widths):
        a, b = lamperti_bounds(model, t, float(x), bounds_cfg)
        margin = float(ci) + bias
        points.append(
            SandwichPoint(
                x=[float(x)],
                alpha=a,
                rho_hat=float(rho),
                beta=b,
                ci=float(ci),
                margin=margin,
                verdict=classify(a, rho, b, ci, margin),
            )
        )
    report = SandwichReport(
        drift=samples.drift_description,
        t=t,
        C=model.drift_constant,
        x0=[model.x0],
        bin_width=bin_width,
        n_paths=samples.n,
        points=points,
    )
    logger.info("Lamperti sandwich: %s", report.summary())
    return report
