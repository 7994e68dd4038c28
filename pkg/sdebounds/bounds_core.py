"""Closed forms and convolution formulas for the optimal density bounds.

The worst-case processes are ``dY = +sgn(Y) dt + dW`` (Y+, fleeing the
origin) and ``dY = -sgn(Y) dt + dW`` (Y-, attracted to it). Their transition
densities ``p_t(x, y)`` and ``q_t(x, y)`` split into the part killed at the
first visit of the origin and a convolution of the origin densities with the
hitting-time law. The one-dimensional bounds are

    alpha_{t,C}(x) = C p_{tC^2}(Cx, 0),    beta_{t,C}(x) = C q_{tC^2}(Cx, 0).

All exponential products are formed in log space and exponentiated once.
"""

import functools
import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import special

from .exceptions import DomainError, LampertiError, SdeBoundsError
from .models import (
    BoundsQuery,
    HittingKernel,
    HittingKind,
    LampertiModel,
    PlusPrefactor,
    QuadratureConfig,
    QuadratureResult,
    SingularEnd,
    WorstKind,
)
from .numerics import (
    DEFAULT_QUADRATURE,
    INV_SQRT_2PI,
    LOG_SQRT_2PI,
    integrate_singular,
    integrate_sum,
    std_normal_cdf,
    std_normal_logcdf,
    std_normal_pdf,
    unit_ball_volume,
)

logger = logging.getLogger(__name__)

# Nested integrals (over y of a convolution in s) cannot resolve the outer
# integral below the inner noise floor.
OUTER_QUADRATURE = QuadratureConfig(abs_tol=1e-8, rel_tol=1e-8, max_subdivisions=200)

NORMALIZATION_TOLERANCE = 1e-6
TRUNCATION_WIDTHS = 12.0
HITTING_BREAKPOINT_RATIO = 4.0
# Below this distance the start is indistinguishable from the origin.
ORIGIN_CUTOFF = 1e-12


def sgn(v: float) -> float:
    """Generalized signum, zero at the origin."""
    if v == 0:
        return 0.0
    return math.copysign(1.0, v)


def _require_time(t: float, name: str = "t") -> None:
    if not t > 0:
        raise DomainError(f"{name} must be positive, got {t}")


# --------------------------------------------------------------------------
# Hitting times of the origin
# --------------------------------------------------------------------------


def _validate_hitting(x: float, s: float) -> None:
    if x == 0:
        raise DomainError("Hitting densities are undefined for a start at the origin")
    _require_time(s, "s")


def log_rho_tau(x: float, s: float) -> float:
    ax = abs(x)
    return math.log(ax) - LOG_SQRT_2PI - 1.5 * math.log(s) - (ax - s) ** 2 / (2 * s)


def log_rho_theta(x: float, s: float) -> float:
    ax = abs(x)
    return math.log(ax) - LOG_SQRT_2PI - 1.5 * math.log(s) - (ax + s) ** 2 / (2 * s)


def rho_tau(x: float, s: float) -> float:
    """Density at s of the first time Y-_x hits the origin (inverse Gaussian)."""
    _validate_hitting(x, s)
    return math.exp(log_rho_tau(x, s))


def rho_theta(x: float, s: float) -> float:
    """Density at s of the first time Y+_x hits the origin; total mass exp(-2|x|)."""
    _validate_hitting(x, s)
    return math.exp(log_rho_theta(x, s))


def hitting_density(kernel: HittingKernel, s: float) -> float:
    """Density of the hitting time described by ``kernel``."""
    if kernel.kind == HittingKind.TAU_MINUS:
        return rho_tau(kernel.x, s)
    return rho_theta(kernel.x, s)


def hitting_mass(
    kernel: HittingKernel, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> QuadratureResult:
    """Probability that the origin is hit in finite time, by quadrature."""
    if kernel.degenerate:
        return QuadratureResult(value=1.0, error_estimate=0.0)
    return integrate_singular(
        lambda s: hitting_density(kernel, s) if s > 0 else 0.0,
        0.0,
        math.inf,
        SingularEnd.NONE,
        cfg,
    )


# --------------------------------------------------------------------------
# Densities started at the origin
# --------------------------------------------------------------------------


def log_p0(t: float, y):
    """Log of p_t(0, y); the e^{2|y|} Phi(.) term is folded into erfcx."""
    ay = np.abs(y)
    bracket = INV_SQRT_2PI / math.sqrt(t) - 0.5 * special.erfcx(
        (ay + t) / math.sqrt(2.0 * t)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -((ay - t) ** 2) / (2.0 * t) + np.log(np.maximum(bracket, 0.0))
    return out


def log_q0(t: float, y):
    """Log of q_t(0, y)."""
    ay = np.abs(y)
    sqrt_t = math.sqrt(t)
    first = -((t + ay) ** 2) / (2.0 * t) - LOG_SQRT_2PI - math.log(sqrt_t)
    second = -2.0 * ay + std_normal_logcdf((t - ay) / sqrt_t)
    return np.logaddexp(first, second)


def p0(t: float, y):
    """Density of Y+_0(t) at y."""
    _require_time(t)
    out = np.exp(log_p0(t, y))
    return float(out) if np.ndim(out) == 0 else out


def q0(t: float, y):
    """Density of Y-_0(t) at y."""
    _require_time(t)
    out = np.exp(log_q0(t, y))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_density(t: float, x):
    """Density of W(t) at x, the zero-drift reference."""
    _require_time(t)
    out = std_normal_pdf(np.asarray(x) / math.sqrt(t)) / math.sqrt(t)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Off-origin transition densities
# --------------------------------------------------------------------------


def _killed_term(t: float, x: float, y: float, drift_sign: float, factor: float):
    """Density at y of the process killed at its first visit of the origin."""
    if x * y < 0 or y == 0:
        return 0.0
    shift = sgn(x) * (x - y) + drift_sign * t
    return (
        factor
        * INV_SQRT_2PI
        / math.sqrt(t)
        * math.exp(-(shift**2) / (2.0 * t))
        * -math.expm1(-2.0 * x * y / t)
    )


def _hitting_breakpoints(x: float, half: float) -> list:
    """0, x^2, 4x^2, 16x^2, ... up to ``half``.

    The hitting density peaks near s = x^2 / 3 with a width of order x^2.
    """
    points = [0.0]
    s = x * x
    while s < half:
        points.append(s)
        s *= HITTING_BREAKPOINT_RATIO
    points.append(half)
    return points


def _convolve_with_hitting(
    t: float,
    x: float,
    log_origin: Callable[[float], float],
    log_hit: Callable[[float, float], float],
    cfg: QuadratureConfig,
) -> QuadratureResult:
    """int_0^t origin(t - s) hit(x, s) ds, split at t/2.

    The left half is cut at geometric breakpoints around the hitting spike
    and vanishes superexponentially at s = 0; the right half carries the
    (t - s)^{-1/2} singularity of the origin density at y = 0.
    """

    def integrand(s: float) -> float:
        if not 0.0 < s < t:
            return 0.0
        return math.exp(log_origin(t - s) + log_hit(x, s))

    half = 0.5 * t
    points = _hitting_breakpoints(x, half)
    pieces = [(integrand, a, b, SingularEnd.NONE) for a, b in zip(points, points[1:])]
    pieces.append((integrand, half, t, SingularEnd.RIGHT))
    return integrate_sum(pieces, cfg)


def q_density(
    t: float, x: float, y: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> float:
    """Transition density q_t(x, y) of Y-."""
    _require_time(t)
    if abs(x) < ORIGIN_CUTOFF:
        return q0(t, y)
    killed = _killed_term(t, x, y, -1.0, 1.0)
    conv = _convolve_with_hitting(
        t, x, lambda tau: float(log_q0(tau, y)), log_rho_tau, cfg
    )
    return killed + conv.value


def p_density(
    t: float,
    x: float,
    y: float,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    prefactor: Optional[PlusPrefactor] = None,
) -> float:
    """Transition density p_t(x, y) of Y+.

    The explicit term's prefactor is not hard-coded: without an explicit
    ``prefactor`` the variant accepted by :func:`resolve_plus_prefactor` is used.
    """
    _require_time(t)
    if abs(x) < ORIGIN_CUTOFF:
        return p0(t, y)
    if prefactor is None:
        prefactor = resolve_plus_prefactor(cfg)
    killed = _killed_term(t, x, y, 1.0, float(PlusPrefactor(prefactor).value))
    conv = _convolve_with_hitting(
        t, x, lambda tau: float(log_p0(tau, y)), log_rho_theta, cfg
    )
    return killed + conv.value


def transition_density(
    kind: WorstKind,
    t: float,
    x: float,
    y: float,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> float:
    """Transition density of Y+ or Y-."""
    if WorstKind(kind) == WorstKind.MINUS:
        return q_density(t, x, y, cfg)
    return p_density(t, x, y, cfg)


def _interval_mass(
    density: Callable[[float], float],
    lo: float,
    hi: float,
    cfg: QuadratureConfig,
) -> QuadratureResult:
    # the densities have a kink at the origin
    if lo < 0.0 < hi:
        return integrate_sum(
            [
                (density, lo, 0.0, SingularEnd.NONE),
                (density, 0.0, hi, SingularEnd.NONE),
            ],
            cfg,
        )
    return integrate_singular(density, lo, hi, SingularEnd.NONE, cfg)


def density_mass(
    density: Callable[[float], float],
    t: float,
    x: float,
    cfg: QuadratureConfig = OUTER_QUADRATURE,
) -> QuadratureResult:
    """Total mass of a transition density of Y+- started at x.

    The line is truncated TRUNCATION_WIDTHS standard deviations beyond the
    largest possible drift displacement; the Gaussian tail bound of what is
    cut off is added to the error estimate.
    """
    half = abs(x) + t + TRUNCATION_WIDTHS * math.sqrt(t)
    result = _interval_mass(density, -half, half, cfg)
    tail = 2.0 * float(std_normal_cdf(-TRUNCATION_WIDTHS))
    return result.model_copy(update={"error_estimate": result.error_estimate + tail})


def plus_density_mass(
    t: float,
    x: float,
    prefactor: PlusPrefactor,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> QuadratureResult:
    """Total mass of p_t(x, .) under one prefactor variant."""
    return density_mass(
        lambda y: p_density(t, x, y, cfg, prefactor=prefactor), t, x, OUTER_QUADRATURE
    )


@functools.lru_cache(maxsize=8)
def resolve_plus_prefactor(
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
    t: float = 1.0,
    x: float = 0.5,
) -> PlusPrefactor:
    """Pick the explicit-term prefactor of p_t(x, y) whose density normalizes."""
    masses = {v: plus_density_mass(t, x, v, cfg).value for v in PlusPrefactor}
    accepted = [
        v for v, m in masses.items() if abs(m - 1.0) <= NORMALIZATION_TOLERANCE
    ]
    logger.debug("Y+ density mass by prefactor: %s", masses)
    if len(accepted) != 1:
        raise SdeBoundsError(
            "Cannot resolve the Y+ density prefactor: masses "
            + ", ".join(f"{v.value}: {m:.9f}" for v, m in masses.items())
        )
    return accepted[0]


def ball_probability(
    t: float,
    eps: float,
    x: float,
    kind: WorstKind,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> QuadratureResult:
    """P(|Y_x(t)| <= eps) for the worst-case process of the given kind."""
    _require_time(t)
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    kind = WorstKind(kind)
    if abs(x) < ORIGIN_CUTOFF:
        origin = q0 if kind == WorstKind.MINUS else p0
        return _interval_mass(lambda y: origin(t, y), -eps, eps, cfg)
    return _interval_mass(
        lambda y: transition_density(kind, t, x, y, cfg), -eps, eps, OUTER_QUADRATURE
    )


# --------------------------------------------------------------------------
# One-dimensional bounds
# --------------------------------------------------------------------------


def _require_bounds_args(t: float, C: float) -> None:
    _require_time(t)
    if not C > 0:
        raise DomainError(f"Drift bound C must be positive, got {C}")


def alpha1_at_origin(t: float, C: float) -> float:
    """Peak of the lower bound, phi(C sqrt t)/sqrt t - C Phi(-C sqrt t)."""
    _require_bounds_args(t, C)
    # C p_{tC^2}(0, 0) in the erfcx form; the naive difference cancels for large C^2 t
    return C * math.exp(float(log_p0(t * C * C, 0.0)))


def beta1_at_origin(t: float, C: float) -> float:
    """Peak of the upper bound, phi(C sqrt t)/sqrt t + C Phi(C sqrt t)."""
    _require_bounds_args(t, C)
    root = C * math.sqrt(t)
    return float(std_normal_pdf(root)) / math.sqrt(t) + C * float(std_normal_cdf(root))


def alpha1(
    t: float, C: float, x: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> float:
    """Optimal lower bound alpha_{t,C}(x) for densities with drift bounded by C."""
    _require_bounds_args(t, C)
    if abs(C * x) < ORIGIN_CUTOFF:
        return alpha1_at_origin(t, C)
    horizon = t * C * C
    conv = _convolve_with_hitting(
        horizon, C * x, lambda tau: float(log_p0(tau, 0.0)), log_rho_theta, cfg
    )
    return C * conv.value


def _log_beta_peak(tau: float) -> float:
    """log(phi(sqrt tau)/sqrt tau + Phi(sqrt tau)), the integrand factor of beta."""
    root = math.sqrt(tau)
    return float(
        np.logaddexp(
            -0.5 * tau - LOG_SQRT_2PI - math.log(root), std_normal_logcdf(root)
        )
    )


def beta1(
    t: float, C: float, x: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> float:
    """Optimal upper bound beta_{t,C}(x) for densities with drift bounded by C."""
    _require_bounds_args(t, C)
    if abs(C * x) < ORIGIN_CUTOFF:
        return beta1_at_origin(t, C)
    horizon = t * C * C
    conv = _convolve_with_hitting(horizon, C * x, _log_beta_peak, log_rho_tau, cfg)
    return C * conv.value


def bounds_grid(
    t: float, C: float, xs, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> Tuple[np.ndarray, np.ndarray]:
    """alpha1 and beta1 over a grid, each |x| evaluated once."""
    xs = np.asarray(xs, dtype=float)
    magnitudes = np.unique(np.abs(xs))
    alpha = {m: alpha1(t, C, float(m), cfg) for m in magnitudes}
    beta = {m: beta1(t, C, float(m), cfg) for m in magnitudes}
    abs_xs = np.abs(xs)
    return (
        np.array([alpha[m] for m in abs_xs]),
        np.array([beta[m] for m in abs_xs]),
    )


# --------------------------------------------------------------------------
# d-dimensional product bounds
# --------------------------------------------------------------------------


def alpha_d_lower(q: BoundsQuery, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Computable lower bound on alpha_{d,t,C}(x) from one-dimensional factors."""
    factor = 2.0**q.d / (unit_ball_volume(q.d) * q.d ** (q.d / 2.0))
    return factor * math.prod(alpha1(q.t, q.C, xi, cfg) for xi in q.x)


def beta_d_upper(q: BoundsQuery, cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Computable upper bound on beta_{d,t,C}(x) from one-dimensional factors."""
    factor = 2.0**q.d / unit_ball_volume(q.d)
    return factor * math.prod(beta1(q.t, q.C, xi, cfg) for xi in q.x)


# --------------------------------------------------------------------------
# State-dependent diffusion coefficient
# --------------------------------------------------------------------------


def _checked_sigma(model: LampertiModel) -> Callable[[float], float]:
    def sigma(z: float) -> float:
        value = float(model.sigma(z))
        if not value >= model.epsilon_lower:
            raise LampertiError(
                f"sigma({z:g}) = {value:g} is below the lower bound "
                f"{model.epsilon_lower:g}"
            )
        return value

    return sigma


def check_lamperti_model(model: LampertiModel, samples) -> None:
    """Check the lower bound and Lipschitz bound of sigma on sampled points."""
    sigma = _checked_sigma(model)
    points = np.sort(np.asarray(samples, dtype=float))
    values = np.array([sigma(z) for z in points])
    dz = np.diff(points)
    mask = dz > 0
    if np.any(mask):
        slopes = np.abs(np.diff(values))[mask] / dz[mask]
        worst = float(slopes.max())
        if worst > model.sigma_lipschitz * (1.0 + 1e-9) + 1e-12:
            raise LampertiError(
                f"sigma has slope {worst:g} on sampled points, above the "
                f"Lipschitz bound {model.sigma_lipschitz:g}"
            )


def lamperti_transform(
    model: LampertiModel, x: float, cfg: QuadratureConfig = DEFAULT_QUADRATURE
) -> float:
    """F(x) - F(x0) with F(z) = int_0^z du / sigma(u)."""
    sigma = _checked_sigma(model)
    if x == model.x0:
        return 0.0
    lo, hi = sorted((model.x0, x))
    result = integrate_singular(lambda u: 1.0 / sigma(u), lo, hi, SingularEnd.NONE, cfg)
    return result.value if x > model.x0 else -result.value


def lamperti_bounds(
    model: LampertiModel,
    t: float,
    x: float,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> Tuple[float, float]:
    """Lower and upper density bounds at x for dX = b dt + sigma(X) dW."""
    _require_time(t)
    check_lamperti_model(model, np.linspace(min(model.x0, x), max(model.x0, x), 65))
    sigma_x = _checked_sigma(model)(x)
    distance = abs(lamperti_transform(model, x, cfg))
    C = model.drift_constant
    if C == 0:
        gauss = gaussian_density(t, distance) / sigma_x
        return gauss, gauss
    return (
        alpha1(t, C, distance, cfg) / sigma_x,
        beta1(t, C, distance, cfg) / sigma_x,
    )
