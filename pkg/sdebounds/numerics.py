"""Special functions and adaptive quadrature with endpoint singularities.

Every formula module evaluates its densities through these helpers. The
normal law comes from ``scipy.special`` (``ndtr`` is erfc based, so the lower
tail keeps full relative precision) and integrals are handed to QUADPACK's
adaptive Gauss–Kronrod routine after a substitution that removes integrable
``1/sqrt`` endpoint singularities and maps infinite upper limits to ``(0, 1]``.
"""

import logging
import math
from typing import Callable

import numpy as np
from scipy import integrate, special

from .exceptions import DomainError, ToleranceNotMet
from .models import QuadratureConfig, QuadratureResult, SingularEnd

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

DEFAULT_QUADRATURE = QuadratureConfig()


def std_normal_pdf(x):
    """Standard normal density."""
    return np.exp(-0.5 * np.square(x)) * INV_SQRT_2PI


def std_normal_logpdf(x):
    """Logarithm of the standard normal density."""
    return -0.5 * np.square(x) - LOG_SQRT_2PI


def std_normal_cdf(x):
    """Standard normal distribution function."""
    return special.ndtr(x)


def std_normal_logcdf(x):
    """Logarithm of the standard normal distribution function, stable in the tail."""
    return special.log_ndtr(x)


def scaled_upper_tail(z):
    """``exp(z**2 / 2) * Phi(-z)``, finite for large positive ``z``."""
    return 0.5 * special.erfcx(np.asarray(z) / math.sqrt(2.0))


def ball_volume(d: int, eps: float) -> float:
    """Volume of the d-dimensional Euclidean ball of radius eps."""
    if d < 1:
        raise DomainError(f"Dimension must be at least 1, got {d}")
    if not eps > 0:
        raise DomainError(f"Radius must be positive, got {eps}")
    if d == 1:
        return 2.0 * eps
    log_volume = 0.5 * d * math.log(math.pi) + d * math.log(eps)
    return math.exp(log_volume - special.gammaln(0.5 * d + 1.0))


def unit_ball_volume(d: int) -> float:
    """Volume C_d of the d-dimensional unit ball."""
    return ball_volume(d, 1.0)


def integrate_singular(
    f: Callable[[float], float],
    a: float,
    b: float,
    singular_end: SingularEnd = SingularEnd.NONE,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> QuadratureResult:
    """Integrate f over (a, b) with an optional 1/sqrt endpoint singularity.

    With ``singular_end`` set, the substitution ``u = sqrt(b - s)`` (or
    ``u = sqrt(s - a)``) turns an integrand behaving like ``(b - s)**-0.5``
    into a smooth one. An infinite ``b`` is mapped to ``(0, 1]`` through
    ``u = 1 / (1 + s - a)``.

    Raises:
        DomainError: if ``a >= b`` or the substitution does not apply.
        ToleranceNotMet: if the subdivision budget is exhausted; the best
            estimate travels on the exception.
    """
    singular_end = SingularEnd(singular_end)
    if not a < b:
        raise DomainError(f"Integration requires a < b, got a={a}, b={b}")
    if math.isinf(a):
        raise DomainError("Lower integration limit must be finite")

    if math.isinf(b):
        if singular_end == SingularEnd.RIGHT:
            raise DomainError("An infinite endpoint cannot carry the singularity")
        if singular_end == SingularEnd.LEFT:
            # split so the singular piece is finite
            head = integrate_singular(f, a, a + 1.0, SingularEnd.LEFT, cfg)
            tail = integrate_singular(f, a + 1.0, b, SingularEnd.NONE, cfg)
            return _combine(head, tail)

        def mapped(u: float) -> float:
            return f(a + 1.0 / u - 1.0) / (u * u)

        return _adaptive(mapped, 0.0, 1.0, cfg)

    if singular_end == SingularEnd.RIGHT:

        def mapped(u: float) -> float:
            return 2.0 * u * f(b - u * u)

        return _adaptive(mapped, 0.0, math.sqrt(b - a), cfg)

    if singular_end == SingularEnd.LEFT:

        def mapped(u: float) -> float:
            return 2.0 * u * f(a + u * u)

        return _adaptive(mapped, 0.0, math.sqrt(b - a), cfg)

    return _adaptive(f, a, b, cfg)


def integrate_sum(
    pieces: list,
    cfg: QuadratureConfig = DEFAULT_QUADRATURE,
) -> QuadratureResult:
    """Integrate several ``(f, a, b, singular_end)`` pieces and add them up."""
    total = QuadratureResult(value=0.0, error_estimate=0.0, subdivisions_used=0)
    for f, a, b, end in pieces:
        total = _combine(total, integrate_singular(f, a, b, end, cfg))
    return total


def _combine(left: QuadratureResult, right: QuadratureResult) -> QuadratureResult:
    return QuadratureResult(
        value=left.value + right.value,
        error_estimate=left.error_estimate + right.error_estimate,
        subdivisions_used=left.subdivisions_used + right.subdivisions_used,
        converged=left.converged and right.converged,
    )


def _adaptive(
    f: Callable[[float], float], a: float, b: float, cfg: QuadratureConfig
) -> QuadratureResult:
    out = integrate.quad(
        f,
        a,
        b,
        epsabs=cfg.abs_tol,
        epsrel=cfg.rel_tol,
        limit=cfg.max_subdivisions,
        full_output=1,
    )
    value, error = float(out[0]), abs(float(out[1]))
    subdivisions = int(out[2].get("last", 0))
    target = max(cfg.abs_tol, cfg.rel_tol * abs(value))
    # QUADPACK appends a message only when it flags a problem
    if len(out) > 3 or not math.isfinite(value) or error > target:
        result = QuadratureResult(
            value=value,
            error_estimate=error if math.isfinite(error) else math.inf,
            subdivisions_used=subdivisions,
            converged=False,
        )
        message = out[3] if len(out) > 3 else "error estimate above target"
        logger.warning(
            "Quadrature on [%g, %g] missed tolerance: value=%.12g err=%.3g (%s)",
            a,
            b,
            value,
            error,
            str(message).splitlines()[0],
        )
        raise ToleranceNotMet(
            f"Quadrature on [{a}, {b}] did not reach tolerance {target:.3g}: "
            f"error estimate {error:.3g}",
            result=result,
        )
    return QuadratureResult(
        value=value, error_estimate=error, subdivisions_used=subdivisions
    )
