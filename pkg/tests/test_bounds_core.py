"""Tests for the closed forms and convolution formulas of the density bounds."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from sdebounds.bounds_core import (
    alpha1,
    alpha_d_lower,
    ball_probability,
    beta1,
    beta_d_upper,
    bounds_grid,
    density_mass,
    gaussian_density,
    hitting_mass,
    lamperti_bounds,
    p0,
    p_density,
    plus_density_mass,
    q0,
    q_density,
    resolve_plus_prefactor,
    rho_tau,
    rho_theta,
)
from sdebounds.exceptions import DomainError, LampertiError
from sdebounds.models import (
    BoundsQuery,
    HittingKernel,
    HittingKind,
    LampertiModel,
    PlusPrefactor,
    QuadratureConfig,
    WorstKind,
)

phi = stats.norm.pdf
Phi = stats.norm.cdf

TAIL_CFG = QuadratureConfig(abs_tol=1e-30, rel_tol=1e-10)


def beta_peak(t, C):
    return phi(C * math.sqrt(t)) / math.sqrt(t) + C * Phi(C * math.sqrt(t))


def alpha_peak(t, C):
    return phi(C * math.sqrt(t)) / math.sqrt(t) - C * Phi(-C * math.sqrt(t))


def test_closed_form_peaks():
    """Test the maxima at the origin against their closed forms."""
    assert beta1(1.0, 1.0, 0.0) == pytest.approx(1.0833154706, abs=1e-10)
    assert alpha1(1.0, 1.0, 0.0) == pytest.approx(0.0833154706, abs=1e-10)
    for t, C in [(0.25, 1.0), (0.5, 2.0), (2.0, 0.5)]:
        assert beta1(t, C, 0.0) == pytest.approx(beta_peak(t, C), abs=1e-10)
        assert alpha1(t, C, 0.0) == pytest.approx(alpha_peak(t, C), abs=1e-10)


def test_beta_peak_at_quarter_time():
    """Test beta_{1/4,1}(0) = 2 phi(1/2) + Phi(1/2)."""
    assert beta1(0.25, 1.0, 0.0) == pytest.approx(2 * phi(0.5) + Phi(0.5), abs=1e-10)


def test_alpha_tends_to_gaussian_peak_for_small_drift():
    """Test alpha_{1,C}(0) approaches 1/sqrt(2 pi) as C shrinks."""
    assert alpha1(1.0, 1e-6, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-5)


def test_origin_densities():
    """Test p0 and q0 at the origin and their normalization."""
    assert q0(1.0, 0.0) == pytest.approx(phi(1) + Phi(1), abs=1e-12)
    assert q0(4.0, 0.0) == pytest.approx(0.5 * phi(2) + Phi(2), abs=1e-12)
    assert p0(1.0, 0.0) == pytest.approx(0.0833154706, abs=1e-10)

    for density in (q0, p0):
        mass = integrate.quad(lambda y: density(1.0, y), -30, 0)[0] + integrate.quad(
            lambda y: density(1.0, y), 0, 30
        )[0]
        assert mass == pytest.approx(1.0, abs=1e-9)


def test_p0_does_not_overflow_far_out():
    """Test p0 stays finite and nonnegative for large |y|."""
    values = p0(1.0, np.array([50.0, 200.0, 800.0]))
    assert np.all(np.isfinite(values))
    assert np.all(values >= 0)


def test_hitting_densities():
    """Test the hitting-time laws: full mass for tau, exp(-2|x|) for theta."""
    assert hitting_mass(HittingKernel(kind=HittingKind.TAU_MINUS, x=0.7)).value == pytest.approx(
        1.0, abs=1e-9
    )
    theta = HittingKernel(kind=HittingKind.THETA_PLUS, x=-0.5)
    assert hitting_mass(theta).value == pytest.approx(math.exp(-1.0), abs=1e-9)
    assert theta.atom_at_infinity == pytest.approx(1 - math.exp(-1.0))
    assert rho_tau(1.0, 0.5) > rho_theta(1.0, 0.5)


def test_hitting_density_rejects_origin():
    """Test the hitting densities are undefined for a start at 0."""
    with pytest.raises(DomainError, match="origin"):
        rho_tau(0.0, 1.0)
    with pytest.raises(DomainError, match="positive"):
        rho_theta(1.0, 0.0)


def test_q_density_reduces_at_origin():
    """Test q_t(0, y) is the origin density."""
    assert q_density(1.0, 0.0, 0.0) == pytest.approx(1.0833154706, abs=1e-10)
    assert p_density(1.0, 0.0, 0.0) == pytest.approx(0.0833154706, abs=1e-10)


def test_q_density_symmetries():
    """Test q_t(x, 0) = q_t(-x, 0) and reversibility for the speed measure exp(-2|y|)."""
    for t, x in [(0.5, 0.4), (1.0, 1.2)]:
        assert q_density(t, x, 0.0) == pytest.approx(q_density(t, -x, 0.0), rel=1e-12)
    forward = math.exp(-0.8) * q_density(0.5, 0.4, 0.2)
    backward = math.exp(-0.4) * q_density(0.5, 0.2, 0.4)
    assert forward == pytest.approx(backward, abs=1e-8)
    assert q_density(0.5, 0.4, 0.2) == pytest.approx(q_density(0.5, -0.4, -0.2), rel=1e-12)


def test_q_density_normalizes():
    """Test q_1(0.7, .) and q_{0.5}(0.3, .) integrate to one."""
    for t, x in [(1.0, 0.7), (0.5, 0.3), (1.0, 1.0)]:
        mass = density_mass(lambda y: q_density(t, x, y), t, x)
        assert mass.value == pytest.approx(1.0, abs=1e-6)


def test_plus_prefactor_resolves_by_normalization():
    """Test exactly one explicit-term prefactor gives a probability density."""
    assert resolve_plus_prefactor() == PlusPrefactor.ONE
    one = plus_density_mass(1.0, 0.5, PlusPrefactor.ONE)
    two = plus_density_mass(1.0, 0.5, PlusPrefactor.TWO)
    assert one.value == pytest.approx(1.0, abs=1e-6)
    assert abs(two.value - 1.0) > 1e-2


def test_p_density_normalizes_and_is_nonnegative():
    """Test the accepted Y+ density is a probability density."""
    for t, x in [(0.5, 0.3), (1.0, 1.0)]:
        mass = density_mass(lambda y: p_density(t, x, y), t, x)
        assert mass.value == pytest.approx(1.0, abs=1e-6)
    grid = np.linspace(-3, 3, 7)
    assert all(p_density(1.0, x, y) >= 0 for x in grid for y in grid)


def test_beta_convolution_matches_transition_density():
    """Test the beta convolution agrees with C q_{tC^2}(Cx, 0) on a grid."""
    for t in (0.25, 0.5, 0.75, 1.0, 2.0):
        for x in np.linspace(-2.0, 2.0, 9):
            assert beta1(t, 1.0, x) == pytest.approx(q_density(t, x, 0.0), abs=1e-7)
    assert beta1(0.5, 2.0, 0.3) == pytest.approx(2.0 * q_density(2.0, 0.6, 0.0), abs=1e-7)


def test_alpha_convolution_matches_transition_density():
    """Test alpha1 agrees with C p_{tC^2}(Cx, 0)."""
    for t, x in [(0.5, 0.4), (1.0, 1.5)]:
        assert alpha1(t, 1.0, x) == pytest.approx(p_density(t, x, 0.0), abs=1e-7)


def test_scaling_identity():
    """Test beta_{t,C}(x) = C beta_{tC^2,1}(Cx)."""
    t, C, x = 0.5, 2.0, 0.3
    assert beta1(t, C, x) == pytest.approx(C * beta1(t * C * C, 1.0, C * x), rel=1e-9)
    assert alpha1(t, C, x) == pytest.approx(C * alpha1(t * C * C, 1.0, C * x), rel=1e-9)


def test_symmetry_monotonicity_and_ordering():
    """Test the bounds are even, nonincreasing on [0, 5] and ordered."""
    xs = np.linspace(0.0, 5.0, 11)
    for t, C in [(1.0, 1.0), (0.25, 1.0)]:
        lower, upper = bounds_grid(t, C, xs)
        assert np.all(lower > 0)
        assert np.all(lower <= upper)
        assert np.all(np.diff(upper) <= 1e-8)
        assert np.all(np.diff(lower) <= 1e-8)
        for x in (0.5, 2.0):
            assert alpha1(t, C, x) == pytest.approx(alpha1(t, C, -x), rel=1e-12)
            assert beta1(t, C, x) == pytest.approx(beta1(t, C, -x), rel=1e-12)


def test_gaussian_lies_between_bounds():
    """Test the zero drift density is sandwiched by the bounds."""
    xs = np.linspace(-3, 3, 13)
    for C in (0.5, 1.0):
        for t in (0.25, 1.0):
            lower, upper = bounds_grid(t, C, xs)
            gauss = gaussian_density(t, xs)
            assert np.all(lower <= gauss + 1e-12)
            assert np.all(gauss <= upper + 1e-12)


def test_tail_decay():
    """Test beta_{1,1}(x) decays like exp(-x^2/2 + x)."""
    xs = [5.0, 6.0, 7.0, 8.0]
    scaled = [beta1(1.0, 1.0, x, TAIL_CFG) * math.exp(x * x / 2 - x) for x in xs]
    assert max(scaled) / min(scaled) < 3.0
    per_x = [s / x for s, x in zip(scaled, xs)]
    assert all(b < a for a, b in zip(per_x, per_x[1:]))


@pytest.mark.parametrize("C", [0.01, 1.0, 5.0, 20.0])
@pytest.mark.parametrize("x", [1e-6, 1e-4, 1e-3])
def test_bounds_near_origin(C, x):
    """Test alpha/beta next to the origin against the speed-measure closed forms.

    Reversibility at y = 0 gives q_t(x, 0) = e^{2|x|} q_t(0, x) and
    p_t(x, 0) = e^{-2|x|} p_t(0, x).
    """
    horizon = C * C
    upper = C * math.exp(2 * C * x) * q0(horizon, C * x)
    lower = C * math.exp(-2 * C * x) * p0(horizon, C * x)

    assert beta1(1.0, C, x) == pytest.approx(upper, rel=1e-7)
    assert beta1(1.0, C, -x) == pytest.approx(upper, rel=1e-7)
    assert alpha1(1.0, C, x) == pytest.approx(lower, rel=1e-6, abs=1e-7)


def test_transition_densities_near_origin():
    """Test q and p started next to the origin approach the origin densities."""
    for x in (1e-6, -1e-4):
        for y in (0.0, 0.3, -0.7):
            assert q_density(1.0, x, y) == pytest.approx(q0(1.0, y), abs=1e-3)
            assert p_density(1.0, x, y) == pytest.approx(p0(1.0, y), abs=1e-3)


def test_chapman_kolmogorov():
    """Test q_1(0.4, 0) = int q_{1/2}(z, 0) q_{1/2}(0.4, z) dz."""

    def integrand(z):
        return q_density(0.5, z, 0.0) * q_density(0.5, 0.4, z)

    pieces = [(-8.0, 0.0), (0.0, 0.4), (0.4, 8.0)]
    total = sum(integrate.quad(integrand, a, b, epsabs=1e-9)[0] for a, b in pieces)
    assert total == pytest.approx(q_density(1.0, 0.4, 0.0), abs=1e-4)


def test_product_bounds():
    """Test the d-dimensional product bounds."""
    q1 = BoundsQuery(d=1, t=1.0, C=1.0, x=[0.4])
    assert beta_d_upper(q1) == pytest.approx(beta1(1.0, 1.0, 0.4), rel=1e-14)
    assert alpha_d_lower(q1) == pytest.approx(alpha1(1.0, 1.0, 0.4), rel=1e-14)

    q2 = BoundsQuery(d=2, t=1.0, C=1.0, x=[0.0, 0.0])
    assert beta_d_upper(q2) == pytest.approx(4 / math.pi * q0(1.0, 0.0) ** 2, rel=1e-10)
    assert beta_d_upper(q2) == pytest.approx(1.4942, abs=1e-4)

    for x in ([0.0, 0.0], [1.0, 0.0], [0.5, -1.5]):
        q = BoundsQuery(d=2, t=1.0, C=1.0, x=x)
        assert alpha_d_lower(q) <= beta_d_upper(q)


def test_bounds_query_validation():
    """Test malformed queries are rejected at construction."""
    with pytest.raises(ValueError, match="Dimension"):
        BoundsQuery(d=0, t=1.0, C=1.0, x=[])
    with pytest.raises(ValueError, match="coordinates"):
        BoundsQuery(d=2, t=1.0, C=1.0, x=[0.0])
    with pytest.raises(DomainError):
        alpha1(1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        beta1(-1.0, 1.0, 0.0)


def test_ball_probability_matches_origin_density():
    """Test P(|Y-_0(1)| <= 0.25) against direct integration of q0."""
    expected = integrate.quad(lambda y: q0(1.0, y), -0.25, 0.25, points=[0.0])[0]
    assert ball_probability(1.0, 0.25, 0.0, WorstKind.MINUS).value == pytest.approx(
        expected, abs=1e-9
    )
    plus = ball_probability(1.0, 0.25, 0.0, WorstKind.PLUS).value
    assert 0 < plus < expected


def test_lamperti_identity_transform():
    """Test sigma = 1 reduces to the additive-noise bounds."""
    model = LampertiModel(sigma=lambda z: 1.0, drift_bound=1.0, epsilon_lower=1.0, x0=0.2)
    lower, upper = lamperti_bounds(model, 1.0, 1.0)
    assert lower == pytest.approx(alpha1(1.0, 1.0, 0.8), rel=1e-8)
    assert upper == pytest.approx(beta1(1.0, 1.0, 0.8), rel=1e-8)


def test_lamperti_constant_sigma_scaling():
    """Test sigma = 2 gives F(x) = x/2 and C = 1/2."""
    model = LampertiModel(sigma=lambda z: 2.0, drift_bound=1.0, epsilon_lower=2.0)
    lower, upper = lamperti_bounds(model, 1.0, 0.6)
    assert lower == pytest.approx(alpha1(1.0, 0.5, 0.3) / 2, rel=1e-8)
    assert upper == pytest.approx(beta1(1.0, 0.5, 0.3) / 2, rel=1e-8)


def test_lamperti_lipschitz_sigma():
    """Test a Lipschitz sigma gives ordered positive bounds at the start."""
    model = LampertiModel(
        sigma=lambda z: 1.0 + 0.1 * float(np.clip(z, -1.0, 1.0)),
        sigma_lipschitz=0.1,
        drift_bound=1.0,
        epsilon_lower=0.9,
    )
    assert model.drift_constant == pytest.approx(1 / 0.9 + 0.05)
    lower, upper = lamperti_bounds(model, 1.0, 0.0)
    assert 0 < lower < upper


def test_lamperti_without_drift_is_gaussian():
    """Test C = 0 falls back to the Gaussian density."""
    model = LampertiModel(sigma=lambda z: 1.0, epsilon_lower=1.0)
    lower, upper = lamperti_bounds(model, 1.0, 0.5)
    assert lower == upper == pytest.approx(gaussian_density(1.0, 0.5))


def test_lamperti_rejects_small_sigma():
    """Test sigma values below the lower bound are rejected."""
    model = LampertiModel(sigma=lambda z: 0.5, drift_bound=1.0, epsilon_lower=1.0)
    with pytest.raises(LampertiError, match="below the lower bound"):
        lamperti_bounds(model, 1.0, 0.5)


def test_lamperti_rejects_steep_sigma():
    """Test a sigma steeper than its declared Lipschitz bound is rejected."""
    model = LampertiModel(
        sigma=lambda z: 1.0 + abs(z), sigma_lipschitz=0.1, drift_bound=1.0, epsilon_lower=1.0
    )
    with pytest.raises(LampertiError, match="Lipschitz"):
        lamperti_bounds(model, 1.0, 1.0)
