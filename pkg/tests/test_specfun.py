import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from vortonlab.specfun import (
    BesselOverflowWarning,
    CapabilityError,
    DomainError,
    GreensProfile,
    PoleError,
    ball_mean_and_gap,
    bessel_k,
    green_derivative,
    green_eval,
    mean_over_ball,
    radial_bundle,
    radial_fourier_inverse,
)

X = np.concatenate([np.geomspace(1e-3, 60.0, 150), [1.999999, 2.0, 2.000001]])


def _kv_exact(nu, x):
    with mpmath.workdps(40):
        return np.array([float(mpmath.besselk(nu, xi)) for xi in np.atleast_1d(x)])


@pytest.mark.parametrize("nu", [0.0, 0.3, 1.0, 1.7, 2.5, 4.2, 7.9])
def test_bessel_k_matches_high_precision(nu):
    assert np.max(np.abs(bessel_k(nu, X) / _kv_exact(nu, X) - 1)) < 5e-14


@pytest.mark.parametrize("nu", [0.0, 0.3, 1.0, 1.7, 4.2])
def test_bessel_k_close_to_scipy(nu):
    assert np.max(np.abs(bessel_k(nu, X) / special.kv(nu, X) - 1)) < 1e-12


@pytest.mark.parametrize("nu", [0.6, 1.3, 3.1])
def test_bessel_k_large_argument_scaled(nu):
    x = np.geomspace(2.0, 700.0, 300)
    ours = bessel_k(nu, x) * np.exp(x)
    # scipy's kve loses ~1e-13 right at x = 2; elsewhere it is a tight reference
    assert np.max(np.abs(ours[x > 2.05] / special.kve(nu, x[x > 2.05]) - 1)) < 1e-14
    with mpmath.workdps(40):
        exact = np.array([float(mpmath.besselk(nu, xi) * mpmath.exp(xi)) for xi in x[::10]])
    assert np.max(np.abs(ours[::10] / exact - 1)) < 5e-15


def test_half_integer_closed_forms():
    x = np.geomspace(1e-3, 50.0, 200)
    e = np.exp(-x) * np.sqrt(math.pi / (2 * x))
    assert np.allclose(bessel_k(0.5, x), e, rtol=1e-14, atol=0)
    assert np.allclose(bessel_k(1.5, x), e * (1 + 1 / x), rtol=1e-14, atol=0)
    assert np.allclose(bessel_k(2.5, x), e * (1 + 3 / x + 3 / x**2), rtol=1e-14, atol=0)


def test_bessel_k_is_even_in_order():
    assert bessel_k(-1.3, 0.7) == bessel_k(1.3, 0.7)


def test_bessel_k_scalar_in_scalar_out():
    assert isinstance(bessel_k(1.0, 2.0), float)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_bessel_k_rejects_nonpositive(x):
    with pytest.raises(DomainError):
        bessel_k(1.0, x)


def test_bessel_k_overflow_saturates_with_warning():
    with pytest.warns(BesselOverflowWarning):
        v = bessel_k(200.3, 1e-3)
    assert v == np.finfo(float).max


@given(nu=st.floats(0.05, 6.0), x=st.floats(0.01, 40.0))
def test_bessel_recurrence(nu, x):
    lhs = bessel_k(nu + 1, x)
    rhs = bessel_k(abs(nu - 1), x) + 2 * nu / x * bessel_k(nu, x)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# ---------------------------------------------------------------------------
# Green's profiles


def test_unit_peak_p3_closed_form():
    prof = GreensProfile("unit_peak_p3", 3, eta=1.3)
    r = np.linspace(0, 10, 50)
    x = r / 1.3
    assert np.allclose(green_eval(prof, r), (1 + x) * np.exp(-x), rtol=1e-15, atol=0)


def test_matern_unit_peak_matches_unit_peak_p3():
    a = GreensProfile("matern_G_eta_p", 3, eta=0.8, p=3, normalization="unit_peak")
    b = GreensProfile("unit_peak_p3", 3, eta=0.8)
    r = np.geomspace(1e-4, 20, 60)
    assert np.allclose(green_eval(a, r), green_eval(b, r), rtol=1e-13)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("normalization", ["operator", "unit_mass"])
def test_matern_profiles_have_unit_mass(n, normalization):
    prof = GreensProfile("matern_G_eta_p", n, eta=0.7, p=3, normalization=normalization)
    area = 2 * math.pi if n == 2 else 4 * math.pi
    mass, _ = integrate.quad(lambda r: area * r ** (n - 1) * green_eval(prof, r), 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    assert mass == pytest.approx(1.0, rel=1e-10)
    assert prof.total_mass() == pytest.approx(1.0, rel=1e-14)


def test_operator_normalization_length():
    prof = GreensProfile("matern_G_eta_p", 3, eta=1.2, p=4, normalization="operator")
    assert prof.length == pytest.approx(1.2 / 2.0)
    assert prof.symbol(2.0) == pytest.approx((1 + 1.44 * 4 / 4) ** -4)


@pytest.mark.parametrize("eps,r", [(0.1, 0.1), (0.5, 2.0), (5.0, 5.0), (2.0, 0.3)])
def test_yukawa_3d_closed_form(eps, r):
    prof = GreensProfile("yukawa_H_eps", 3, eps=eps)
    assert green_eval(prof, r) == pytest.approx(math.exp(-eps * r) / (4 * math.pi * r), rel=1e-12)


def test_yukawa_2d_is_k0():
    prof = GreensProfile("yukawa_H_eps", 2, eps=0.8)
    r = np.geomspace(1e-2, 10, 30)
    assert np.allclose(green_eval(prof, r), special.k0(0.8 * r) / (2 * math.pi), rtol=1e-12)


def test_yukawa_pole():
    with pytest.raises(PoleError):
        green_eval(GreensProfile("yukawa_H_eps", 3, eps=1.0), 0.0)


@pytest.mark.parametrize(
    "prof",
    [
        GreensProfile("matern_G_eta_p", 3, eta=1.0, p=3, normalization="unit_peak"),
        GreensProfile("matern_G_eta_p", 2, eta=0.6, p=3, normalization="operator"),
        GreensProfile("matern_G_eta_p", 2, eta=1.0, p=4, normalization="unit_mass"),
        GreensProfile("gaussian_limit", 3, eta=0.5),
        GreensProfile("yukawa_H_eps", 3, eps=0.7),
    ],
    ids=lambda p: f"{p.kind}-n{p.n}-{p.normalization}",
)
def test_green_derivative_matches_finite_difference(prof):
    r = np.array([0.05, 0.3, 1.0, 2.5])
    h = 1e-5
    fd = (green_eval(prof, r + h) - green_eval(prof, r - h)) / (2 * h)
    assert np.allclose(green_derivative(prof, r), fd, rtol=1e-7, atol=1e-10)


def test_profile_validation():
    with pytest.raises(CapabilityError):
        GreensProfile("nonsense")
    with pytest.raises(DomainError):
        GreensProfile("yukawa_H_eps", 3, eps=0.0)
    with pytest.raises(DomainError):
        GreensProfile("matern_G_eta_p", 3, eta=1.0, p=2.5)
    with pytest.raises(CapabilityError):
        GreensProfile("matern_G_eta_p", 4, eta=1.0)


# ---------------------------------------------------------------------------
# Ball means


def _quad_mean(prof, r):
    n = prof.n
    val, _ = integrate.quad(lambda t: green_eval(prof, t) * t ** (n - 1), 0, r, epsabs=0, epsrel=1e-13, limit=200)
    return n * val / r**n


@pytest.mark.parametrize("r", [0.05, 0.3, 0.49, 0.51, 1.0, 4.0, 20.0])
def test_unit_peak_mean_over_ball_vs_quadrature(r):
    prof = GreensProfile("unit_peak_p3", 3, eta=1.0)
    assert mean_over_ball(prof, r) == pytest.approx(_quad_mean(prof, r), rel=1e-12)


@pytest.mark.parametrize(
    "prof",
    [
        GreensProfile("matern_G_eta_p", 2, eta=0.6, p=3, normalization="operator"),
        GreensProfile("matern_G_eta_p", 3, eta=1.0, p=4, normalization="unit_peak"),
        GreensProfile("gaussian_limit", 2, eta=0.5),
    ],
    ids=lambda p: f"{p.kind}-n{p.n}",
)
def test_ball_mean_and_gap_vs_quadrature(prof):
    r = np.array([1e-3, 0.1, 0.4, 1.0, 3.0])
    M, D = ball_mean_and_gap(prof, r)
    ref = np.array([_quad_mean(prof, ri) for ri in r])
    assert np.allclose(M, ref, rtol=1e-11)
    assert np.allclose(D, (green_eval(prof, r) - ref) / r, rtol=1e-7, atol=1e-12)


def test_ball_mean_limits_at_origin():
    prof = GreensProfile("matern_G_eta_p", 3, eta=1.0, p=3, normalization="unit_peak")
    M, D = ball_mean_and_gap(prof, np.array([0.0]))
    assert M[0] == pytest.approx(1.0)
    assert D[0] == 0.0


def test_mean_over_ball_rejects_zero_radius():
    with pytest.raises(DomainError):
        mean_over_ball(GreensProfile("unit_peak_p3", 3, eta=1.0), 0.0)


@pytest.mark.parametrize(
    "prof",
    [
        GreensProfile("matern_G_eta_p", 3, eta=1.0, p=3, normalization="unit_peak"),
        GreensProfile("matern_G_eta_p", 2, eta=0.5, p=3, normalization="operator"),
        GreensProfile("matern_G_eta_p", 2, eta=1.0, p=5, normalization="unit_mass"),
    ],
    ids=lambda p: f"n{p.n}-p{p.p}",
)
def test_radial_bundle_agrees_with_pieces(prof):
    r = np.concatenate([[0.0], np.geomspace(1e-4, 15, 80)])
    G, dG, M, D = radial_bundle(prof, r)
    M2, D2 = ball_mean_and_gap(prof, r)
    assert np.allclose(G[1:], green_eval(prof, r[1:]), rtol=1e-13, atol=1e-300)
    assert np.allclose(dG[1:], green_derivative(prof, r[1:]), rtol=1e-11, atol=1e-300)
    assert np.allclose(M, M2, rtol=1e-12, atol=1e-300)
    assert np.allclose(D, D2, rtol=1e-9, atol=1e-14)


# ---------------------------------------------------------------------------
# Fourier inversion


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("r", [0.2, 1.0, 3.0])
def test_radial_fourier_inverse_recovers_profile(n, r):
    prof = GreensProfile("matern_G_eta_p", n, eta=1.0, p=3, normalization="operator")
    val = radial_fourier_inverse(prof.symbol, n, r, scale=1 / prof.length)
    assert val == pytest.approx(green_eval(prof, r), rel=1e-9)


def test_radial_fourier_inverse_yukawa_3d():
    eps = 0.8
    val = radial_fourier_inverse(lambda k: 1 / (eps**2 + k**2), 3, 1.5, scale=eps)
    assert val == pytest.approx(math.exp(-eps * 1.5) / (4 * math.pi * 1.5), rel=1e-8)


def test_gaussian_limit_symbol():
    prof = GreensProfile("gaussian_limit", 3, eta=0.7, normalization="operator")
    k = np.linspace(0, 5, 11)
    assert np.allclose(prof.symbol(k), np.exp(-0.49 * k**2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert green_eval(prof, 0.0) == pytest.approx((2 * math.sqrt(math.pi) * 0.7) ** -3)
