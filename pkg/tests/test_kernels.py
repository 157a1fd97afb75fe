import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from vortonlab.kernels import (
    KernelSpec,
    composite_profile_direct,
    kernel_directional_derivative,
    kernel_matrices,
    kernel_matrix,
    radial_pair,
)
from vortonlab.specfun import CapabilityError, DomainError, green_eval
from vortonlab.spectral import fourier_symbol, inverse_symbol

SMOOTH = [
    KernelSpec(),
    KernelSpec(n=2, eta=0.7),
    KernelSpec(n=2, eta=1.0, p=4, normalization="operator"),
    KernelSpec(n=3, eta=0.8, gaussian_limit=True, normalization="operator"),
    KernelSpec(n=3, eps=0.5, eta=1.0),
    KernelSpec(n=2, eps=0.8, eta=0.6, normalization="operator"),
]
IDS = [s.label() for s in SMOOTH]


def test_kappa_for_unit_peak_p3():
    assert radial_pair(KernelSpec()).kappa == pytest.approx(2 / 3, abs=2e-16)


def test_taylor_coefficients_at_origin():
    rk = radial_pair(KernelSpec())
    rho = np.linspace(1e-3, 0.05, 60)
    c1 = np.polynomial.polynomial.polyfit(rho, rk.k1(rho) - rk.kappa, 4)
    c2 = np.polynomial.polynomial.polyfit(rho, rk.k2(rho) - rk.kappa, 4)
    assert c1[2] == pytest.approx(-1 / 5, abs=1e-4)
    assert c2[2] == pytest.approx(-2 / 5, abs=1e-4)


def test_unit_peak_p3_profiles_closed_form():
    # K1 = (2/3) M, K2 = G - M/3 with M the closed-form ball mean
    rk = radial_pair(KernelSpec())
    x = np.array([0.7, 2.0, 5.0])
    M = 24 / x**3 * (1 - np.exp(-x) * (1 + x + x**2 / 2 + x**3 / 8))
    G = (1 + x) * np.exp(-x)
    assert np.allclose(rk.k1(x), 2 / 3 * M, rtol=1e-14)
    assert np.allclose(rk.k2(x), G - M / 3, rtol=1e-14)


@pytest.mark.parametrize("spec", SMOOTH, ids=IDS)
def test_profile_derivatives_match_finite_differences(spec):
    rk = radial_pair(spec)
    r = np.array([0.05, 0.4, 1.3, 3.0])
    h = 1e-5
    for f, df in ((rk.k1, rk.dk1), (rk.k2, rk.dk2)):
        fd = (f(r + h) - f(r - h)) / (2 * h)
        assert np.allclose(df(r), fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("spec", SMOOTH, ids=IDS)
def test_gap_is_difference_quotient(spec):
    rk = radial_pair(spec)
    r = np.array([0.3, 1.0, 2.5])
    assert np.allclose(rk.gap(r), (rk.k1(r) - rk.k2(r)) / r, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("spec", SMOOTH, ids=IDS)
def test_profiles_bundle_matches_pieces(spec):
    rk = radial_pair(spec)
    r = np.geomspace(1e-3, 10, 25)
    b = rk.profiles(r)
    pieces = (rk.k1(r), rk.k2(r), rk.dk1(r), rk.dk2(r), rk.gap(r))
    for u, v in zip(b, pieces):
        assert np.allclose(u, v, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("spec", SMOOTH[:4], ids=IDS[:4])
def test_deficits_are_cancellation_free(spec):
    rk = radial_pair(spec)
    r = np.array([0.3, 1.0, 4.0])
    d1, d2 = rk.deficits(r)
    assert np.allclose(d1, rk.kappa - rk.k1(r), rtol=1e-10)
    assert np.allclose(d2, rk.kappa - rk.k2(r), rtol=1e-10)
    tiny = np.array([1e-7, 1e-6])
    d1, d2 = rk.deficits(tiny)
    # clean quadratic onset, where subtraction would return pure rounding noise
    assert d1[1] / d1[0] == pytest.approx(100.0, rel=1e-6)
    assert d2[1] / d2[0] == pytest.approx(100.0, rel=1e-6)


def test_unit_peak_deficit_asymptotics():
    rk = radial_pair(KernelSpec())
    d1, d2 = rk.deficits(np.array([1e-7]))
    assert d1[0] == pytest.approx(1e-14 / 5, rel=1e-6)
    assert d2[0] == pytest.approx(2e-14 / 5, rel=1e-6)


@pytest.mark.parametrize("spec", SMOOTH, ids=IDS)
def test_kernel_at_origin_and_symmetry(spec):
    rk = radial_pair(spec)
    n = spec.n
    assert np.allclose(kernel_matrix(rk, np.zeros(n)), rk.kappa * np.eye(n))
    x = np.linspace(0.3, 1.1, n)
    K = kernel_matrix(rk, x)
    assert np.allclose(K, K.T)
    assert np.all(np.linalg.eigvalsh(K) > -1e-12) or spec.eps > 0


@given(
    x=arrays(float, 3, elements=st.floats(-3, 3)),
    rot=st.integers(0, 10_000),
)
def test_rotation_equivariance(x, rot):
    rk = radial_pair(KernelSpec())
    R = Rotation.random(random_state=rot).as_matrix()
    lhs = kernel_matrix(rk, R @ x)
    rhs = R @ kernel_matrix(rk, x) @ R.T
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_directional_derivative_matches_finite_difference():
    rk = radial_pair(KernelSpec())
    x = np.array([0.4, -0.3, 0.9])
    v = np.array([0.2, 0.7, -0.5])
    h = 1e-5
    fd = (kernel_matrix(rk, x + h * v) - kernel_matrix(rk, x - h * v)) / (2 * h)
    assert np.allclose(kernel_directional_derivative(rk, x, v), fd, atol=1e-9)
    assert np.allclose(kernel_directional_derivative(rk, np.zeros(3), v), 0)


@pytest.mark.parametrize("spec", [KernelSpec(), KernelSpec(n=2, eta=0.7)], ids=lambda s: s.label())
def test_eps_zero_kernel_columns_are_divergence_free(spec):
    rk = radial_pair(spec)
    n = spec.n
    x = np.linspace(0.35, 0.9, n)
    h = 1e-4
    for col in range(n):
        a = np.eye(n)[col]
        div = 0.0
        for j in range(n):
            e = np.eye(n)[j] * h
            div += (kernel_matrix(rk, x + e) @ a - kernel_matrix(rk, x - e) @ a)[j] / (2 * h)
        assert abs(div) < 1e-8


@pytest.mark.parametrize("rho", [0.2, 1.0, 3.0])
def test_tabulated_kernel_matches_direct_inversion(rho):
    spec = KernelSpec(n=3, eps=0.5, eta=1.0)
    rk = radial_pair(spec)
    g2, q = composite_profile_direct(spec, rho)
    # K1 = G + g2'' and K2 = G + g2'/r with g2'' from the screened Laplacian
    G = float(green_eval(spec.profile(), rho))
    k1 = G + spec.eps**2 * g2 - G - (spec.n - 1) * q
    k2 = G + q
    assert float(rk.k1(rho)) == pytest.approx(k1, rel=1e-7)
    assert float(rk.k2(rho)) == pytest.approx(k2, rel=1e-7)


def test_singular_kernel_and_euler_refusals():
    rk = radial_pair(KernelSpec(n=3, eps=1.0, eta=0.0))
    assert rk.singular
    with pytest.raises(DomainError):
        kernel_matrices(rk, np.zeros((1, 3)))
    with pytest.raises(CapabilityError):
        radial_pair(KernelSpec(n=3, eps=0.0, eta=0.0))


@pytest.mark.parametrize(
    "kwargs,exc",
    [({"n": 4}, CapabilityError), ({"eta": -1.0}, DomainError), ({"p": 2.5}, DomainError), ({"normalization": "x"}, CapabilityError)],
)
def test_spec_validation(kwargs, exc):
    with pytest.raises(exc):
        KernelSpec(**kwargs)


def test_kernel_matrix_shape_check():
    with pytest.raises(DomainError):
        kernel_matrix(KernelSpec(), np.zeros(2))


# ---------------------------------------------------------------------------
# Fourier symbols


def test_symbol_times_inverse_is_identity():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        spec = KernelSpec(n=2, eps=rng.uniform(0.1, 3), eta=rng.uniform(0, 1), p=int(rng.integers(1, 6)), normalization="operator")
        xi = rng.normal(size=(20, 2)) * 3
        K, L = fourier_symbol(spec, xi), inverse_symbol(spec, xi)
        scale = np.linalg.norm(K, axis=(1, 2)) * np.linalg.norm(L, axis=(1, 2))
        err = np.linalg.norm(K @ L - np.eye(2), axis=(1, 2)) / scale
        worst = max(worst, err.max())
    assert worst < 1e-15


def test_euler_symbol_is_leray_projector():
    xi = np.array([[1.0, 2.0], [0.0, -3.0], [0.5, 0.5]])
    P = fourier_symbol(KernelSpec(n=2, eps=0.0, eta=0.0), xi)
    assert np.allclose(P @ P, P)
    assert np.allclose(P, np.swapaxes(P, -1, -2))
    assert np.allclose(np.einsum("kij,kj->ki", P, xi), 0)
    assert np.allclose(fourier_symbol(KernelSpec(n=2, eps=0.0, eta=0.0), np.zeros(2)), np.eye(2))


def test_inverse_symbol_requires_eps():
    with pytest.raises(CapabilityError):
        inverse_symbol(KernelSpec(n=2, eps=0.0, eta=0.5), np.ones(2))


def test_smoothing_symbol_limits():
    spec = KernelSpec(n=2, eta=0.4, p=3, normalization="operator")
    k = np.array([0.0, 1.0, 5.0])
    assert np.allclose(spec.smoothing_symbol(k), (1 + 0.16 * k**2 / 3) ** -3)
    assert np.allclose(KernelSpec(n=2, eta=0.0).smoothing_symbol(k), 1.0)
    assert math.isclose(float(spec.smoothing_symbol(0.0)), 1.0)
