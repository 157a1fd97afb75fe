import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vortonlab.kernels import KernelSpec
from vortonlab.specfun import CapabilityError
from vortonlab.twovorton import (
    CAPTURE_THRESHOLD,
    REDUCED_TO_FULL_ENERGY,
    HyperboloidPoint,
    Orbit,
    ReducedTwoVortonState,
    classify_by_integration,
    classify_orbit,
    energy_contours,
    energy_from_invariants,
    hyperboloid_point,
    incoming_state,
    integrate_reduced,
    reconstruct,
    reduce,
    reduced_energy,
    reduced_rhs,
)
from vortonlab.vortons import VortonSystem, integrate, system_energy, vorton_rhs

SPECS = [KernelSpec(), KernelSpec(n=2, eta=0.7, normalization="operator"), KernelSpec(n=3, eps=0.5, eta=1.0)]


def random_pair(spec, seed, mbar=True):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(2, spec.n)) * 1.5
    m = rng.normal(size=(2, spec.n))
    if not mbar:
        m[1] = -m[0]
    return VortonSystem(P, m, spec)


@given(seed=st.integers(0, 10_000))
def test_reduce_reconstruct_roundtrip(seed):
    state = random_pair(KernelSpec(), seed)
    red = reduce(state)
    center = state.positions.mean(axis=0)
    back = reconstruct(red, center)
    assert np.allclose(back.positions, state.positions, atol=1e-14)
    assert np.allclose(back.momenta, state.momenta, atol=1e-14)


def test_reduce_needs_two_vortons():
    with pytest.raises(ValueError):
        reduce(VortonSystem(np.zeros((3, 3)), np.zeros((3, 3)), KernelSpec()))


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label())
def test_reduced_rhs_matches_full_system(spec):
    state = random_pair(spec, 1)
    dP, dm = vorton_rhs(state)
    rdP, rdm = reduced_rhs(reduce(state))
    assert np.allclose(rdP, dP[1] - dP[0], atol=1e-13)
    assert np.allclose(rdm, dm[1] - dm[0], atol=1e-13)
    # the total momentum is constant
    assert np.allclose(dm[0] + dm[1], 0, atol=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label())
def test_geometric_and_coordinate_forms_agree(spec):
    red = reduce(random_pair(spec, 2))
    for a, b in zip(reduced_rhs(red), reduced_rhs(red, form="coordinate")):
        assert np.allclose(a, b, atol=1e-13)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label())
def test_reduced_energy_is_twice_full_energy(spec):
    for seed in range(5):
        state = random_pair(spec, seed)
        assert reduced_energy(reduce(state)) == pytest.approx(REDUCED_TO_FULL_ENERGY * system_energy(state), rel=1e-12)


def test_reduced_energy_at_coincidence():
    spec = KernelSpec()
    red = ReducedTwoVortonState(np.zeros(3), [1.0, 2.0, 0.0], [0.5, 0.0, 0.0], spec)
    assert reduced_energy(red) == pytest.approx(2 * system_energy(reconstruct(red)))


@pytest.mark.parametrize("spec", SPECS[:2], ids=lambda s: s.label())
def test_energy_from_invariants(spec):
    for seed in range(5):
        red = reduce(random_pair(spec, seed, mbar=False))
        c = float(red.deltaP @ red.deltam)
        E = float(energy_from_invariants(spec, red.rho, c, red.omega_norm))
        assert E == pytest.approx(reduced_energy(red), rel=1e-12)


def test_omega_norm_is_area_form():
    red = ReducedTwoVortonState([2.0, 0, 0], [1.0, 3.0, 0], np.zeros(3), KernelSpec())
    assert red.omega_norm == pytest.approx(0.5 * 2 * 3)


@given(seed=st.integers(0, 10_000))
def test_hyperboloid_constraint(seed):
    red = reduce(random_pair(KernelSpec(), seed, mbar=False))
    pt = hyperboloid_point(red)
    assert abs(pt.constraint_residual()) <= 1e-12 * (pt.rho * pt.dm_norm) ** 2
    assert pt.sheet_sign == (1 if pt.c2 >= 0 else -1)


def test_hyperboloid_rejects_off_surface_points():
    with pytest.raises(ValueError):
        HyperboloidPoint(rho=1.0, c2=0.5, dm_norm=1.0, sheet_sign=1, omega_norm=1.0)


@pytest.mark.parametrize("spec", SPECS[:2], ids=lambda s: s.label())
def test_reduced_integration_matches_full_integration(spec):
    state = random_pair(spec, 3)
    full = integrate(state, 4.0, tol=1e-12, n_out=5)
    red = integrate_reduced(reduce(state), 4.0, tol=1e-12, n_out=5)
    for i in range(5):
        r = reduce(full.state(i))
        assert np.allclose(red.deltaP[i], r.deltaP, atol=1e-8)
        assert np.allclose(red.deltam[i], r.deltam, atol=1e-8)


def test_collapse_orbit_conserves_energy():
    # a head-on capture: rho shrinks towards zero while |dm| grows like 1/rho
    red = incoming_state(E=4.0, omega_norm=0.5, rho0=5.0)
    traj = integrate_reduced(red, 30.0, tol=1e-11, n_out=301, stop=lambda t, dP, dm: np.linalg.norm(dP) < 1e-3)
    E = np.array([reduced_energy(traj.state(i)) for i in range(len(traj.times))])
    assert traj.rho.min() < 0.05
    assert np.max(np.abs(E - 4.0)) < 1e-8


def test_incoming_state_has_requested_invariants():
    red = incoming_state(3.0, 1.2, rho0=8.0)
    assert reduced_energy(red) == pytest.approx(3.0, rel=1e-13)
    assert red.omega_norm == pytest.approx(1.2, rel=1e-13)
    assert float(red.deltaP @ red.deltam) < 0
    with pytest.raises(ValueError):
        incoming_state(1e-6, 5.0)


@pytest.mark.parametrize("E,w,expected", [(1.0, 1.0, Orbit.SCATTER), (1.7, 1.0, Orbit.CAPTURE), (1.6, 1.0, Orbit.CAPTURE)])
def test_classify_orbit_threshold(E, w, expected):
    assert classify_orbit(E, w) is expected
    assert CAPTURE_THRESHOLD == pytest.approx(8 / 5)


def test_classify_orbit_refuses_uncalibrated_kernels():
    with pytest.raises(CapabilityError):
        classify_orbit(1.0, 1.0, KernelSpec(eta=0.5))
    with pytest.raises(ValueError):
        classify_orbit(-1.0, 1.0)


@pytest.mark.parametrize("E,w", [(0.8, 1.0), (2.4, 1.0), (0.5, 0.3), (3.0, 2.0)])
def test_integration_agrees_with_threshold(E, w):
    orbit, info = classify_by_integration(E, w)
    assert orbit is classify_orbit(E, w)


def test_energy_contours_grid():
    grid = energy_contours(KernelSpec(), 1.0, grid_shape=(30, 40))
    assert grid.energy.shape == (30, 40)
    R, D = np.meshgrid(grid.rho, grid.dm_norm, indexing="ij")
    off = R * D < 2.0
    assert np.all(np.isnan(grid.energy[off]))
    on = ~off
    c = np.sqrt(np.maximum((R * D) ** 2 - 4.0, 0.0))
    ref = energy_from_invariants(KernelSpec(), R[on], c[on], 1.0)
    assert np.allclose(grid.energy[on], ref)
    assert np.allclose(grid.boundary[:, 0] * grid.boundary[:, 1], 2.0)
    assert np.allclose(grid.boundary_caption[:, 0] * grid.boundary_caption[:, 1], 1.0)


def test_state_shape_validation():
    with pytest.raises(ValueError):
        ReducedTwoVortonState(np.zeros(2), np.zeros(3), np.zeros(3), KernelSpec())
    with pytest.raises(ValueError):
        reduced_rhs(ReducedTwoVortonState(np.ones(3), np.zeros(3), np.zeros(3), KernelSpec()), form="bad")
