import math

import numpy as np
import pytest

from vortonlab.kernels import KernelSpec
from vortonlab.presets import StreamBlobs, get_preset
from vortonlab.specfun import CapabilityError, DomainError
from vortonlab.spectral import (
    CflViolation,
    GridField,
    SymbolUnderResolved,
    convergence_experiment,
    grid_from_function,
    momentum_from_velocity,
    oseledets_step,
    project_div_free,
    read_grid,
    run_spectral,
    velocity_from_momentum,
    write_grid,
)

EULER = KernelSpec(n=2, eps=0.0, eta=0.0)
TWO_PI = 2 * math.pi


def blob_velocity(N=128, L=2 * TWO_PI):
    # the blob decays below 1e-16 within 9 widths, so a 4 pi box is periodic to rounding
    return grid_from_function(get_preset("single-blob"), N, L)


def random_field(N=32, L=TWO_PI, seed=0):
    rng = np.random.default_rng(seed)
    # smooth random field: a few low modes
    X = GridField(np.zeros((2, N, N)), L).coords()
    vals = np.zeros((2, N, N))
    for c in range(2):
        for _ in range(4):
            kx, ky = rng.integers(-3, 4, 2)
            ph = rng.uniform(0, TWO_PI)
            vals[c] += rng.normal() * np.cos(TWO_PI / L * (kx * X[..., 0] + ky * X[..., 1]) + ph)
    return GridField(vals, L)


@pytest.mark.parametrize(
    "values,kwargs",
    [
        (np.zeros((2, 12, 12)), {}),
        (np.zeros((3, 16, 16)), {}),
        (np.zeros((2, 16, 8)), {}),
        (np.zeros((2, 16, 16), dtype=complex), {}),
        (np.zeros((2, 16, 16)), {"L": 0.0}),
        (np.zeros((2, 16, 16)), {"space": "fourier"}),
    ],
)
def test_grid_field_validation(values, kwargs):
    args = {"L": 1.0, **kwargs}
    with pytest.raises(ValueError):
        GridField(values, **args)


def test_spectral_roundtrip():
    f = random_field()
    back = f.to_spectral().to_physical()
    assert np.allclose(back.values, f.values, atol=1e-13)
    assert f.to_physical() is f


def test_grid_from_function_coordinates():
    g = grid_from_function(lambda x: x, 16, 4.0)
    assert g.origin == (-2.0, -2.0)
    assert g.values[0, 0, 0] == -2.0 and g.values[1, 0, 1] == -2.0 + 0.25


def test_projection_is_idempotent_and_divergence_free():
    f = random_field(seed=1)
    P1 = project_div_free(f)
    P2 = project_div_free(P1)
    assert np.allclose(P1.values, P2.values, atol=1e-13)
    h = P1.to_spectral().values
    k = np.fft.fftfreq(32, 1 / 32)[:, None], np.fft.rfftfreq(32, 1 / 32)[None, :]
    assert np.max(np.abs(k[0] * h[0] + k[1] * h[1])) < 1e-10


def test_projection_removes_gradients_and_keeps_mean():
    N, L = 32, TWO_PI
    X = GridField(np.zeros((2, N, N)), L).coords()
    x, y = X[..., 0], X[..., 1]
    # grad of cos(x) sin(2y) plus a constant flow
    grad = GridField(np.stack([-np.sin(x) * np.sin(2 * y) + 0.3, 2 * np.cos(x) * np.cos(2 * y)]), L)
    out = project_div_free(grad)
    assert np.allclose(out.values[0], 0.3, atol=1e-13)
    assert np.allclose(out.values[1], 0.0, atol=1e-13)


@pytest.mark.parametrize("spec", [KernelSpec(n=2, eps=0.7, eta=0.5, normalization="operator"), KernelSpec(n=2, eta=0.5, normalization="operator")], ids=lambda s: s.label())
def test_momentum_velocity_inverse(spec):
    v = blob_velocity() if spec.eps == 0 else random_field(N=64)
    m = momentum_from_velocity(v, spec)
    back = velocity_from_momentum(m, spec).to_physical()
    assert np.allclose(back.values, v.values, atol=1e-10)


def test_euler_momentum_needs_divergence_free_velocity():
    with pytest.raises(DomainError):
        momentum_from_velocity(random_field(seed=3), EULER)


def test_solver_is_two_dimensional():
    with pytest.raises(CapabilityError):
        momentum_from_velocity(blob_velocity(), KernelSpec(n=3, eta=0.5))


def test_cfl_violation_suggests_step():
    m = momentum_from_velocity(blob_velocity(), EULER)
    with pytest.raises(CflViolation) as info:
        oseledets_step(m, EULER, 10.0)
    dt = info.value.suggested_dt
    assert 0 < dt < 10.0
    oseledets_step(m, EULER, dt)


def test_round_vortex_is_steady():
    # a radially symmetric vortex is an exact steady Euler flow
    f = StreamBlobs(centers=((0.0, 0.0),), amplitudes=(0.3,), sx=0.6, sy=0.6)
    v0 = grid_from_function(f, 128, 2 * TWO_PI)
    run = run_spectral(momentum_from_velocity(v0, EULER), EULER, 1.0, n_out=3)
    assert np.max(np.abs(run.velocity(-1).to_physical().values - v0.values)) < 1e-10
    assert run.energy_drift_rel < 1e-12


def test_euler_run_monitors():
    v0 = blob_velocity()
    run = run_spectral(momentum_from_velocity(v0, EULER), EULER, 0.5, n_out=6)
    assert np.allclose(run.times, np.linspace(0, 0.5, 6))
    assert run.energy_drift_rel < 1e-8
    assert np.max(run.curl_mismatch) < 1e-10
    assert np.allclose(run.momentum_total, run.momentum_total[0], atol=1e-12)
    assert run.n_steps % 5 == 0


def test_smoothed_run_conserves_energy_and_momentum():
    # weakly compressible; at small eps this field steepens and outruns its initial CFL step
    spec = KernelSpec(n=2, eps=4.0, eta=0.4, normalization="operator")
    run = run_spectral(momentum_from_velocity(random_field(N=64, seed=4), spec), spec, 0.3, n_out=4, safety=0.4)
    assert run.energy_drift_rel < 1e-7
    assert np.allclose(run.momentum_total, run.momentum_total[0], atol=1e-11)


def test_zero_horizon_run():
    run = run_spectral(momentum_from_velocity(blob_velocity(), EULER), EULER, 0.0)
    assert len(run.times) == 1 and run.n_steps == 0


def test_convergence_in_eta_is_second_order():
    v0 = blob_velocity(N=256)
    table = convergence_experiment(v0, [(0.0, 0.4), (0.0, 0.2), (0.0, 0.1)], T=0.3, n_boot=20)
    assert table.study == "eta" and table.reference == (0.0, 0.0)
    assert np.all(np.diff(table.errors_l2) < 0)
    assert 1.7 < table.order < 2.4
    assert np.all(np.abs(table.orders_hk - 2) < 0.1)
    assert len(table.rows()) == 3 and math.isnan(table.rows()[0][3])
    assert table.boot_interval.shape == (2, 2)


def test_convergence_schedule_validation():
    v0 = blob_velocity()
    with pytest.raises(ValueError):
        convergence_experiment(v0, [(0.1, 0.5)], T=0.1)
    with pytest.raises(ValueError):
        convergence_experiment(v0, [(0.1, 0.5), (0.2, 0.4)], T=0.1)
    with pytest.raises(SymbolUnderResolved):
        convergence_experiment(v0, [(0.0, 0.1), (0.0, 0.05)], T=0.1)


def test_convergence_rejects_unresolved_initial_data():
    sharp = grid_from_function(StreamBlobs(((0.0, 0.0),), (0.1,), 0.08, 0.08), 32, TWO_PI)
    with pytest.raises(SymbolUnderResolved):
        convergence_experiment(sharp, [(0.0, 0.8), (0.0, 0.4)], T=0.1)


def test_grid_file_roundtrip(tmp_path):
    f = random_field(seed=5)
    f = GridField(f.values, f.L, origin=(-1.0, 0.5))
    path = tmp_path / "g.bin"
    write_grid(path, f)
    g = read_grid(path)
    assert np.array_equal(g.values, f.values)
    assert g.L == f.L and g.origin == f.origin


def test_grid_file_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAGRID" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        read_grid(bad)
    path = tmp_path / "g.bin"
    write_grid(path, random_field())
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="payload"):
        read_grid(path)


def test_steepening_run_raises_cfl_violation():
    spec = KernelSpec(n=2, eps=1.0, eta=0.4, normalization="operator")
    with pytest.raises(CflViolation):
        run_spectral(momentum_from_velocity(random_field(N=64, seed=4), spec), spec, 0.3, n_out=4)
