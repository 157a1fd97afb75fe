"""Quick invariant suite run by ``vorton-lab check``; each check takes well under a few seconds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import flow_map
from .kernels import KernelSpec, kernel_matrix, radial_pair
from .presets import get_preset
from .specfun import bessel_k
from .spectral import _solver, grid_from_function, momentum_from_velocity, run_spectral
from .twovorton import ReducedTwoVortonState, hyperboloid_point, integrate_reduced, reduce, reduced_energy, reconstruct
from .vortons import VortonSystem, evolve, integrate, system_energy

__all__ = ["CheckResult", "run_checks", "summary"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.threshold)


def _pair_state(spec: KernelSpec) -> VortonSystem:
    red = ReducedTwoVortonState(np.array([3.0, 0.0, 0.0]), np.array([-1.0, 0.4, 0.0]), np.array([0.0, 0.5, 0.2]), spec)
    return reconstruct(red)


def _bessel_recurrence() -> float:
    x = np.geomspace(1e-2, 40.0, 200)
    nu = 1.3
    lhs = bessel_k(nu + 1, x)
    rhs = bessel_k(nu - 1, x) + 2 * nu / x * bessel_k(nu, x)
    return float(np.max(np.abs(lhs / rhs - 1)))


def _kernel_origin() -> float:
    spec = KernelSpec()
    kappa = radial_pair(spec).kappa
    K0 = kernel_matrix(spec, np.zeros(3))
    x = np.array([0.3, -0.7, 1.1])
    K = kernel_matrix(spec, x)
    return float(max(np.max(np.abs(K0 - kappa * np.eye(3))), np.max(np.abs(K - K.T))))


def _energy_conservation(state: VortonSystem) -> float:
    traj = integrate(state, 5.0, n_out=11, tol=1e-11)
    return float(traj.meta["energy_drift_rel"])


def _momentum_conservation(state: VortonSystem) -> float:
    traj = integrate(state, 5.0, n_out=11, tol=1e-11)
    return float(max(traj.meta["linear_momentum_drift_rel"], traj.meta["angular_momentum_drift_rel"]))


def _reversibility(state: VortonSystem) -> float:
    back = evolve(evolve(state, 3.0, tol=1e-12), 0.0, tol=1e-12)
    return float(max(np.max(np.abs(back.positions - state.positions)), np.max(np.abs(back.momenta - state.momenta))))


def _reduction_consistency(state: VortonSystem) -> float:
    T = 3.0
    full = reduce(integrate(state, T, n_out=2, tol=1e-12).final)
    red = integrate_reduced(reduce(state), T, n_out=2, tol=1e-12).state(-1)
    e_ratio = reduced_energy(reduce(state)) / system_energy(state)
    return float(max(np.max(np.abs(full.deltaP - red.deltaP)), np.max(np.abs(full.deltam - red.deltam)), abs(e_ratio - 2.0)))


def _hyperboloid(state: VortonSystem) -> float:
    red = reduce(state)
    red0 = ReducedTwoVortonState(red.deltaP, red.deltam, np.zeros(3), red.spec)
    traj = integrate_reduced(red0, 5.0, n_out=6, tol=1e-11)
    worst = 0.0
    for i in range(len(traj.times)):
        h = hyperboloid_point(traj.state(i))
        worst = max(worst, abs(h.constraint_residual()) / (h.rho * h.dm_norm) ** 2)
    return worst


def _grid_run(eps: float, eta: float):
    spec = KernelSpec(n=2, eps=eps, eta=eta, p=3, normalization="operator")
    v0 = grid_from_function(get_preset("vortex-pair"), 64, 2 * math.pi)
    return run_spectral(momentum_from_velocity(v0, spec), spec, 0.2, n_out=3)


def _grid_energy() -> float:
    return _grid_run(0.5, 0.4).energy_drift_rel


def _grid_curl() -> float:
    # without smoothing or penalty m = v, so their curls agree exactly
    return float(np.max(_grid_run(0.0, 0.0).curl_mismatch))


def _flow_volume() -> float:
    spec = KernelSpec(n=2, eps=0.0, eta=1.0, p=3, normalization="unit_peak")
    state = VortonSystem(np.array([[-0.5, 0.0], [0.5, 0.0]]), np.array([[0.0, 0.3], [0.0, 0.3]]), spec)
    h = 0.1
    ax = np.arange(-5, 6) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    seeds = np.stack([X.ravel(), Y.ravel()], axis=1)
    fm = flow_map(state, seeds, 0.0, 2.0, tol=1e-11, grid_shape=X.shape, spacing=(h, h))
    return float(np.nanmax(np.abs(fm.jac_det - 1)))


def _solver_symmetry() -> float:
    spec = KernelSpec(n=2, eps=0.5, eta=0.4, p=3, normalization="operator")
    s = _solver(spec, 16, 2 * math.pi)
    return float(np.max(np.abs(s.K[0, 1] - s.K[1, 0])))


_CHECKS = [
    ("bessel_k recurrence", lambda st: _bessel_recurrence(), 1e-12),
    ("kernel at origin and symmetry", lambda st: _kernel_origin(), 1e-12),
    ("vorton energy conservation", _energy_conservation, 1e-8),
    ("vorton momentum conservation", _momentum_conservation, 1e-8),
    ("time reversibility", _reversibility, 1e-8),
    ("reduced system matches full system", _reduction_consistency, 1e-8),
    ("hyperboloid constraint", _hyperboloid, 1e-8),
    ("grid solver energy conservation", lambda st: _grid_energy(), 1e-8),
    ("grid solver curl transport", lambda st: _grid_curl(), 1e-10),
    ("grid solver kernel symmetry", lambda st: _solver_symmetry(), 1e-15),
    ("flow map preserves area", lambda st: _flow_volume(), 1e-3),
]


def run_checks() -> list[CheckResult]:
    state = _pair_state(KernelSpec())
    out = []
    for name, fn, thr in _CHECKS:
        try:
            value = float(fn(state))
        except Exception:  # a crashing check is a failing check
            value = math.inf
        out.append(CheckResult(name, value, thr))
    return out


def summary(results) -> dict:
    return {r.name: {"value": r.value, "threshold": r.threshold, "passed": r.passed} for r in results}
