"""Velocity fields induced by vortons, reference singular fields and flow maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import KernelSpec, kernel_directional_derivative, kernel_matrices, radial_pair
from .ode import StepUnderflow, dopri5
from .specfun import CapabilityError, PoleError
from .vortons import VortonSystem

__all__ = [
    "velocity_field",
    "euler_dipole_2d",
    "collapse_dipole_field",
    "jacobian_fd",
    "SampledFlowMap",
    "flow_map",
    "default_truncation_time",
]


def velocity_field(state: VortonSystem, x) -> np.ndarray:
    """v(x) = sum_b K(x - P_b) m_b at one point (n,) or many points (M, n)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    rk = state.kernel
    diff = pts[:, None, :] - state.positions[None, :, :]
    K = kernel_matrices(rk, diff.reshape(-1, state.n)).reshape(pts.shape[0], state.N, state.n, state.n)
    v = np.einsum("abij,bj->ai", K, state.momenta)
    return v[0] if single else v


def euler_dipole_2d(x) -> np.ndarray:
    """Harmonic field ((x^2 - y^2), 2xy) / |x|^4 of a point momentum (1, 0) under the Leray projector."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 == 0):
        raise PoleError("the dipole field has a pole at the origin")
    a, b = x[..., 0], x[..., 1]
    return np.stack([(a * a - b * b) / r2**2, 2 * a * b / r2**2], axis=-1)


def collapse_dipole_field(spec: KernelSpec, coeffs) -> Callable[[np.ndarray], np.ndarray]:
    """Field x -> -d/dx1 [K(x) (C, w, 0)], the limit of two colliding vortons.

    ``coeffs = (C, w)``. The returned callable accepts a point of shape (3,).
    """
    if spec.n != 3:
        raise CapabilityError("the collapse field is defined in three dimensions")
    if not spec.is_smooth:
        raise CapabilityError(f"{spec.label()} is not smooth enough for the collapse field")
    rk = radial_pair(spec)
    C, w = coeffs
    A = np.array([C, w, 0.0])
    e1 = np.array([1.0, 0.0, 0.0])

    def v(x):
        x = np.asarray(x, dtype=float)
        return -kernel_directional_derivative(rk, x, e1) @ A

    return v


def jacobian_fd(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-4) -> np.ndarray:
    """Fourth-order central-difference Jacobian of f at x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h))
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# Flow maps


@dataclass
class SampledFlowMap:
    seeds: np.ndarray  # (M, n)
    mapped: np.ndarray  # (M, n), nan where failed
    failed: np.ndarray  # (M,) bool
    grid_shape: tuple | None
    jac_det: np.ndarray | None  # grid_shape, nan on the border / failures
    t0: float
    t1: float
    meta: dict = field(default_factory=dict)

    @property
    def displacement(self) -> np.ndarray:
        return self.mapped - self.seeds


def default_truncation_time(state: VortonSystem) -> float:
    """40 eta / (kappa |m|) for the fastest vorton."""
    rk = state.kernel
    speed = rk.kappa * float(np.max(np.linalg.norm(state.momenta, axis=1)))
    if speed == 0:
        raise ValueError("vortons are at rest; no truncation time")
    return 40.0 * state.spec.eta / speed


def _joint_rhs(rk, N, n, M, sign):
    from .vortons import _rhs_geometric

    half = N * n

    def f(t, y):
        P = y[:half].reshape(N, n)
        m = y[half : 2 * half].reshape(N, n)
        X = y[2 * half :].reshape(M, n)
        dP, dm = _rhs_geometric(rk, P, m)
        diff = X[:, None, :] - P[None, :, :]
        K = kernel_matrices(rk, diff.reshape(-1, n)).reshape(M, N, n, n)
        dX = np.einsum("abij,bj->ai", K, m)
        return sign * np.concatenate([dP.ravel(), dm.ravel(), dX.ravel()])

    return f


def _advect(state, seeds, duration, sign, tol):
    N, n = state.N, state.n
    M = seeds.shape[0]
    f = _joint_rhs(state.kernel, N, n, M, sign)
    y0 = np.concatenate([state.positions.ravel(), state.momenta.ravel(), seeds.ravel()])
    res = dopri5(f, y0, [duration], rtol=tol, atol=tol)
    return res.y[-1][2 * N * n :].reshape(M, n)


def flow_map(
    state: VortonSystem,
    seeds,
    t0: float,
    t1: float,
    *,
    tol: float = 1e-9,
    grid_shape: tuple | None = None,
    spacing: tuple | None = None,
) -> SampledFlowMap:
    """Carry seed points through the vorton-induced flow from t0 to t1.

    ``state`` gives the vortons at time t0; they are integrated together with
    the seeds (forward or backward in time). If the joint integration hits a
    step underflow every seed is retried on its own and the ones that still
    fail are flagged. With ``grid_shape`` and ``spacing`` the seeds are taken
    as a row-major grid and det(D phi) is estimated by central differences of
    neighbouring mapped seeds.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    M = seeds.shape[0]
    duration = abs(t1 - t0)
    sign = 1.0 if t1 >= t0 else -1.0
    mapped = np.full_like(seeds, np.nan)
    failed = np.zeros(M, dtype=bool)
    if duration == 0:
        mapped[:] = seeds
    else:
        try:
            mapped[:] = _advect(state, seeds, duration, sign, tol)
        except StepUnderflow:
            for i in range(M):
                try:
                    mapped[i] = _advect(state, seeds[i : i + 1], duration, sign, tol)[0]
                except StepUnderflow:
                    failed[i] = True
    det = None
    if grid_shape is not None:
        if spacing is None:
            raise ValueError("spacing is needed with grid_shape")
        det = _grid_jacobian_det(mapped, grid_shape, spacing)
    return SampledFlowMap(seeds, mapped, failed, grid_shape, det, t0, t1, {"tol": tol})


def _grid_jacobian_det(mapped: np.ndarray, grid_shape: tuple, spacing: tuple) -> np.ndarray:
    """det(D phi) from fourth-order central differences; nan within two cells of the border."""
    n = mapped.shape[1]
    if len(grid_shape) != n or math.prod(grid_shape) != mapped.shape[0]:
        raise ValueError("grid_shape does not match the seeds")
    phi = mapped.reshape(*grid_shape, n)
    det = np.full(tuple(grid_shape), np.nan)
    if min(grid_shape) < 5:
        return det
    inner = tuple(slice(2, -2) for _ in range(n))
    J = np.empty(phi[inner].shape[:-1] + (n, n))

    def shifted(j, k):
        sl = [slice(2, -2)] * n
        stop = grid_shape[j] - 2 + k
        sl[j] = slice(2 + k, stop if stop != 0 else None)
        return phi[tuple(sl)]

    for j in range(n):
        J[..., :, j] = (-shifted(j, 2) + 8 * shifted(j, 1) - 8 * shifted(j, -1) + shifted(j, -2)) / (12 * spacing[j])
    det[inner] = np.linalg.det(J)
    return det
