"""Point-vortex ("vorton") dynamics for smooth regularized Euler kernels.

Momentum is carried by N points P_a with covectors m_a. The energy

    E = sum_{a,b} m_a . K(P_a - P_b) m_b

includes the diagonal terms kappa |m_a|^2. The equations of motion are

    dP_a/dt = sum_b K(P_a - P_b) m_b
    dm_a/dt = -sum_b d_x [m_a . K(x) m_b] at x = P_a - P_b,

which is the Hamiltonian flow of E/2.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .kernels import KernelSpec, RadialKernel, kernel_directional_derivative, kernel_matrices, radial_pair
from .ode import OdeResult, StepUnderflow, dopri5, rk4_fixed
from .specfun import CapabilityError

__all__ = [
    "VortonSystem",
    "ConservedSnapshot",
    "Trajectory",
    "IntegrationAbort",
    "system_energy",
    "vorton_rhs",
    "conserved_quantities",
    "integrate",
    "evolve",
]


class IntegrationAbort(RuntimeError):
    """Integration stopped early; ``trajectory`` holds everything computed so far."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class VortonSystem:
    positions: np.ndarray
    momenta: np.ndarray
    spec: KernelSpec
    t: float = 0.0

    def __post_init__(self):
        P = np.array(self.positions, dtype=float)
        m = np.array(self.momenta, dtype=float)
        if P.ndim != 2 or P.shape != m.shape or P.shape[0] < 1:
            raise ValueError("positions and momenta must both have shape (N, n) with N >= 1")
        if P.shape[1] != self.spec.n:
            raise ValueError(f"points have dimension {P.shape[1]} but the kernel has n={self.spec.n}")
        if not self.spec.is_smooth:
            raise CapabilityError(
                f"{self.spec.label()} is not smooth enough for vorton dynamics (needs eta > 0 and p >= (n+3)/2)"
            )
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(m))):
            raise ValueError("positions and momenta must be finite")
        P.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "positions", P)
        object.__setattr__(self, "momenta", m)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def kernel(self) -> RadialKernel:
        return radial_pair(self.spec)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.positions.ravel(), self.momenta.ravel()])

    def unpack(self, y: np.ndarray, t: float) -> "VortonSystem":
        half = self.N * self.n
        return replace(
            self, positions=y[:half].reshape(self.N, self.n), momenta=y[half:].reshape(self.N, self.n), t=float(t)
        )


@dataclass(frozen=True)
class ConservedSnapshot:
    energy: float
    linear_momentum: np.ndarray
    angular_momentum: np.ndarray  # antisymmetric n x n bivector

    @property
    def angular_scalar(self) -> float:
        """The single bivector component in 2-D."""
        return float(self.angular_momentum[0, 1])

    @property
    def angular_axial(self) -> np.ndarray:
        """Axial vector of the bivector in 3-D."""
        w = self.angular_momentum
        return np.array([w[1, 2], w[2, 0], w[0, 1]])


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (T, N, n)
    momenta: np.ndarray
    spec: KernelSpec
    meta: dict = field(default_factory=dict)

    def state(self, i: int) -> VortonSystem:
        return VortonSystem(self.positions[i], self.momenta[i], self.spec, float(self.times[i]))

    @property
    def final(self) -> VortonSystem:
        return self.state(len(self.times) - 1)


# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _pairs(N: int):
    ia, ib = np.triu_indices(N, k=1)
    return ia, ib


def system_energy(state: VortonSystem) -> float:
    """E = sum_{a,b} m_a K(P_a - P_b) m_b, diagonal terms included."""
    rk = state.kernel
    P, m = state.positions, state.momenta
    E = rk.kappa * float(np.sum(m * m))
    if state.N > 1:
        ia, ib = _pairs(state.N)
        x = P[ia] - P[ib]
        rho = np.linalg.norm(x, axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        u = x / safe[:, None]
        k1 = rk.k1(rho)
        k2 = rk.k2(rho)
        a, b = m[ia], m[ib]
        au = np.sum(a * u, axis=1)
        bu = np.sum(b * u, axis=1)
        ab = np.sum(a * b, axis=1)
        pair = np.where(rho > 0, k2 * ab + (k1 - k2) * au * bu, rk.kappa * ab)
        E += 2.0 * float(np.sum(pair))
    return E


def _rhs_geometric(rk: RadialKernel, P: np.ndarray, m: np.ndarray):
    N = P.shape[0]
    dP = rk.kappa * m.copy()
    dm = np.zeros_like(m)
    if N == 1:
        return dP, dm
    ia, ib = _pairs(N)
    x = P[ia] - P[ib]
    rho = np.linalg.norm(x, axis=1)
    coincident = rho == 0
    safe = np.where(coincident, 1.0, rho)
    u = x / safe[:, None]
    k1, k2, d1, d2, gap = rk.profiles(rho)
    a, b = m[ia], m[ib]
    au = np.sum(a * u, axis=1)
    bu = np.sum(b * u, axis=1)
    ab = np.sum(a * b, axis=1)
    # velocities: K(x) b on a, K(-x) a = K(x) a on b
    Kb = k2[:, None] * b + ((k1 - k2) * bu)[:, None] * u
    Ka = k2[:, None] * a + ((k1 - k2) * au)[:, None] * u
    Kb[coincident] = rk.kappa * b[coincident]
    Ka[coincident] = rk.kappa * a[coincident]
    # gradient of a.K(x).b in x, antisymmetric under swapping the pair
    radial = d1 * au * bu + d2 * (ab - au * bu)
    perp_a = a - au[:, None] * u
    perp_b = b - bu[:, None] * u
    grad = radial[:, None] * u + gap[:, None] * (bu[:, None] * perp_a + au[:, None] * perp_b)
    grad[coincident] = 0.0
    # fixed-order accumulation: each vorton sums its partners in index order
    for arr, idx, vals, sign in ((dP, ia, Kb, 1.0), (dP, ib, Ka, 1.0), (dm, ia, grad, -1.0), (dm, ib, grad, 1.0)):
        for d in range(arr.shape[1]):
            arr[:, d] += sign * np.bincount(idx, weights=vals[:, d], minlength=N)
    return dP, dm


def _rhs_matrix(state: VortonSystem):
    """Literal double sum with full kernel matrices and directional derivatives."""
    rk = state.kernel
    P, m = state.positions, state.momenta
    N, n = P.shape
    dP = np.zeros_like(m)
    dm = np.zeros_like(m)
    eye = np.eye(n)
    for a in range(N):
        for b in range(N):
            x = P[a] - P[b]
            dP[a] += kernel_matrices(rk, x) @ m[b]
            for i in range(n):
                dm[a, i] -= m[a] @ kernel_directional_derivative(rk, x, eye[i]) @ m[b]
    return dP, dm


def vorton_rhs(state: VortonSystem, path: Literal["geometric", "matrix"] = "geometric"):
    """Time derivatives ``(dP/dt, dm/dt)``, each of shape (N, n).

    ``path='matrix'`` evaluates the double sum literally with kernel matrices
    and is meant as a cross-check for small N.
    """
    if path == "matrix":
        return _rhs_matrix(state)
    if path != "geometric":
        raise ValueError(f"unknown path {path!r}")
    return _rhs_geometric(state.kernel, state.positions, state.momenta)


def conserved_quantities(state: VortonSystem) -> ConservedSnapshot:
    P, m = state.positions, state.momenta
    L = P.T @ m
    return ConservedSnapshot(system_energy(state), m.sum(axis=0), L - L.T)


def _drifts(traj: Trajectory) -> dict:
    snaps = [conserved_quantities(traj.state(i)) for i in range(len(traj.times))]
    if not snaps:
        return {}
    e0, p0, l0 = snaps[0].energy, snaps[0].linear_momentum, snaps[0].angular_momentum

    def rel(err, ref):
        return float(err / ref) if ref > 0 else float(err)

    de = max(abs(s.energy - e0) for s in snaps)
    dp = max(np.linalg.norm(s.linear_momentum - p0) for s in snaps)
    dl = max(np.linalg.norm(s.angular_momentum - l0) for s in snaps)
    return {
        "energy_initial": e0,
        "energy_drift_rel": rel(de, abs(e0)),
        "linear_momentum_drift_rel": rel(dp, float(np.linalg.norm(p0))),
        "angular_momentum_drift_rel": rel(dl, float(np.linalg.norm(l0))),
    }


def integrate(
    state: VortonSystem,
    T: float,
    method: Literal["adaptive", "rk4_fixed"] = "adaptive",
    *,
    tol: float = 1e-10,
    dt: float | None = None,
    n_out: int = 101,
    times=None,
    raise_on_abort: bool = True,
    stop=None,
) -> Trajectory:
    """Integrate the vorton equations over ``[t, t + T]``.

    Output is sampled at ``times`` (absolute) or ``n_out`` equally spaced
    instants. ``method='adaptive'`` is Dormand-Prince 5(4) with PI control at
    relative and absolute tolerance ``tol``; ``'rk4_fixed'`` takes steps ``dt``.
    A step underflow raises :class:`IntegrationAbort` with the partial
    trajectory (or returns it when ``raise_on_abort`` is false). Conserved
    quantity drifts are stored in ``meta``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    t0 = state.t
    t_out = np.linspace(t0, t0 + T, n_out) if times is None else np.asarray(times, dtype=float)
    rk = state.kernel
    N, n = state.N, state.n
    half = N * n

    def f(t, y):
        dP, dm = _rhs_geometric(rk, y[:half].reshape(N, n), y[half:].reshape(N, n))
        return np.concatenate([dP.ravel(), dm.ravel()])

    stop_fn = None if stop is None else (lambda t, y: stop(state.unpack(y, t)))
    aborted = None
    if method == "adaptive":
        if not tol > 0:
            raise ValueError("tol must be positive")
        try:
            res = dopri5(f, state.pack(), t_out, t0=t0, rtol=tol, atol=tol, stop=stop_fn)
        except StepUnderflow as exc:
            res, aborted = exc.result, str(exc)
    elif method == "rk4_fixed":
        if dt is None or not dt > 0:
            raise ValueError("rk4_fixed needs a positive dt")
        res = rk4_fixed(f, state.pack(), t_out, dt, t0=t0, stop=stop_fn)
    else:
        raise ValueError(f"unknown method {method!r}")
    traj = _to_trajectory(res, state)
    traj.meta.update(_drifts(traj))
    traj.meta.update(
        method=method,
        termination=res.reason,
        n_steps=res.n_steps,
        n_rejected=res.n_rejected,
        t_last=float(res.t_last),
    )
    if aborted is not None:
        traj.meta["abort_message"] = aborted
        traj.meta["last_valid_state"] = state.unpack(res.y_last, res.t_last)
        if raise_on_abort:
            raise IntegrationAbort(aborted, traj)
    return traj


def _to_trajectory(res: OdeResult, state: VortonSystem) -> Trajectory:
    N, n = state.N, state.n
    half = N * n
    y = res.y.reshape(len(res.t), -1) if len(res.t) else np.empty((0, 2 * half))
    return Trajectory(
        np.asarray(res.t),
        y[:, :half].reshape(-1, N, n),
        y[:, half:].reshape(-1, N, n),
        state.spec,
    )


def min_separation(traj: Trajectory) -> float:
    """Smallest pairwise distance over all samples."""
    best = math.inf
    for P in traj.positions:
        diff = P[:, None, :] - P[None, :, :]
        d = np.linalg.norm(diff, axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        best = min(best, float(d.min()))
    return best


def evolve(state: VortonSystem, t_target: float, *, tol: float = 1e-10) -> VortonSystem:
    """State at time ``t_target``, earlier or later than ``state.t``.

    Backward evolution uses time reversal: (P(-t), -m(-t)) solves the same
    equations, so it integrates forward with negated momenta.
    """
    span = t_target - state.t
    if span == 0:
        return state
    if span > 0:
        return integrate(state, span, tol=tol, n_out=2).final
    flipped = replace(state, momenta=-state.momenta, t=0.0)
    end = integrate(flipped, -span, tol=tol, n_out=2).final
    return VortonSystem(end.positions, -end.momenta, state.spec, t_target)
