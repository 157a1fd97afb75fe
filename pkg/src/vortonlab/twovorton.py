"""Reduction of the two-vorton system to relative coordinates.

With dP = P2 - P1, dm = m2 - m1 and the conserved total mbar = m1 + m2, the
relative motion is

    d(dP)/dt = kappa dm - K(dP) dm
    d(dm)/dt = -(1/2) grad_x [mbar.K(x).mbar - dm.K(x).dm] at x = dP.

The factor 1/2 follows from differentiating the full two-body equations. The
reduced energy

    E = kappa(|dm|^2 + |mbar|^2) + K1 (|P_u mbar|^2 - |P_u dm|^2) + K2 (|P_perp mbar|^2 - |P_perp dm|^2)

equals twice the two-vorton energy ``system_energy``. For mbar = 0 it depends
only on rho = |dP|, c = <dP, dm> and the angular momentum w = dP ^ dm / 2:

    E = (kappa - K1) c^2 / rho^2 + 4 (kappa - K2) |w|^2 / rho^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np

from .kernels import KernelSpec, RadialKernel, kernel_directional_derivative, kernel_matrices, radial_pair
from .ode import StepUnderflow, dopri5
from .specfun import CapabilityError
from .vortons import VortonSystem

__all__ = [
    "ReducedTwoVortonState",
    "HyperboloidPoint",
    "Orbit",
    "ReducedTrajectory",
    "REDUCED_TO_FULL_ENERGY",
    "CAPTURE_THRESHOLD",
    "reduce",
    "reconstruct",
    "reduced_rhs",
    "reduced_energy",
    "energy_from_invariants",
    "hyperboloid_point",
    "classify_orbit",
    "integrate_reduced",
    "classify_by_integration",
    "incoming_state",
    "energy_contours",
]

# reduced_energy / system_energy under the change of variables
REDUCED_TO_FULL_ENERGY = 2.0
# E >= 8/5 |w|^2 separates capture from scatter for the unit-peak p=3 kernel with eta=1
CAPTURE_THRESHOLD = 8.0 / 5.0


class Orbit(str, Enum):
    SCATTER = "Scatter"
    CAPTURE = "Capture"


@dataclass(frozen=True)
class ReducedTwoVortonState:
    deltaP: np.ndarray
    deltam: np.ndarray
    mbar: np.ndarray
    spec: KernelSpec

    def __post_init__(self):
        vals = [np.array(v, dtype=float) for v in (self.deltaP, self.deltam, self.mbar)]
        if any(v.shape != (self.spec.n,) for v in vals):
            raise ValueError(f"deltaP, deltam and mbar must be vectors of length {self.spec.n}")
        for name, v in zip(("deltaP", "deltam", "mbar"), vals):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def rho(self) -> float:
        return float(np.linalg.norm(self.deltaP))

    @property
    def omega(self) -> np.ndarray:
        """Relative angular momentum dP ^ dm / 2 as an antisymmetric matrix."""
        w = np.outer(self.deltaP, self.deltam)
        return 0.5 * (w - w.T)

    @property
    def omega_norm(self) -> float:
        # |a ^ b| with the bivector norm matching |a||b| sin(angle)
        return float(np.linalg.norm(self.omega) / math.sqrt(2.0))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.deltaP, self.deltam])


@dataclass(frozen=True)
class HyperboloidPoint:
    """Point of the mbar = 0 reduced phase space.

    Satisfies 4|w|^2 + c2^2 = rho^2 |dm|^2 with c2 = <dP, dm>.
    """

    rho: float
    c2: float
    dm_norm: float
    sheet_sign: int
    omega_norm: float

    def __post_init__(self):
        lhs = 4 * self.omega_norm**2 + self.c2**2
        rhs = (self.rho * self.dm_norm) ** 2
        if abs(lhs - rhs) > 1e-10 * max(rhs, 1e-300):
            raise ValueError("point is not on the hyperboloid 4|w|^2 + c^2 = rho^2 |dm|^2")

    def constraint_residual(self) -> float:
        return 4 * self.omega_norm**2 + self.c2**2 - (self.rho * self.dm_norm) ** 2


def reduce(state: VortonSystem) -> ReducedTwoVortonState:
    """Relative variables of a two-vorton state (centre of mass discarded)."""
    if state.N != 2:
        raise ValueError(f"reduction needs exactly two vortons, got N={state.N}")
    P, m = state.positions, state.momenta
    return ReducedTwoVortonState(P[1] - P[0], m[1] - m[0], m[0] + m[1], state.spec)


def reconstruct(red: ReducedTwoVortonState, center=None, t: float = 0.0) -> VortonSystem:
    """Two-vorton state with the given relative variables, centred at ``center`` (origin by default)."""
    c = np.zeros(red.spec.n) if center is None else np.asarray(center, dtype=float)
    P = np.stack([c - red.deltaP / 2, c + red.deltaP / 2])
    m = np.stack([(red.mbar - red.deltam) / 2, (red.mbar + red.deltam) / 2])
    return VortonSystem(P, m, red.spec, t)


def _grad_quadratic(rk: RadialKernel, x: np.ndarray, a: np.ndarray, rho, u):
    """Gradient in x of a.K(x).a for a single x."""
    k1, k2, d1, d2, gap = (float(v[0]) for v in rk.profiles(np.array([rho])))
    au = float(a @ u)
    perp = a - au * u
    return (d1 * au * au + d2 * float(perp @ perp)) * u + 2.0 * gap * au * perp


def reduced_rhs(
    state: ReducedTwoVortonState, form: Literal["geometric", "coordinate"] = "geometric"
) -> tuple[np.ndarray, np.ndarray]:
    """``(d dP/dt, d dm/dt)`` of the reduced system."""
    rk = radial_pair(state.spec)
    dP, dm, mb = state.deltaP, state.deltam, state.mbar
    n = state.spec.n
    rho = state.rho
    if form == "coordinate":
        K = kernel_matrices(rk, dP)
        ddP = rk.kappa * dm - K @ dm
        ddm = np.zeros(n)
        if rho > 0:
            eye = np.eye(n)
            for i in range(n):
                dK = kernel_directional_derivative(rk, dP, eye[i])
                ddm[i] = -0.5 * (mb @ dK @ mb - dm @ dK @ dm)
        return ddP, ddm
    if form != "geometric":
        raise ValueError(f"unknown form {form!r}")
    if rho == 0:
        return np.zeros(n), np.zeros(n)
    u = dP / rho
    dmu = float(dm @ u)
    _, def2 = _deficits(rk, rho)
    ddP = def2 * dm - float(rk.gap(rho)) * rho * dmu * u
    ddm = -0.5 * (_grad_quadratic(rk, dP, mb, rho, u) - _grad_quadratic(rk, dP, dm, rho, u))
    return ddP, ddm


def reduced_energy(state: ReducedTwoVortonState) -> float:
    """Energy of the reduced system; equals twice the two-vorton energy."""
    rk = radial_pair(state.spec)
    dm, mb = state.deltam, state.mbar
    rho = state.rho
    if rho == 0:
        return 2.0 * rk.kappa * float(mb @ mb)
    u = state.deltaP / rho
    k1, k2 = float(rk.k1(rho)), float(rk.k2(rho))
    def1, def2 = _deficits(rk, rho)
    mbu, dmu = float(mb @ u), float(dm @ u)
    # kappa |dm|^2 - <dm, K dm> is written with the deficits kappa - K_i, which
    # stay accurate as rho -> 0 while |dm| grows
    mean_part = rk.kappa * float(mb @ mb) + k1 * mbu**2 + k2 * (float(mb @ mb) - mbu**2)
    return mean_part + def1 * dmu**2 + def2 * (float(dm @ dm) - dmu**2)


def energy_from_invariants(spec_or_rk, rho, c, omega_norm):
    """mbar = 0 energy from (rho, <dP,dm>, |w|); vectorized over rho and c."""
    rk = spec_or_rk if isinstance(spec_or_rk, RadialKernel) else radial_pair(spec_or_rk)
    rho = np.asarray(rho, dtype=float)
    def1, def2 = (np.asarray(d) for d in rk.deficits(rho))
    return (def1 * np.asarray(c) ** 2 + 4.0 * def2 * omega_norm**2) / rho**2


_DEFICIT_DIRECT = 0.5  # in units of the kernel length; beyond it kappa - K_i has no cancellation


def _deficits(rk: RadialKernel, rho: float, k1: float | None = None, k2: float | None = None):
    """Scalar (kappa - K1, kappa - K2), via the quadrature form only at short range."""
    if rho < _DEFICIT_DIRECT * rk.spec.eta:
        d1, d2 = rk.deficits(rho)
        return float(d1), float(d2)
    k1 = float(rk.k1(rho)) if k1 is None else k1
    k2 = float(rk.k2(rho)) if k2 is None else k2
    return rk.kappa - k1, rk.kappa - k2


def hyperboloid_point(state: ReducedTwoVortonState) -> HyperboloidPoint:
    c = float(state.deltaP @ state.deltam)
    return HyperboloidPoint(
        state.rho, c, float(np.linalg.norm(state.deltam)), 1 if c >= 0 else -1, state.omega_norm
    )


def _is_calibrated(spec: KernelSpec) -> bool:
    return (
        spec.n == 3
        and spec.eps == 0
        and spec.eta == 1.0
        and spec.p == 3
        and spec.normalization == "unit_peak"
        and not spec.gaussian_limit
    )


def classify_orbit(E: float, omega_norm: float, spec: KernelSpec | None = None) -> Orbit:
    """Capture iff E >= (8/5)|w|^2 (reduced energy, mbar = 0).

    The threshold is calibrated for the unit-peak p=3 kernel in 3-D with
    eta = 1 only; other kernels are refused.
    """
    spec = KernelSpec() if spec is None else spec
    if not _is_calibrated(spec):
        raise CapabilityError(f"capture threshold is only known for K(n=3,eps=0,eta=1,p=3,unit_peak), not {spec.label()}")
    if E < 0 or omega_norm < 0:
        raise ValueError("energy and |w| must be non-negative")
    return Orbit.CAPTURE if E >= CAPTURE_THRESHOLD * omega_norm**2 else Orbit.SCATTER


# ---------------------------------------------------------------------------
# Integration


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    deltaP: np.ndarray
    deltam: np.ndarray
    mbar: np.ndarray
    spec: KernelSpec
    meta: dict = field(default_factory=dict)

    def state(self, i: int) -> ReducedTwoVortonState:
        return ReducedTwoVortonState(self.deltaP[i], self.deltam[i], self.mbar, self.spec)

    @property
    def rho(self) -> np.ndarray:
        return np.linalg.norm(self.deltaP, axis=1)


def integrate_reduced(
    state: ReducedTwoVortonState,
    T: float,
    *,
    tol: float = 1e-10,
    n_out: int = 201,
    times=None,
    stop=None,
    raise_on_abort: bool = False,
) -> ReducedTrajectory:
    """Integrate the reduced equations with the adaptive Dormand-Prince scheme."""
    n = state.spec.n
    rk = radial_pair(state.spec)
    mb = state.mbar

    def f(t, y):
        dP, dm = y[:n], y[n:]
        rho = math.sqrt(float(dP @ dP))
        if rho == 0:
            return np.zeros(2 * n)
        u = dP / rho
        k1, k2, d1, d2, gap = (float(v[0]) for v in rk.profiles(np.array([rho])))
        _, def2 = _deficits(rk, rho, k1, k2)
        dmu, mbu = float(dm @ u), float(mb @ u)
        pdm, pmb = dm - dmu * u, mb - mbu * u
        ddP = def2 * dm - gap * rho * dmu * u
        g_mb = (d1 * mbu * mbu + d2 * float(pmb @ pmb)) * u + 2.0 * gap * mbu * pmb
        g_dm = (d1 * dmu * dmu + d2 * float(pdm @ pdm)) * u + 2.0 * gap * dmu * pdm
        return np.concatenate([ddP, -0.5 * (g_mb - g_dm)])

    t_out = np.linspace(0.0, T, n_out) if times is None else np.asarray(times, dtype=float)
    stop_fn = None if stop is None else (lambda t, y: stop(t, y[:n], y[n:]))
    reason = None
    try:
        res = dopri5(f, state.pack(), t_out, rtol=tol, atol=tol, stop=stop_fn)
    except StepUnderflow as exc:
        if raise_on_abort:
            raise
        res, reason = exc.result, str(exc)
    y = res.y.reshape(len(res.t), 2 * n) if len(res.t) else np.empty((0, 2 * n))
    traj = ReducedTrajectory(np.asarray(res.t), y[:, :n], y[:, n:], mb.copy(), state.spec)
    traj.meta.update(
        termination=res.reason,
        n_steps=res.n_steps,
        t_last=float(res.t_last),
        y_last=res.y_last,
    )
    if reason:
        traj.meta["abort_message"] = reason
    return traj


def incoming_state(E: float, omega_norm: float, rho0: float = 10.0, spec: KernelSpec | None = None):
    """Planar mbar = 0 state at separation rho0 approaching with energy E and |w| = omega_norm."""
    spec = KernelSpec() if spec is None else spec
    rk = radial_pair(spec)
    k1, k2 = float(rk.k1(rho0)), float(rk.k2(rho0))
    b = 2.0 * omega_norm / rho0
    rest = E - (rk.kappa - k2) * b * b
    if rest < 0:
        raise ValueError(f"energy {E} too small for |w|={omega_norm} at separation {rho0}")
    a = -math.sqrt(rest / (rk.kappa - k1))
    n = spec.n
    dP = np.zeros(n)
    dm = np.zeros(n)
    dP[0] = rho0
    dm[0], dm[1] = a, b
    return ReducedTwoVortonState(dP, dm, np.zeros(n), spec)


def classify_by_integration(
    E: float,
    omega_norm: float,
    spec: KernelSpec | None = None,
    *,
    rho0: float = 10.0,
    rho_capture: float = 1e-3,
    t_max: float = 5000.0,
    tol: float = 1e-10,
) -> tuple[Orbit, dict]:
    """Brute-force classification by integrating an incoming orbit.

    Scatter once the separation grows again; capture once it falls below
    ``rho_capture`` while still shrinking. The integration is stopped at
    whichever comes first.
    """
    spec = KernelSpec() if spec is None else spec
    state = incoming_state(E, omega_norm, rho0, spec)
    outcome = {}

    def stop(t, dP, dm):
        c = float(dP @ dm)
        rho = math.sqrt(float(dP @ dP))
        if c > 0:
            outcome["orbit"] = Orbit.SCATTER
            return True
        if rho < rho_capture:
            outcome["orbit"] = Orbit.CAPTURE
            return True
        return False

    traj = integrate_reduced(state, t_max, tol=tol, n_out=2, stop=stop)
    info = {"t_stop": traj.meta["t_last"], "termination": traj.meta["termination"]}
    yl = traj.meta["y_last"]
    n = spec.n
    info["rho_last"] = float(np.linalg.norm(yl[:n]))
    if "orbit" not in outcome:
        # a capture orbit can also end in step underflow at tiny separation
        if traj.meta["termination"] == "step_underflow" and info["rho_last"] < 0.05:
            outcome["orbit"] = Orbit.CAPTURE
        else:
            raise RuntimeError(f"orbit undecided after t={info['t_stop']:.3g} (rho={info['rho_last']:.3g})")
    return outcome["orbit"], info


# ---------------------------------------------------------------------------
# Energy level sets


@dataclass
class ContourGrid:
    rho: np.ndarray
    dm_norm: np.ndarray
    energy: np.ndarray  # (len(rho), len(dm_norm)); nan where rho |dm| < 2|w|
    omega_norm: float
    boundary: np.ndarray  # rho |dm| = 2|w|, where <dP,dm> = 0
    boundary_caption: np.ndarray  # rho |dm| = |w|
    spec: KernelSpec


def energy_contours(
    spec: KernelSpec,
    omega_norm: float,
    rho_range=(0.05, 6.0),
    dm_range=(0.05, 6.0),
    grid_shape=(120, 120),
) -> ContourGrid:
    """mbar = 0 energy on the (rho, |dm|) plane.

    Both sheets of the hyperboloid carry the same energy since only
    <dP,dm>^2 enters; points with rho |dm| < 2|w| lie off the hyperboloid and
    are reported as nan.
    """
    rk = radial_pair(spec)
    rho = np.linspace(*rho_range, grid_shape[0])
    dmn = np.linspace(*dm_range, grid_shape[1])
    R, D = np.meshgrid(rho, dmn, indexing="ij")
    c2 = (R * D) ** 2 - 4.0 * omega_norm**2
    with np.errstate(invalid="ignore"):
        E = energy_from_invariants(rk, R.ravel(), np.sqrt(np.maximum(c2, 0.0)).ravel(), omega_norm).reshape(R.shape)
    E[c2 < 0] = np.nan
    b_rho = rho
    boundary = np.stack([b_rho, 2.0 * omega_norm / b_rho], axis=1)
    boundary_caption = np.stack([b_rho, omega_norm / b_rho], axis=1)
    return ContourGrid(rho, dmn, E, omega_norm, boundary, boundary_caption, spec)
