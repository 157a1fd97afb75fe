"""Periodic pseudo-spectral solver for the momentum form of Euler / EPDiff in two dimensions.

The velocity is v = K * m with the exact Fourier symbol
K(xi) = G(|xi|) (I - xi xi^T / (eps^2 + |xi|^2)), where G is the smoothing symbol
(identity at xi = 0). The momentum obeys

    dm/dt = -(v . grad) m - div(v) m - (Dv)^T m,

integrated with classical RK4, spectral derivatives and 2/3 dealiasing.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from ._env import worker_count
from .kernels import KernelSpec
from .specfun import CapabilityError, DomainError

__all__ = [
    "GridField",
    "CflViolation",
    "SymbolUnderResolved",
    "fourier_symbol",
    "inverse_symbol",
    "project_div_free",
    "momentum_from_velocity",
    "velocity_from_momentum",
    "oseledets_step",
    "SpectralRun",
    "run_spectral",
    "ConvergenceTable",
    "convergence_experiment",
    "grid_from_function",
    "write_grid",
    "read_grid",
]


class CflViolation(ValueError):
    """Requested step exceeds the CFL bound; ``suggested_dt`` satisfies it."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class SymbolUnderResolved(ValueError):
    """The grid cannot resolve the kernel or the initial data."""


CFL_NUMBER = 0.5


# ---------------------------------------------------------------------------
# Grid fields


@dataclass(frozen=True)
class GridField:
    """Periodic two-component field on an N x N grid of period L.

    ``values`` has shape (2, N, N) in physical space and (2, N, N//2 + 1) in
    spectral space (``scipy.fft.rfft2`` layout). Grid point (i, j) sits at
    ``origin + (i, j) * L / N``.
    """

    values: np.ndarray
    L: float
    space: str = "physical"
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.space not in ("physical", "spectral"):
            raise ValueError("space must be 'physical' or 'spectral'")
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[0] != 2:
            raise ValueError("values must have shape (2, N, N) or (2, N, N//2+1)")
        N = v.shape[1]
        if N < 4 or N & (N - 1):
            raise ValueError(f"resolution must be a power of two, got {N}")
        expected = (2, N, N) if self.space == "physical" else (2, N, N // 2 + 1)
        if v.shape != expected:
            raise ValueError(f"values have shape {v.shape}, expected {expected}")
        if self.space == "physical" and np.iscomplexobj(v):
            raise ValueError("physical-space values must be real")
        if not self.L > 0:
            raise ValueError("period L must be positive")

    @property
    def n(self) -> int:
        return 2

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return self.L / self.N

    def coords(self) -> np.ndarray:
        """Grid points, shape (N, N, 2)."""
        s = np.arange(self.N) * self.dx
        X, Y = np.meshgrid(self.origin[0] + s, self.origin[1] + s, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def to_spectral(self) -> "GridField":
        if self.space == "spectral":
            return self
        return GridField(sfft.rfft2(self.values, workers=worker_count()), self.L, "spectral", self.origin)

    def to_physical(self) -> "GridField":
        if self.space == "physical":
            return self
        vals = sfft.irfft2(self.values, s=(self.N, self.N), workers=worker_count())
        return GridField(vals, self.L, "physical", self.origin)


def grid_from_function(f, N: int, L: float, origin=None) -> GridField:
    """Sample a vector field f(points (..., 2)) -> (..., 2) on a grid centred at 0 by default."""
    if origin is None:
        origin = (-L / 2, -L / 2)
    g = GridField(np.zeros((2, N, N)), L, "physical", tuple(float(o) for o in origin))
    vals = np.moveaxis(np.asarray(f(g.coords()), dtype=float), -1, 0)
    return GridField(vals, L, "physical", g.origin)


# ---------------------------------------------------------------------------
# Symbols


def fourier_symbol(spec: KernelSpec, xi) -> np.ndarray:
    """K(xi) = G(|xi|) (I - xi xi^T / (eps^2 + |xi|^2)) for xi of shape (..., n).

    The projector part is the identity where eps^2 + |xi|^2 = 0. With
    ``gaussian_limit`` the smoothing factor is exp(-eta^2 |xi|^2).
    """
    xi = np.asarray(xi, dtype=float)
    n = xi.shape[-1]
    k2 = np.sum(xi * xi, axis=-1)
    denom = spec.eps**2 + k2
    safe = np.where(denom > 0, denom, 1.0)
    outer = xi[..., :, None] * xi[..., None, :] / safe[..., None, None]
    outer = np.where((denom > 0)[..., None, None], outer, 0.0)
    G = spec.smoothing_symbol(np.sqrt(k2))
    return G[..., None, None] * (np.eye(n) - outer)


def inverse_symbol(spec: KernelSpec, xi) -> np.ndarray:
    """L(xi) = G(|xi|)^{-1} (I + xi xi^T / eps^2), the matrix inverse of K(xi) for eps > 0."""
    if not spec.eps > 0:
        raise CapabilityError("the operator symbol is only invertible for eps > 0")
    xi = np.asarray(xi, dtype=float)
    n = xi.shape[-1]
    k = np.sqrt(np.sum(xi * xi, axis=-1))
    G = spec.smoothing_symbol(k)
    outer = xi[..., :, None] * xi[..., None, :] / spec.eps**2
    return (np.eye(n) + outer) / G[..., None, None]


def _wavenumbers(N: int, L: float):
    kx = sfft.fftfreq(N, 1.0 / N)
    ky = sfft.rfftfreq(N, 1.0 / N)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    scale = 2 * math.pi / L
    mask = (np.abs(KX) < N / 3) & (np.abs(KY) < N / 3)
    return scale * KX, scale * KY, mask


def project_div_free(fld: GridField) -> GridField:
    """Leray projection I - xi xi^T / |xi|^2 per mode, identity on the mean."""
    spec_in = fld.space == "spectral"
    fh = fld.to_spectral().values
    XI, ETA, _ = _wavenumbers(fld.N, fld.L)
    k2 = XI**2 + ETA**2
    k2s = np.where(k2 > 0, k2, 1.0)
    dot = (XI * fh[0] + ETA * fh[1]) / k2s
    out = np.stack([fh[0] - XI * dot, fh[1] - ETA * dot])
    res = GridField(out, fld.L, "spectral", fld.origin)
    return res if spec_in else res.to_physical()


# ---------------------------------------------------------------------------
# Solver core


class _Solver:
    """Precomputed symbols and dealiasing mask for one (spec, N, L)."""

    def __init__(self, spec: KernelSpec, N: int, L: float):
        if spec.n != 2:
            raise CapabilityError("the grid solver is two-dimensional; use n=2 kernels")
        self.spec, self.N, self.L = spec, N, L
        self.dx = L / N
        self.xi, self.eta, self.mask = _wavenumbers(N, L)
        xi = np.stack([self.xi, self.eta], axis=-1)
        K = fourier_symbol(spec, xi)  # (N, N//2+1, 2, 2)
        self.K = np.ascontiguousarray(np.moveaxis(K, (-2, -1), (0, 1)))
        self.grad = np.stack([1j * self.xi, 1j * self.eta])

    def velocity_hat(self, mh):
        return np.einsum("ijab,jab->iab", self.K, mh)

    def _ifft(self, a):
        return sfft.irfft2(a, s=(self.N, self.N), workers=worker_count())

    def _fft(self, a):
        return sfft.rfft2(a, workers=worker_count())

    def rhs(self, mh):
        vh = self.velocity_hat(mh)
        # one batched inverse transform: m (2), v (2), dm_i/dx_j (4), dv_i/dx_j (4)
        stack = np.concatenate(
            [mh, vh, (mh[:, None] * self.grad[None]).reshape(4, *mh.shape[1:]),
             (vh[:, None] * self.grad[None]).reshape(4, *mh.shape[1:])]
        )
        phys = self._ifft(stack)
        m, v = phys[0:2], phys[2:4]
        dm = phys[4:8].reshape(2, 2, self.N, self.N)
        dv = phys[8:12].reshape(2, 2, self.N, self.N)
        div = dv[0, 0] + dv[1, 1]
        r = np.empty_like(m)
        for i in range(2):
            r[i] = -(v[0] * dm[i, 0] + v[1] * dm[i, 1]) - div * m[i] - (m[0] * dv[0, i] + m[1] * dv[1, i])
        return self._fft(r) * self.mask

    def max_speed(self, mh) -> float:
        v = self._ifft(self.velocity_hat(mh))
        return float(np.sqrt(np.max(v[0] ** 2 + v[1] ** 2)))

    def cfl_dt(self, mh) -> float:
        s = self.max_speed(mh)
        return math.inf if s == 0 else CFL_NUMBER * self.dx / s

    def step(self, mh, dt):
        limit = self.cfl_dt(mh)
        if dt > limit * (1 + 1e-12):
            raise CflViolation(f"dt={dt:.4g} exceeds the CFL bound {limit:.4g}", suggested_dt=limit)
        a = self.rhs(mh)
        b = self.rhs(mh + 0.5 * dt * a)
        c = self.rhs(mh + 0.5 * dt * b)
        d = self.rhs(mh + dt * c)
        return mh + dt / 6 * (a + 2 * b + 2 * c + d)

    def energy(self, mh) -> float:
        """Integral of v . m over the box."""
        v = self._ifft(self.velocity_hat(mh))
        m = self._ifft(mh)
        return float(np.sum(v * m) * self.dx**2)

    def curl_mismatch(self, mh) -> float:
        """max |curl m - curl v| on the grid."""
        dh = mh - self.velocity_hat(mh)
        c = self._ifft(1j * self.xi * dh[1] - 1j * self.eta * dh[0])
        return float(np.max(np.abs(c)))

    def momentum_total(self, mh) -> np.ndarray:
        """Integral of m over the box (from the mean mode)."""
        return np.real(mh[:, 0, 0]) * self.dx**2


@lru_cache(maxsize=16)
def _solver(spec: KernelSpec, N: int, L: float) -> _Solver:
    return _Solver(spec, N, L)


def momentum_from_velocity(v: GridField, spec: KernelSpec, *, div_tol: float = 1e-10) -> GridField:
    """m = L v. For eps = 0 the velocity must be divergence-free and m = G^{-1} v."""
    s = _solver(spec, v.N, float(v.L))
    vh = v.to_spectral().values * s.mask
    G = spec.smoothing_symbol(np.sqrt(s.xi**2 + s.eta**2))
    if spec.eps > 0:
        xi = np.stack([s.xi, s.eta], axis=-1)
        Li = np.moveaxis(inverse_symbol(spec, xi), (-2, -1), (0, 1))
        mh = np.einsum("ijab,jab->iab", Li, vh)
    else:
        div = s._ifft(1j * s.xi * vh[0] + 1j * s.eta * vh[1])
        scale = max(float(np.max(np.abs(s._ifft(vh)))), 1e-300) / s.dx
        if np.max(np.abs(div)) > div_tol * scale:
            raise DomainError("for eps = 0 the initial velocity must be divergence-free")
        mh = vh / G
    return GridField(mh * s.mask, v.L, "spectral", v.origin)


def velocity_from_momentum(m: GridField, spec: KernelSpec) -> GridField:
    s = _solver(spec, m.N, float(m.L))
    return GridField(s.velocity_hat(m.to_spectral().values), m.L, "spectral", m.origin)


def oseledets_step(m: GridField, spec: KernelSpec, dt: float) -> GridField:
    """One RK4 step of the momentum equation; input modes beyond the 2/3 cut are dropped."""
    s = _solver(spec, m.N, float(m.L))
    mh = m.to_spectral().values * s.mask
    out = GridField(s.step(mh, dt), m.L, "spectral", m.origin)
    return out if m.space == "spectral" else out.to_physical()


# ---------------------------------------------------------------------------
# Runs with monitors


@dataclass
class SpectralRun:
    times: np.ndarray
    momenta: list  # spectral GridFields at output times
    energy: np.ndarray
    curl_mismatch: np.ndarray
    momentum_total: np.ndarray  # (n_out, 2)
    spec: KernelSpec
    dt: float
    n_steps: int
    meta: dict = field(default_factory=dict)

    def velocity(self, i: int = -1) -> GridField:
        return velocity_from_momentum(self.momenta[i], self.spec)

    @property
    def energy_drift_rel(self) -> float:
        e0 = self.energy[0]
        d = np.max(np.abs(self.energy - e0))
        return float(d / abs(e0)) if e0 != 0 else float(d)


def _plan_steps(T: float, dt_max: float, n_out: int) -> tuple[float, int]:
    """Largest dt <= dt_max such that each of n_out - 1 output intervals holds a whole number of steps."""
    segments = max(n_out - 1, 1)
    per = max(1, math.ceil((T / segments) / dt_max - 1e-12))
    return T / (segments * per), per


def run_spectral(
    m0: GridField,
    spec: KernelSpec,
    T: float,
    *,
    dt: float | None = None,
    n_out: int = 11,
    safety: float = 0.8,
) -> SpectralRun:
    """Integrate from m0 to time T with n_out equally spaced monitored outputs.

    Without ``dt`` the step is ``safety`` times the CFL bound of the initial
    data, shrunk so the output times are hit exactly.
    """
    if not T >= 0:
        raise ValueError("T must be non-negative")
    s = _solver(spec, m0.N, float(m0.L))
    mh = m0.to_spectral().values * s.mask
    if T == 0:
        n_out = 1
    dt_max = dt if dt is not None else safety * s.cfl_dt(mh)
    if T > 0 and not math.isfinite(dt_max):
        dt_max = T
    h, per = _plan_steps(T, dt_max, n_out) if T > 0 else (0.0, 0)
    times, snaps, en, curl, mom = [], [], [], [], []

    def record(t, mh):
        times.append(t)
        snaps.append(GridField(mh.copy(), m0.L, "spectral", m0.origin))
        en.append(s.energy(mh))
        curl.append(s.curl_mismatch(mh))
        mom.append(s.momentum_total(mh))

    record(0.0, mh)
    n_steps = 0
    for seg in range(n_out - 1):
        for _ in range(per):
            mh = s.step(mh, h)
            n_steps += 1
        record((seg + 1) * per * h, mh)
    return SpectralRun(
        np.array(times), snaps, np.array(en), np.array(curl), np.array(mom), spec, h, n_steps,
        {"N": m0.N, "L": float(m0.L), "cfl": CFL_NUMBER},
    )


# ---------------------------------------------------------------------------
# Convergence studies


@dataclass
class ConvergenceTable:
    study: str  # "eps" or "eta"
    params: np.ndarray  # varied parameter per run
    reference: tuple  # (eps, eta) of the reference run
    errors_l2: np.ndarray
    errors_hk: np.ndarray
    orders_l2: np.ndarray  # one per successive pair
    orders_hk: np.ndarray
    boot_std: np.ndarray  # bootstrap spread of orders_l2
    boot_interval: np.ndarray  # (pairs, 2) 2.5 / 97.5 percentiles
    T: float
    dt: float
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def order(self) -> float:
        """Order from the two smallest parameter values (L2 norm)."""
        return float(self.orders_l2[-1])

    def rows(self) -> list[tuple]:
        """(param, error_L2, error_Hk, order_estimate); the first row has no order."""
        out = []
        for i, p in enumerate(self.params):
            order = float("nan") if i == 0 else float(self.orders_l2[i - 1])
            out.append((float(p), float(self.errors_l2[i]), float(self.errors_hk[i]), order))
        return out


def _check_resolution(N: int, L: float, eps: float, eta: float, p: float):
    dx = L / N
    ell = eta / math.sqrt(p)
    if 0 < ell < dx:
        raise SymbolUnderResolved(
            f"smoothing length eta/sqrt(p) = {ell:.3g} is below the grid spacing {dx:.3g}; use N >= {2 ** math.ceil(math.log2(L / ell))}"
        )
    if eps * dx > 1:
        raise SymbolUnderResolved(f"penalty length 1/eps = {1 / eps:.3g} is below the grid spacing {dx:.3g}")


def _pair_orders(params, errs):
    p = np.asarray(params, dtype=float)
    e = np.asarray(errs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(e[:-1] / e[1:]) / np.log(p[:-1] / p[1:])


def convergence_experiment(
    initial_velocity: GridField,
    param_schedule,
    T: float,
    dt: float | None = None,
    *,
    p: float = 3,
    k: int = 2,
    n_boot: int = 200,
    seed: int = 0,
) -> ConvergenceTable:
    """Errors of v at time T against the limiting run, with pairwise order estimates.

    ``param_schedule`` is a list of (eps, eta). If eta is shared and eps varies
    the reference is (0, eta); if eps is shared and eta varies the reference is
    (eps, 0). Kernels use operator normalization so the smoothing symbol tends
    to 1 as eta -> 0. Errors are the grid L2 norm and the weighted spectral
    norm sum (1 + |xi|^2)^k |dv|^2. The order spread comes from resampling grid
    points with replacement.
    """
    sched = [(float(e), float(h)) for e, h in param_schedule]
    if len(sched) < 2:
        raise ValueError("need at least two parameter values")
    eps_vals = {e for e, _ in sched}
    eta_vals = {h for _, h in sched}
    if len(eta_vals) == 1 and len(eps_vals) == len(sched):
        study, ref = "eps", (0.0, sched[0][1])
        params = [e for e, _ in sched]
    elif len(eps_vals) == 1 and len(eta_vals) == len(sched):
        study, ref = "eta", (sched[0][0], 0.0)
        params = [h for _, h in sched]
    else:
        raise ValueError("vary exactly one of eps, eta along the schedule")
    if any(q <= 0 for q in params):
        raise ValueError("varied parameters must be positive")
    v0 = initial_velocity
    N, L = v0.N, float(v0.L)
    for e, h in sched + [ref]:
        _check_resolution(N, L, e, h, p)
    _, _, mask = _wavenumbers(N, L)
    vh0 = v0.to_spectral().values
    tail = np.sqrt(np.sum(np.abs(vh0[:, ~mask]) ** 2))
    if tail > 1e-10 * np.sqrt(np.sum(np.abs(vh0) ** 2)):
        raise SymbolUnderResolved("initial velocity has content beyond the dealiasing cut; refine the grid")

    def kspec(e, h):
        return KernelSpec(n=2, eps=e, eta=h, p=p, normalization="operator")

    specs = [kspec(*ref)] + [kspec(e, h) for e, h in sched]
    m0s = [momentum_from_velocity(v0, sp) for sp in specs]
    if dt is None:
        dt = 0.8 * min(_solver(sp, N, L).cfl_dt(m.values) for sp, m in zip(specs, m0s))
    runs = [run_spectral(m, sp, T, dt=dt, n_out=2) for sp, m in zip(specs, m0s)]
    vT = [r.velocity(-1) for r in runs]
    vref = vT[0]
    dh = [v.values - vref.values for v in vT[1:]]
    s = _solver(specs[0], N, L)
    weight = (1.0 + s.xi**2 + s.eta**2) ** k
    colw = np.full(weight.shape[1], 2.0)
    colw[0] = 1.0
    if N % 2 == 0:
        colw[-1] = 1.0
    norm = L**2 / N**4  # Parseval for the rfft2 layout

    def hk(d):
        return math.sqrt(norm * float(np.sum(colw * weight * np.sum(np.abs(d) ** 2, axis=0))))

    phys_sq = [np.sum(sfft.irfft2(d, s=(N, N)) ** 2, axis=0).ravel() for d in dh]
    err_l2 = np.array([math.sqrt(L**2 * float(np.mean(q))) for q in phys_sq])
    err_hk = np.array([hk(d) for d in dh])
    orders_l2 = _pair_orders(params, err_l2)
    orders_hk = _pair_orders(params, err_hk)

    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot, len(params) - 1))
    M = N * N
    for b in range(n_boot):
        idx = rng.integers(0, M, M)
        e = [math.sqrt(L**2 * float(np.mean(q[idx]))) for q in phys_sq]
        boots[b] = _pair_orders(params, e)
    return ConvergenceTable(
        study, np.array(params), ref, err_l2, err_hk, orders_l2, orders_hk,
        np.std(boots, axis=0), np.percentile(boots, [2.5, 97.5], axis=0).T, T, dt, k,
        {"N": N, "L": L, "p": p, "n_boot": n_boot, "seed": seed,
         "energy_drift_rel": [r.energy_drift_rel for r in runs]},
    )


# ---------------------------------------------------------------------------
# Binary grid format
#
# 8-byte magic b"VLGRID01", then little-endian header
#   uint32 components, uint32 N0, uint32 N1, float64 L, float64 origin_x,
#   float64 origin_y, 8-byte ASCII dtype code ("<f8", NUL padded)
# followed by the row-major payload of shape (components, N0, N1).

_MAGIC = b"VLGRID01"
_HEADER = struct.Struct("<3I3d8s")


def write_grid(path, fld: GridField) -> None:
    vals = np.ascontiguousarray(fld.to_physical().values, dtype="<f8")
    c, n0, n1 = vals.shape
    header = _HEADER.pack(c, n0, n1, float(fld.L), float(fld.origin[0]), float(fld.origin[1]), b"<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + header + vals.tobytes(order="C"))


def read_grid(path) -> GridField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a grid file (bad magic)")
    c, n0, n1, L, ox, oy, code = _HEADER.unpack_from(raw, 8)
    dtype = np.dtype(code.rstrip(b"\0").decode("ascii"))
    if n0 != n1:
        raise ValueError(f"{path}: grid must be square, got {n0} x {n1}")
    payload = raw[8 + _HEADER.size :]
    expected = c * n0 * n1 * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    vals = np.frombuffer(payload, dtype=dtype).reshape(c, n0, n1).astype(float)
    return GridField(vals, L, "physical", (ox, oy))
