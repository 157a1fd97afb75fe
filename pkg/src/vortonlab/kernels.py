r"""Matrix-valued regularized Euler kernels in radial form.

Every kernel in the family is translation and rotation invariant, so at a
point :math:`x = \rho u` it is

.. math:: K(x) = K_1(\rho) P_u + K_2(\rho) P_{u^\perp},

with :math:`K(0) = \kappa I` for the smooth members. The four members are
selected by ``(eps, eta)``:

* ``(0, 0)``: the Leray projector, matrix-free only;
* ``(eps, 0)``: identity part plus a principal-value Yukawa Hessian tail;
* ``(0, eta)``: ball means of the smoothing profile G;
* ``(eps, eta)``: ``G I + Hess(g2)`` with ``g2 = G * H_eps``, tabulated by
  radial Fourier inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .specfun import (
    CapabilityError,
    DomainError,
    GreensProfile,
    ball_mean_and_gap,
    radial_bundle,
    bessel_k,
    green_derivative,
    green_eval,
    radial_fourier_inverse,
)

__all__ = [
    "KernelSpec",
    "RadialKernel",
    "radial_pair",
    "kernel_matrix",
    "kernel_matrices",
    "kernel_directional_derivative",
    "composite_profile_direct",
]


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of a kernel K_{eps,eta}.

    ``eps`` is an inverse length, ``eta`` a length. ``p`` and
    ``normalization`` describe the smoothing profile (see
    :class:`~vortonlab.specfun.GreensProfile`); ``gaussian_limit`` replaces it
    by the Gaussian.
    """

    n: int = 3
    eps: float = 0.0
    eta: float = 1.0
    p: int = 3
    normalization: str = "unit_peak"
    gaussian_limit: bool = False

    def __post_init__(self):
        if self.n not in (2, 3):
            raise CapabilityError(f"dimension n={self.n} not supported (n must be 2 or 3)")
        if self.eps < 0 or self.eta < 0:
            raise DomainError("eps and eta must be non-negative")
        if int(self.p) != self.p or self.p < 1:
            raise DomainError("p must be a positive integer")
        if self.normalization not in ("operator", "unit_peak", "unit_mass"):
            raise CapabilityError(f"unknown normalization {self.normalization!r}")

    @property
    def is_euler(self) -> bool:
        return self.eps == 0 and self.eta == 0

    @property
    def is_singular(self) -> bool:
        return self.eta == 0

    @property
    def is_smooth(self) -> bool:
        """True when the kernel is at least C^2, which vorton dynamics require."""
        if self.eta <= 0:
            return False
        return self.gaussian_limit or self.p >= (self.n + 3) / 2

    def profile(self) -> GreensProfile:
        if self.eta <= 0:
            raise CapabilityError("kernel has no smoothing profile (eta = 0)")
        kind = "gaussian_limit" if self.gaussian_limit else "matern_G_eta_p"
        return GreensProfile(kind, self.n, 0.0, self.eta, self.p, self.normalization)

    def smoothing_symbol(self, k):
        """Fourier symbol of the smoothing profile (1 when eta = 0)."""
        if self.eta == 0:
            return np.ones_like(np.asarray(k, dtype=float))
        return self.profile().symbol(k)

    def label(self) -> str:
        return f"K(n={self.n},eps={self.eps:g},eta={self.eta:g},p={self.p},{self.normalization})"


@dataclass(frozen=True)
class RadialKernel:
    """Radial eigenvalue profiles of a kernel.

    ``k1``/``k2`` are the eigenvalues along and across the separation,
    ``dk1``/``dk2`` their radial derivatives and ``gap`` returns
    ``(K1 - K2) / rho`` evaluated without cancellation. For singular kernels
    ``kappa`` is ``nan`` and ``delta_coeff`` is the weight of the identity
    delta part.
    """

    spec: KernelSpec
    k1: Callable
    k2: Callable
    dk1: Callable
    dk2: Callable
    gap: Callable
    kappa: float
    singular: bool = False
    delta_coeff: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)
    bundle: Callable | None = field(default=None, compare=False, repr=False)
    deficit: Callable | None = field(default=None, compare=False, repr=False)

    def profiles(self, rho: np.ndarray):
        """``(K1, K2, K1', K2', (K1-K2)/rho)`` on an array of radii in one pass."""
        if self.bundle is not None:
            return self.bundle(np.asarray(rho, dtype=float))
        return self.k1(rho), self.k2(rho), self.dk1(rho), self.dk2(rho), self.gap(rho)

    def deficits(self, rho):
        """``(kappa - K1, kappa - K2)``; both are O(rho^2) and computed without cancellation when possible."""
        if self.deficit is not None:
            return self.deficit(rho)
        return self.kappa - self.k1(rho), self.kappa - self.k2(rho)


def _as_array(rho):
    r = np.asarray(rho, dtype=float)
    return r, np.atleast_1d(r)


def _shape_like(r, out):
    return float(out[0]) if r.ndim == 0 else out.reshape(r.shape)


def _ball_mean_kernel(spec: KernelSpec) -> RadialKernel:
    prof = spec.profile()
    n = spec.n
    if not spec.gaussian_limit and prof.nu <= 0:
        raise CapabilityError("smoothing profile is unbounded at the origin; kernel has no finite kappa")
    g0 = prof.peak()

    def parts(rho):
        r, flat = _as_array(rho)
        if np.any(flat < 0):
            raise DomainError("rho must be non-negative")
        M, D = ball_mean_and_gap(prof, flat)
        return r, flat, M, D

    def k1(rho):
        r, _, M, _ = parts(rho)
        return _shape_like(r, (1.0 - 1.0 / n) * M)

    def k2(rho):
        r, flat, M, _ = parts(rho)
        return _shape_like(r, _g(prof, flat) - M / n)

    def dk1(rho):
        r, flat, _, D = parts(rho)
        return _shape_like(r, (n - 1) * D)

    def dk2(rho):
        r, flat, _, D = parts(rho)
        return _shape_like(r, _dg(prof, flat) - D)

    def gap(rho):
        r, _, _, D = parts(rho)
        return _shape_like(r, -D)

    def bundle(rho):
        r, flat = _as_array(rho)
        if np.any(flat < 0):
            raise DomainError("rho must be non-negative")
        G, dG, M, D = radial_bundle(prof, flat)
        out = ((1.0 - 1.0 / n) * M, G - M / n, (n - 1) * D, dG - D, -D)
        return tuple(_shape_like(r, v) for v in out)

    def deficit(rho):
        # G(0) - G(r) = -r int_0^1 G'(rs) ds and G(0) - M(r) = -r int_0^1 G'(rs)(1 - s^n) ds
        r, flat = _as_array(rho)
        small = flat < _DEFICIT_SWITCH * prof.length
        d_mean = np.empty_like(flat)
        d_value = np.empty_like(flat)
        if np.any(small):
            rs = flat[small][:, None] * _GL_T[None, :]
            dg = _dg(prof, rs.ravel()).reshape(rs.shape)
            d_value[small] = -flat[small] * (dg @ _GL_W)
            d_mean[small] = -flat[small] * ((dg * (1.0 - _GL_T**n)) @ _GL_W)
        big = ~small
        if np.any(big):
            M, _ = ball_mean_and_gap(prof, flat[big])
            d_value[big] = g0 - _g(prof, flat[big])
            d_mean[big] = g0 - M
        return _shape_like(r, (1.0 - 1.0 / n) * d_mean), _shape_like(r, d_value - d_mean / n)

    return RadialKernel(spec, k1, k2, dk1, dk2, gap, (1.0 - 1.0 / n) * g0, bundle=bundle, deficit=deficit)


_GL_T, _GL_W = np.polynomial.legendre.leggauss(32)
_GL_T = 0.5 * (_GL_T + 1.0)
_GL_W = 0.5 * _GL_W
_DEFICIT_SWITCH = 0.5


def _g(prof, r):
    return np.where(r == 0, prof.peak(), _safe(green_eval, prof, r))


def _dg(prof, r):
    return np.where(r == 0, 0.0, _safe(green_derivative, prof, r))


def _safe(fn, prof, r):
    rr = np.where(r == 0, 1.0, r)
    return np.asarray(fn(prof, rr), dtype=float)


def _yukawa_hessian(eps: float, n: int, r: np.ndarray):
    """Return H'', H'/r, H''' and (H'/r)' of the Yukawa profile at r > 0."""
    x = eps * r
    if n == 3:
        e = np.exp(-x) / (4 * np.pi)
        h2 = e * (2 + 2 * x + x * x) / r**3
        h1r = -e * (1 + x) / r**3
        dh2 = -e * (6 + 6 * x + 3 * x * x + x**3) / r**4
    else:
        k0, k1 = bessel_k(0, x), bessel_k(1, x)
        h2 = eps**2 * (k0 + k1 / x) / (2 * np.pi)
        h1r = -eps * k1 / (2 * np.pi * r)
        # K0' = -K1 and (K1/x)' = -K0/x - 2 K1/x^2
        dh2 = eps**3 * (-k1 - k0 / x - 2 * k1 / x**2) / (2 * np.pi)
    return h2, h1r, dh2, (h2 - h1r) / r


def _yukawa_tail(spec: KernelSpec) -> RadialKernel:
    """K_{eps,0}: (1 - 1/n) delta I plus the principal-value Hessian of H_eps."""

    def make(i, divide=False):
        def f(rho):
            r, flat = _as_array(rho)
            if np.any(flat <= 0):
                raise DomainError("singular kernel tail is defined only for rho > 0")
            parts = _yukawa_hessian(spec.eps, spec.n, flat)
            out = (parts[0] - parts[1]) / flat if divide else parts[i]
            return _shape_like(r, out)

        return f

    return RadialKernel(
        spec,
        make(0),
        make(1),
        make(2),
        make(3),
        make(0, divide=True),
        math.nan,
        singular=True,
        delta_coeff=1.0 - 1.0 / spec.n,
    )


def composite_profile_direct(spec: KernelSpec, rho: float) -> tuple[float, float]:
    """Direct quadrature of ``(g2(rho), g2'(rho)/rho)`` with g2 = G * H_eps.

    Used to build the tabulated K_{eps,eta} profiles and as their oracle.
    """
    sym = _composite_symbol(spec)
    k_eta = 1.0 / spec.profile().length
    scale = min(k_eta, spec.eps) if spec.eps > 0 else k_eta
    opts = dict(scale=scale, extent=k_eta, check_decay=False)
    val = radial_fourier_inverse(sym, spec.n, rho, kind="value", **opts)
    q = radial_fourier_inverse(sym, spec.n, rho, kind="dr_over_r", **opts)
    return val, q


def _composite_symbol(spec: KernelSpec):
    prof = spec.profile()
    eps2 = spec.eps**2
    return lambda k: prof.symbol(k) / (eps2 + k * k)


def _composite_pieces(spec: KernelSpec, rho: np.ndarray):
    """(G, G', g2, q, g2'', q') on an array of radii from direct inversion."""
    prof = spec.profile()
    n, eps2 = spec.n, spec.eps**2
    vals = np.array([composite_profile_direct(spec, float(r)) for r in rho])
    g2, q = vals[:, 0], vals[:, 1]
    G = _g(prof, rho)
    dG = _dg(prof, rho)
    # Laplacian identity: g2'' + (n-1) g2'/r = eps^2 g2 - G
    g2pp = eps2 * g2 - G - (n - 1) * q
    with np.errstate(divide="ignore", invalid="ignore"):
        dq = np.where(rho > 0, (g2pp - q) / rho, 0.0)
    return G, dG, g2, q, g2pp, dq


@lru_cache(maxsize=32)
def _tabulated_kernel(spec: KernelSpec, n_grid: int = 300) -> RadialKernel:
    prof = spec.profile()
    ell = prof.length
    n, eps, eps2 = spec.n, spec.eps, spec.eps**2
    r_min, r_max = 1e-4 * ell, 50.0 * ell
    grid = np.geomspace(r_min, r_max, n_grid)
    G, dG, g2, q, g2pp, dq = _composite_pieces(spec, grid)
    k1 = G + g2pp
    k2 = G + q
    # derivative of g2'' from the Laplacian identity
    dk1 = eps2 * grid * q - (n - 1) * dq
    dk2 = dG + dq
    # Hermite interpolation in log r keeps each derivative consistent with
    # its profile, so vorton energy stays conserved to integrator accuracy.
    lg = np.log(grid)
    h1 = CubicHermiteSpline(lg, k1, grid * dk1)
    h2 = CubicHermiteSpline(lg, k2, grid * dk2)
    _, q0 = composite_profile_direct(spec, 0.0)
    kappa = float(prof.peak() + q0)
    # even profiles: kappa + c rho^2 below the grid
    c1 = (k1[0] - kappa) / r_min**2
    c2 = (k2[0] - kappa) / r_min**2
    # Far out g2 = Ghat(i eps) H_eps up to terms of order exp(-r/ell). When the
    # screening pole is not the nearest singularity all values are below exp(-50).
    far_amp = float(prof.symbol_of_square(-eps2)) if eps * ell < 0.5 else 0.0

    def evaluate(flat):
        out = {key: np.empty_like(flat) for key in ("k1", "k2", "dk1", "dk2")}
        lo = flat < r_min
        hi = flat > r_max
        mid = ~(lo | hi)
        r = flat[lo]
        out["k1"][lo], out["k2"][lo] = kappa + c1 * r * r, kappa + c2 * r * r
        out["dk1"][lo], out["dk2"][lo] = 2 * c1 * r, 2 * c2 * r
        r = flat[mid]
        u = np.log(r)
        out["k1"][mid], out["k2"][mid] = h1(u), h2(u)
        out["dk1"][mid], out["dk2"][mid] = h1(u, 1) / r, h2(u, 1) / r
        if np.any(hi):
            r = flat[hi]
            f2, f1r, df2, df1r = _yukawa_hessian(eps, n, r)
            g, dg = _g(prof, r), _dg(prof, r)
            out["k1"][hi], out["k2"][hi] = g + far_amp * f2, g + far_amp * f1r
            out["dk1"][hi], out["dk2"][hi] = dg + far_amp * df2, dg + far_amp * df1r
        return out, lo

    def make(key):
        def f(rho):
            r, flat = _as_array(rho)
            if np.any(flat < 0):
                raise DomainError("rho must be non-negative")
            vals, lo = evaluate(flat)
            if key == "gap":
                with np.errstate(invalid="ignore", divide="ignore"):
                    res = np.where(lo, (c1 - c2) * flat, (vals["k1"] - vals["k2"]) / flat)
            else:
                res = vals[key]
            return _shape_like(r, res)

        return f

    def bundle(rho):
        r, flat = _as_array(rho)
        if np.any(flat < 0):
            raise DomainError("rho must be non-negative")
        vals, lo = evaluate(flat)
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.where(lo, (c1 - c2) * flat, (vals["k1"] - vals["k2"]) / flat)
        keys = ("k1", "k2", "dk1", "dk2")
        return tuple(_shape_like(r, vals[k]) for k in keys) + (_shape_like(r, gap),)

    return RadialKernel(
        spec,
        make("k1"),
        make("k2"),
        make("dk1"),
        make("dk2"),
        make("gap"),
        kappa,
        meta={"grid": (r_min, r_max, n_grid), "tabulated": True},
        bundle=bundle,
    )


def radial_pair(spec: KernelSpec) -> RadialKernel:
    """Radial eigenvalue profiles ``(K1, K2, kappa)`` of a kernel.

    K_{0,eta} uses ball means of G; K_{eps,eta} is tabulated on a log grid from
    radial Fourier inversion; K_{eps,0} returns the singular split. The Leray
    projector K_{0,0} has no radial profile and raises :class:`CapabilityError`.
    """
    if spec.is_euler:
        raise CapabilityError("K_{0,0} is the Leray projector; it has no finite radial profile")
    if spec.eta == 0:
        return _yukawa_tail(spec)
    if spec.eps == 0:
        return _ball_mean_kernel(spec)
    return _tabulated_kernel(spec)


# ---------------------------------------------------------------------------
# Matrix forms
# ---------------------------------------------------------------------------


def kernel_matrices(rk: RadialKernel, x: np.ndarray) -> np.ndarray:
    """K(x) for an array of points ``x`` of shape (..., n)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    rho = np.linalg.norm(x, axis=-1)
    if rk.singular and np.any(rho == 0):
        raise DomainError("singular kernel cannot be evaluated at x = 0")
    safe = np.where(rho > 0, rho, 1.0)
    u = x / safe[..., None]
    k1 = np.asarray(rk.k1(rho))
    k2 = np.asarray(rk.k2(rho))
    uu = u[..., :, None] * u[..., None, :]
    eye = np.eye(n)
    out = k2[..., None, None] * eye + (k1 - k2)[..., None, None] * uu
    if not rk.singular:
        zero = rho == 0
        if np.any(zero):
            out[zero] = rk.kappa * eye
    return out


def kernel_matrix(spec_or_rk, x) -> np.ndarray:
    """K(x) = K1 P_u + K2 P_{u-perp}, or kappa I at the origin."""
    rk = spec_or_rk if isinstance(spec_or_rk, RadialKernel) else radial_pair(spec_or_rk)
    x = np.asarray(x, dtype=float)
    if x.shape != (rk.spec.n,):
        raise DomainError(f"point must have shape ({rk.spec.n},)")
    return kernel_matrices(rk, x)


def kernel_directional_derivative(spec_or_rk, x, v) -> np.ndarray:
    """Directional derivative D_v K(x).

    D_v K = K1' <v,u> P_u + K2' <v,u> P_perp + (K1 - K2)/rho (u (x) w + w (x) u),
    where w is the component of v orthogonal to u. Returns the zero matrix at
    the origin for C^1 kernels.
    """
    rk = spec_or_rk if isinstance(spec_or_rk, RadialKernel) else radial_pair(spec_or_rk)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = x.shape[0]
    rho = float(np.linalg.norm(x))
    if rho == 0:
        if rk.singular:
            raise DomainError("singular kernel has no derivative at x = 0")
        return np.zeros((n, n))
    u = x / rho
    vu = float(v @ u)
    w = v - vu * u
    Pu = np.outer(u, u)
    Pp = np.eye(n) - Pu
    return (
        rk.dk1(rho) * vu * Pu
        + rk.dk2(rho) * vu * Pp
        + rk.gap(rho) * (np.outer(u, w) + np.outer(w, u))
    )
