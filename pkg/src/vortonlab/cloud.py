"""Vorton clouds sampled from smooth momentum fields and their comparison with the grid solver."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._env import worker_count
from .fields import velocity_field
from .kernels import KernelSpec
from .presets import StreamBlobs, get_preset
from .specfun import CapabilityError
from .spectral import _solver, grid_from_function, run_spectral
from .vortons import VortonSystem, integrate

__all__ = [
    "CloudRecipe",
    "CoarseCloudWarning",
    "ImageRefusal",
    "sample_cloud",
    "cloud_velocity",
    "ParticleGridReport",
    "particle_vs_grid",
]


class CoarseCloudWarning(UserWarning):
    """Lattice spacing exceeds the kernel length eta."""


class ImageRefusal(ValueError):
    """Periodic images on the torus are not negligible for the requested box."""


@dataclass(frozen=True)
class CloudRecipe:
    """Quadrature of a momentum field by point momenta.

    ``target`` is a preset name or a :class:`StreamBlobs` field. The support
    box [lo, hi]^2 is split into ``n`` x ``n`` cells; each cell gets one node
    (the centre for ``midpoint_lattice``, a uniform draw for
    ``random_stratified``) carrying momentum cell_area * m(node). Nodes where
    |m| is below ``drop_tol`` times its peak are skipped.
    """

    target: object = "single-blob"
    n: int = 16
    rule: str = "midpoint_lattice"
    box: tuple | None = None  # ((lo_x, lo_y), (hi_x, hi_y))
    seed: int = 0
    drop_tol: float = 1e-12

    def __post_init__(self):
        if self.rule not in ("midpoint_lattice", "random_stratified"):
            raise ValueError("rule must be 'midpoint_lattice' or 'random_stratified'")
        if self.n < 1:
            raise ValueError("n must be positive")

    def field(self) -> StreamBlobs:
        return get_preset(self.target) if isinstance(self.target, str) else self.target

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        else:
            f = self.field()
            c = np.asarray(f.centers, dtype=float)
            half = 8.5 * max(f.sx, f.sy)
            lo, hi = c.min(axis=0) - half, c.max(axis=0) + half
        if np.any(hi <= lo):
            raise ValueError("support box must have positive extent")
        return lo, hi

    def spacing(self) -> np.ndarray:
        lo, hi = self.support()
        return (hi - lo) / self.n

    def refined(self, factor: int = 2) -> "CloudRecipe":
        return CloudRecipe(self.target, self.n * factor, self.rule, self.box, self.seed, self.drop_tol)


def sample_cloud(recipe: CloudRecipe, spec: KernelSpec) -> VortonSystem:
    """Vortons at the quadrature nodes of ``recipe``; warns if the lattice is coarser than eta."""
    if spec.n != 2:
        raise CapabilityError("clouds are sampled from planar fields; use an n=2 kernel")
    lo, hi = recipe.support()
    h = (hi - lo) / recipe.n
    if np.max(h) > spec.eta:
        warnings.warn(
            f"lattice spacing {np.max(h):.3g} exceeds eta={spec.eta:g}; the cloud under-resolves the kernel",
            CoarseCloudWarning,
            stacklevel=2,
        )
    i = np.arange(recipe.n)
    X, Y = np.meshgrid(i, i, indexing="ij")
    cells = np.stack([X.ravel(), Y.ravel()], axis=1).astype(float)
    if recipe.rule == "midpoint_lattice":
        offset = np.full_like(cells, 0.5)
    else:
        offset = np.random.default_rng(recipe.seed).random(cells.shape)
    nodes = lo + (cells + offset) * h
    m = recipe.field()(nodes) * float(np.prod(h))
    size = np.linalg.norm(m, axis=1)
    peak = float(size.max()) if size.size else 0.0
    keep = size > recipe.drop_tol * peak if peak > 0 else np.zeros(len(nodes), dtype=bool)
    if not np.any(keep):
        # zero field: one resting vorton with zero momentum keeps the system well formed
        return VortonSystem(nodes[:1].copy(), np.zeros((1, 2)), spec)
    return VortonSystem(nodes[keep], m[keep], spec)


def cloud_velocity(state: VortonSystem, points, chunk: int = 2048) -> np.ndarray:
    """v = sum_a K(x - P_a) m_a at points (M, 2), evaluated in chunks."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty_like(pts)
    for s in range(0, len(pts), chunk):
        out[s : s + chunk] = velocity_field(state, pts[s : s + chunk])
    return out


# ---------------------------------------------------------------------------
# Particle versus grid


@dataclass
class ParticleGridReport:
    probe_times: np.ndarray
    levels: list  # n per axis for each refinement level
    n_particles: list
    discrepancy_max: np.ndarray  # (levels, probe_times), relative to max |v_grid|
    discrepancy_l2: np.ndarray  # (levels, probe_times), rms over probes relative to rms |v_grid|
    momentum_grid: np.ndarray  # (2,) total momentum of the grid run at T
    momentum_cloud: np.ndarray  # (levels, 2) total momentum of each cloud at T
    image_estimate: float
    meta: dict = field(default_factory=dict)

    @property
    def final_discrepancy(self) -> np.ndarray:
        return self.discrepancy_max[:, -1]

    @property
    def monotone(self) -> bool:
        d = self.final_discrepancy
        return bool(np.all(np.diff(d) < 0))

    @property
    def momentum_gap(self) -> float:
        return float(np.max(np.abs(self.momentum_cloud - self.momentum_grid)))

    def to_dict(self) -> dict:
        return {
            "probe_times": self.probe_times.tolist(),
            "levels": list(self.levels),
            "n_particles": list(self.n_particles),
            "discrepancy_max": self.discrepancy_max.tolist(),
            "discrepancy_l2": self.discrepancy_l2.tolist(),
            "momentum_grid": self.momentum_grid.tolist(),
            "momentum_cloud": self.momentum_cloud.tolist(),
            "momentum_gap": self.momentum_gap,
            "monotone": self.monotone,
            "image_estimate": self.image_estimate,
            "meta": self.meta,
        }


def _image_estimate(cloud: VortonSystem, probes: np.ndarray, L: float, centre: np.ndarray) -> float:
    """|v| of the free-space cloud on the boundary of the periodic cell, relative to its peak on the probes."""
    s = np.linspace(-L / 2, L / 2, 65)
    edge = np.concatenate(
        [
            np.stack([s, np.full_like(s, -L / 2)], 1),
            np.stack([s, np.full_like(s, L / 2)], 1),
            np.stack([np.full_like(s, -L / 2), s], 1),
            np.stack([np.full_like(s, L / 2), s], 1),
        ]
    ) + centre
    v_edge = cloud_velocity(cloud, edge)
    v_probe = cloud_velocity(cloud, probes)
    peak = float(np.max(np.linalg.norm(v_probe, axis=1)))
    return float(np.max(np.linalg.norm(v_edge, axis=1))) / max(peak, 1e-300)


def particle_vs_grid(
    recipe: CloudRecipe,
    spec: KernelSpec,
    T: float,
    *,
    levels: int = 3,
    grid_N: int = 512,
    grid_L: float = 24.0,
    probe_stride: int = 4,
    tol: float = 1e-9,
    image_tol: float = 1e-10,
) -> ParticleGridReport:
    """Evolve the same momentum field as vorton clouds and on the periodic grid.

    The clouds are ``recipe`` refined ``levels - 1`` times by 2x per axis. The
    grid run samples the field on a torus of period ``grid_L`` centred on the
    support. Velocities are compared on grid nodes inside the support box
    (every ``probe_stride``-th node) at T/4, T/2 and T. The run is refused if
    the free-space velocity of the finest cloud on the cell boundary exceeds
    ``image_tol`` of its peak, since periodic images would then be visible.
    """
    if not spec.is_smooth:
        raise CapabilityError(f"{spec.label()} is not smooth enough for vorton clouds")
    if spec.n != 2:
        raise CapabilityError("particle-versus-grid comparison is planar; use an n=2 kernel")
    if not T > 0:
        raise ValueError("T must be positive")
    lo, hi = recipe.support()
    centre = 0.5 * (lo + hi)
    recipes = [recipe]
    for _ in range(levels - 1):
        recipes.append(recipes[-1].refined(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoarseCloudWarning)
        clouds = [sample_cloud(r, spec) for r in recipes]

    grid0 = grid_from_function(recipe.field(), grid_N, grid_L, origin=tuple(centre - grid_L / 2))
    coords = grid0.coords()
    inside = np.all((coords >= lo) & (coords <= hi), axis=-1)
    sel = np.zeros_like(inside)
    sel[::probe_stride, ::probe_stride] = True
    probe_idx = np.nonzero(inside & sel)
    probes = coords[probe_idx]

    image = _image_estimate(clouds[-1], probes, grid_L, centre)
    if image > image_tol:
        raise ImageRefusal(
            f"free-space velocity on the periodic cell boundary is {image:.2e} of its peak (> {image_tol:g}); enlarge grid_L"
        )

    probe_times = np.array([T / 4, T / 2, T])
    solver = _solver(spec, grid_N, float(grid_L))

    def grid_task():
        m0 = grid0.to_spectral()
        run = run_spectral(m0, spec, T, n_out=5)
        vel = {}
        for t_probe in probe_times:
            i = int(np.argmin(np.abs(run.times - t_probe)))
            v = run.velocity(i).to_physical().values
            vel[float(t_probe)] = np.stack([v[0][probe_idx], v[1][probe_idx]], axis=1)
        return vel, solver.momentum_total(run.momenta[-1].values), run

    def cloud_task(c):
        traj = integrate(c, T, times=np.concatenate([[0.0], probe_times]), tol=tol)
        vel = {float(t): cloud_velocity(traj.state(i + 1), probes) for i, t in enumerate(probe_times)}
        return vel, traj.final.momenta.sum(axis=0), traj

    with ThreadPoolExecutor(max_workers=min(2, worker_count())) as pool:
        grid_future = pool.submit(grid_task)
        cloud_results = [cloud_task(c) for c in clouds]
        grid_vel, grid_mom, grid_run = grid_future.result()

    d_max = np.empty((levels, 3))
    d_l2 = np.empty((levels, 3))
    for li, (vel, _, _) in enumerate(cloud_results):
        for ti, t_probe in enumerate(probe_times):
            g = grid_vel[float(t_probe)]
            diff = np.linalg.norm(vel[float(t_probe)] - g, axis=1)
            gn = np.linalg.norm(g, axis=1)
            d_max[li, ti] = diff.max() / gn.max()
            d_l2[li, ti] = math.sqrt(np.mean(diff**2) / np.mean(gn**2))
    return ParticleGridReport(
        probe_times,
        [r.n for r in recipes],
        [c.N for c in clouds],
        d_max,
        d_l2,
        np.asarray(grid_mom),
        np.array([res[1] for res in cloud_results]),
        image,
        {
            "grid_N": grid_N,
            "grid_L": grid_L,
            "grid_dt": grid_run.dt,
            "grid_energy_drift_rel": grid_run.energy_drift_rel,
            "cloud_energy_drift_rel": [res[2].meta.get("energy_drift_rel") for res in cloud_results],
            "spec": spec.label(),
        },
    )
