"""``vorton-lab``: run a scenario file and write CSV/JSON artifacts plus a manifest.

Exit codes: 0 success, 1 failed invariant check, 2 invalid scenario, 3 numerical abort.
"""

from __future__ import annotations

import os

# BLAS pools are pinned before numpy loads so results do not depend on the machine's core count
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from importlib import metadata  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from ._env import worker_count  # noqa: E402
from .artifacts import ArtifactWriter  # noqa: E402
from .config import COMMANDS, SCHEMA, ConfigError, Scenario, load_scenario, preset_names, preset_text  # noqa: E402
from .ode import StepUnderflow  # noqa: E402
from .specfun import CapabilityError, DivergenceError, DomainError  # noqa: E402
from .spectral import CflViolation  # noqa: E402
from .vortons import IntegrationAbort  # noqa: E402

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

ETA_SCHEDULE_EPS = 0.5
DEFAULT_SCHEDULES = {
    "eps": [[0.4, 0.0], [0.2, 0.0], [0.1, 0.0]],
    "eta": [[ETA_SCHEDULE_EPS, 0.2], [ETA_SCHEDULE_EPS, 0.1], [ETA_SCHEDULE_EPS, 0.05]],
}


class NumericalAbort(RuntimeError):
    """A command stopped early after writing what it had."""

    def __init__(self, reason: str, info: dict):
        super().__init__(reason)
        self.info = info


# ---------------------------------------------------------------------------
# Commands. Each takes (scenario, writer) and returns a dict for the manifest
# with optional keys "drift" and "summary".


def _vortons(sc: Scenario, spec):
    from .vortons import VortonSystem

    P = np.asarray(sc.params.get("positions"), dtype=float)
    m = np.asarray(sc.params.get("momenta"), dtype=float)
    if P.shape != m.shape:
        raise ConfigError(f"fields 'params.positions' and 'params.momenta' differ in shape: {P.shape} vs {m.shape}")
    if P.shape[1] != spec.n:
        raise ConfigError(f"field 'params.positions': vectors have {P.shape[1]} components but kernel.n = {spec.n}")
    return VortonSystem(P, m, spec)


def _conserved_header(n: int):
    pairs = [f"L_{i}{j}" for i in range(n) for j in range(i + 1, n)]
    return ["t", "energy"] + [f"p_{i}" for i in range(n)] + pairs


def _conserved_row(t, snap, n):
    iu = np.triu_indices(n, k=1)
    return [t, snap.energy, *snap.linear_momentum, *snap.angular_momentum[iu]]


def cmd_simulate(sc: Scenario, w: ArtifactWriter) -> dict:
    from .vortons import conserved_quantities, integrate

    spec = sc.kernel_spec()
    state = _vortons(sc, spec)
    p = sc.params
    reason = None
    try:
        traj = integrate(state, p["T"], p["method"], tol=p["tol"], dt=p["dt"], n_out=p["n_out"])
    except IntegrationAbort as exc:
        traj, reason = exc.trajectory, str(exc)
    n, N = spec.n, state.N
    header = ["t", "vorton"] + [f"P_{i}" for i in range(n)] + [f"m_{i}" for i in range(n)]
    rows = (
        [t, a, *traj.positions[k, a], *traj.momenta[k, a]]
        for k, t in enumerate(traj.times)
        for a in range(N)
    )
    w.csv("trajectory.csv", header, rows)
    w.csv(
        "conserved.csv",
        _conserved_header(n),
        [_conserved_row(t, conserved_quantities(traj.state(k)), n) for k, t in enumerate(traj.times)],
    )
    drift = {k: traj.meta[k] for k in ("energy_drift_rel", "linear_momentum_drift_rel", "angular_momentum_drift_rel") if k in traj.meta}
    info = {"drift": drift, "summary": {"termination": traj.meta.get("termination"), "t_last": traj.meta.get("t_last")}}
    if reason:
        raise NumericalAbort(f"integration aborted near t={traj.meta.get('t_last'):.6g}: {reason}", info)
    return info


def cmd_reduce2(sc: Scenario, w: ArtifactWriter) -> dict:
    from .twovorton import ReducedTwoVortonState, integrate_reduced, reduced_energy

    spec = sc.kernel_spec()
    p = sc.params
    n = spec.n
    dP, dm = np.asarray(p["deltaP"], dtype=float), np.asarray(p["deltam"], dtype=float)
    for key, v in (("deltaP", dP), ("deltam", dm)):
        if v.shape != (n,):
            raise ConfigError(f"field 'params.{key}': expected {n} components for kernel.n = {n}")
    header = ["t"] + [f"dP_{i}" for i in range(n)] + [f"dm_{i}" for i in range(n)] + ["rho", "energy"]
    summary, drifts, aborted = [], [], []
    for k, y in enumerate(p["mbar_y"]):
        mbar = np.zeros(n)
        mbar[1] = y
        state = ReducedTwoVortonState(dP, dm, mbar, spec)
        traj = integrate_reduced(state, p["T"], tol=p["tol"], n_out=p["n_out"])
        energy = np.array([reduced_energy(traj.state(i)) for i in range(len(traj.times))])
        rows = (
            [t, *traj.deltaP[i], *traj.deltam[i], traj.rho[i], energy[i]] for i, t in enumerate(traj.times)
        )
        w.csv(f"reduce2_ybar_{k:02d}.csv", header, rows)
        e0 = energy[0]
        drift = float(np.max(np.abs(energy - e0)) / abs(e0)) if e0 != 0 else float(np.max(np.abs(energy)))
        drifts.append(drift)
        rho = traj.rho
        entry = {
            "mbar_y": y,
            "file": f"reduce2_ybar_{k:02d}.csv",
            "rho_initial": float(rho[0]),
            "rho_min": float(rho.min()),
            "rho_final": float(rho[-1]),
            # attracting orbits end closer than they started
            "behaviour": "attracting" if rho[-1] < rho[0] else "repelling",
            "termination": traj.meta["termination"],
        }
        if "abort_message" in traj.meta:
            aborted.append(f"mbar_y={y}: {traj.meta['abort_message']}")
        summary.append(entry)
    w.json("reduce2_summary.json", {"spec": spec.label(), "orbits": summary})
    info = {"drift": {"reduced_energy_drift_rel_max": max(drifts)}, "summary": {"orbits": summary}}
    if aborted:
        raise NumericalAbort("; ".join(aborted), info)
    return info


def cmd_contours(sc: Scenario, w: ArtifactWriter) -> dict:
    from .twovorton import CAPTURE_THRESHOLD, energy_contours

    spec = sc.kernel_spec()
    p = sc.params
    grid = energy_contours(spec, p["omega"], tuple(p["rho_range"]), tuple(p["dm_range"]), tuple(p["grid_shape"]))
    rows = ([r, d, grid.energy[i, j]] for i, r in enumerate(grid.rho) for j, d in enumerate(grid.dm_norm))
    w.csv("contours.csv", ["rho", "dm_norm", "energy"], rows)
    header = {
        "spec": spec.label(),
        "omega_norm": grid.omega_norm,
        "grid_shape": list(p["grid_shape"]),
        "energy_units": "reduced (twice the two-vorton energy)",
        "capture_level": CAPTURE_THRESHOLD * grid.omega_norm**2,
        "boundary_tangent": grid.boundary,
        "boundary_half": grid.boundary_caption,
        "nan_meaning": "rho |dm| < 2 |w|: off the hyperboloid",
    }
    w.json("contours.json", header)
    finite = grid.energy[np.isfinite(grid.energy)]
    return {"summary": {"energy_min": float(finite.min()), "energy_max": float(finite.max())}}


def _plane_points(extent: float, res: int, n: int, z: float) -> np.ndarray:
    ax = np.linspace(-extent, extent, res)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = [X.ravel(), Y.ravel()]
    if n == 3:
        pts.append(np.full(X.size, z))
    return np.stack(pts, axis=1)


def cmd_field(sc: Scenario, w: ArtifactWriter) -> dict:
    from .fields import collapse_dipole_field, euler_dipole_2d, jacobian_fd, velocity_field

    spec = sc.kernel_spec()
    p = sc.params
    kind = p["kind"]
    summary = {"kind": kind}
    if kind == "vortons":
        if "positions" not in p or "momenta" not in p:
            raise ConfigError("field 'params.positions': required for kind 'vortons'")
        state = _vortons(sc, spec)
        n = spec.n
        pts = _plane_points(p["extent"], p["resolution"], n, p["plane_z"])
        v = velocity_field(state, pts)
    elif kind == "collapse":
        if spec.n != 3:
            raise ConfigError("field 'kernel.n': the collapse field needs n = 3")
        n = 3
        f = collapse_dipole_field(spec, tuple(p["coeffs"]))
        pts = _plane_points(p["extent"], p["resolution"], 3, p["plane_z"])
        v = np.array([f(x) for x in pts])
        # the kernel has an odd |x|^3 term, so difference error is O(h), not O(h^4)
        J = jacobian_fd(f, np.zeros(3), h=1e-8)
        eig = np.linalg.eigvals(J)
        eig = eig[np.lexsort((eig.imag, eig.real))]
        summary.update(
            coeffs=list(p["coeffs"]),
            velocity_at_origin=f(np.zeros(3)),
            jacobian_at_origin=J,
            trace=float(np.trace(J)),
            eigenvalues=[[float(e.real), float(e.imag)] for e in eig],
        )
    else:
        n = 2
        pts = _plane_points(p["extent"], p["resolution"], 2, 0.0)
        v = np.full_like(pts, np.nan)
        ok = np.sum(pts * pts, axis=1) > 0
        v[ok] = euler_dipole_2d(pts[ok])
        summary["pole"] = "value is nan at the origin"
    header = ["x", "y"] + (["z"] if pts.shape[1] == 3 else []) + [f"v_{i}" for i in range(n)]
    w.csv("field.csv", header, ([*x, *vx] for x, vx in zip(pts, v)))
    w.json("field.json", {"spec": spec.label(), **summary})
    return {"summary": summary}


def cmd_flowmap(sc: Scenario, w: ArtifactWriter) -> dict:
    from .fields import default_truncation_time, flow_map
    from .vortons import evolve

    spec = sc.kernel_spec()
    p = sc.params
    state = _vortons(sc, spec)
    T_star = default_truncation_time(state)
    t0 = -T_star if p["t0"] is None else float(p["t0"])
    t1 = T_star if p["t1"] is None else float(p["t1"])
    start = evolve(state, t0, tol=min(p["tol"], 1e-10))
    nx, ny = p["shape"]
    ext = p["extent"]
    ax, ay = np.linspace(-ext, ext, nx), np.linspace(-ext, ext, ny)
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    seeds = np.stack([X.ravel(), Y.ravel()] + ([np.zeros(X.size)] if spec.n == 3 else []), axis=1)
    planar = spec.n == 2
    fm = flow_map(
        start, seeds, t0, t1, tol=p["tol"],
        grid_shape=(nx, ny) if planar else None,
        spacing=(ax[1] - ax[0], ay[1] - ay[0]) if planar else None,
    )
    n = spec.n
    det = fm.jac_det.ravel() if fm.jac_det is not None else np.full(len(seeds), np.nan)
    header = [f"x0_{i}" for i in range(n)] + [f"x1_{i}" for i in range(n)] + ["jac_det", "failed"]
    w.csv("flowmap.csv", header, ([*a, *b, d, f] for a, b, d, f in zip(fm.seeds, fm.mapped, det, fm.failed)))
    summary = {
        "t0": t0,
        "t1": t1,
        "truncation_time": T_star,
        "n_failed": int(fm.failed.sum()),
        "jac_det_max_deviation": float(np.nanmax(np.abs(det - 1))) if np.any(np.isfinite(det)) else None,
    }
    w.json("flowmap.json", {"spec": spec.label(), **summary})
    return {"summary": summary}


def cmd_converge(sc: Scenario, w: ArtifactWriter) -> dict:
    from .presets import get_preset
    from .spectral import convergence_experiment, grid_from_function, read_grid

    p = sc.params
    if p["initial_grid"]:
        v0 = read_grid(p["initial_grid"])
    else:
        v0 = grid_from_function(get_preset(p["preset"]), p["N"], p["L"])
    schedule = p["schedule"] if p["schedule"] is not None else DEFAULT_SCHEDULES[p["study"]]
    table = convergence_experiment(
        v0, schedule, p["T"], p["dt"], p=sc.kernel["p"], k=p["k"], n_boot=p["n_boot"], seed=sc.seed
    )
    if table.study != p["study"]:
        raise ConfigError(f"field 'params.schedule': varies {table.study}, but params.study is {p['study']!r}")
    w.csv("converge.csv", [table.study, "error_L2", "error_Hk", "order_estimate"], table.rows())
    report = {
        "study": table.study,
        "reference": list(table.reference),
        "params": table.params,
        "errors_l2": table.errors_l2,
        "errors_hk": table.errors_hk,
        "orders_l2": table.orders_l2,
        "orders_hk": table.orders_hk,
        "order": table.order,
        "bootstrap_std": table.boot_std,
        "bootstrap_interval_95": table.boot_interval,
        "T": table.T,
        "dt": table.dt,
        "k": table.k,
        "N": v0.N,
        "L": v0.L,
    }
    w.json("converge.json", report)
    drift = {"energy_drift_rel_max": max(table.meta["energy_drift_rel"])}
    return {"drift": drift, "summary": {"order": table.order, "orders_l2": table.orders_l2}}


def cmd_cloudcompare(sc: Scenario, w: ArtifactWriter) -> dict:
    from .cloud import CloudRecipe, particle_vs_grid

    spec = sc.kernel_spec()
    p = sc.params
    recipe = CloudRecipe(p["preset"], n=p["n"], rule=p["rule"], seed=sc.seed)
    rep = particle_vs_grid(
        recipe, spec, p["T"], levels=p["levels"], grid_N=p["grid_N"], grid_L=p["grid_L"],
        probe_stride=p["probe_stride"], tol=p["tol"],
    )
    rows = (
        [rep.levels[li], rep.n_particles[li], t, rep.discrepancy_max[li, ti], rep.discrepancy_l2[li, ti]]
        for li in range(len(rep.levels))
        for ti, t in enumerate(rep.probe_times)
    )
    w.csv("cloudcompare.csv", ["n_per_axis", "n_particles", "t", "discrepancy_max", "discrepancy_l2"], rows)
    w.json("cloudcompare.json", rep.to_dict())
    drift = {
        "grid_energy_drift_rel": rep.meta["grid_energy_drift_rel"],
        "cloud_energy_drift_rel": rep.meta["cloud_energy_drift_rel"],
        "momentum_gap": rep.momentum_gap,
    }
    return {"drift": drift, "summary": {"monotone": rep.monotone, "final_discrepancy": rep.final_discrepancy}}


def cmd_check(sc: Scenario, w: ArtifactWriter) -> dict:
    from .checks import run_checks, summary

    results = run_checks()
    w.csv("check.csv", ["name", "value", "threshold", "passed"], ([r.name, r.value, r.threshold, r.passed] for r in results))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.value:.3g} (<= {r.threshold:g})")
    return {"summary": summary(results), "all_passed": all(r.passed for r in results)}


COMMAND_TABLE = {
    "simulate": cmd_simulate,
    "reduce2": cmd_reduce2,
    "contours": cmd_contours,
    "field": cmd_field,
    "flowmap": cmd_flowmap,
    "converge": cmd_converge,
    "cloudcompare": cmd_cloudcompare,
    "check": cmd_check,
}


# ---------------------------------------------------------------------------


def _versions() -> dict:
    out = {"vortonlab": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vorton-lab",
        description="Vorton dynamics, regularized Euler kernels and grid comparisons driven by JSON scenarios.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run a {name} scenario")
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="scenario JSON file")
        src.add_argument("--preset", help="packaged scenario name (see 'vorton-lab presets')")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted path, e.g. params.T=5 or kernel.eta=0.5 (value parsed as JSON)")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default vorton-out/<command>)")
    sub.add_parser("presets", help="list packaged scenarios")
    sub.add_parser("schema", help="print the scenario JSON schema")
    return ap


def _load(args) -> Scenario:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"{args.config}: cannot read ({exc.strerror})") from None
        source = str(args.config)
    elif args.preset is not None:
        text, source = preset_text(args.preset), f"preset {args.preset}"
    else:
        text, source = json.dumps({"command": args.command}), "<defaults>"
    return load_scenario(text, source=source, overrides=args.overrides, command=args.command)


def run(args) -> int:
    try:
        sc = _load(args)
        worker_count()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out if args.out is not None else Path("vorton-out") / sc.command
    try:
        w = ArtifactWriter(out)
    except OSError as exc:
        print(f"error: output directory {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    w.json("scenario.json", sc.to_dict())

    manifest = {
        "command": sc.command,
        "config": sc.to_dict(),
        "spec": sc.kernel_spec().label(),
        "seed": sc.seed,
        "threads": worker_count(),
        "versions": _versions(),
    }
    t_start = time.perf_counter()
    code, status, reason, info = EXIT_OK, "ok", None, {}
    try:
        info = COMMAND_TABLE[sc.command](sc, w)
        if info.pop("all_passed", True) is False:
            code, status, reason = EXIT_CHECK_FAILED, "failed", "one or more invariant checks failed"
    except NumericalAbort as exc:
        code, status, reason, info = EXIT_ABORT, "aborted", str(exc), exc.info
    except (IntegrationAbort, StepUnderflow, CflViolation, DivergenceError) as exc:
        code, status, reason = EXIT_ABORT, "aborted", f"{type(exc).__name__}: {exc}"
    except (ConfigError, CapabilityError, DomainError, ValueError) as exc:
        code, status, reason = EXIT_CONFIG, "rejected", f"{type(exc).__name__}: {exc}"
    manifest.update(
        status=status,
        exit_code=code,
        reason=reason,
        drift=info.get("drift", {}),
        summary=info.get("summary", {}),
        wall_time_s=time.perf_counter() - t_start,
    )
    w.manifest(manifest)
    if code == EXIT_CONFIG or code == EXIT_ABORT:
        print(f"error: {reason}", file=sys.stderr)
    print(f"{sc.command}: {status}; artifacts in {out}")
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            doc = json.loads(preset_text(name))
            print(f"{name:28s} {doc.get('command', ''):13s} {doc.get('description', '')}")
        return EXIT_OK
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
