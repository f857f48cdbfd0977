"""Command-line front end: build, simulate, validate, serve, export-obj."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import containers, oracle, sim
from . import subspace as subspace_mod
from .config import (Scene, SceneConfig, build_component_subspace, load_scene,
                     realize_scene, _require_keys, _REQUIRED)
from .errors import InputError, MeshError, NumericalError, ValidationError
from .fem import MaterialParams, build_operators
from .meshes import bar_mesh, vertices_in_box
from .mixture import ForceObservation, SubspaceSelector
from .priors import lma_prior, painted_prior, radial_decay_weights

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


def _apply_thread_limit(threads, verbose: bool):
    if threads is None:
        return
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=int(threads))
        if verbose:
            print(f"limited BLAS thread pools to {threads}")
    except ImportError:
        if verbose:
            print("threadpoolctl not installed; --threads ignored")


def _log(args, message: str):
    if args.verbose:
        print(message)


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def _build_all_subspaces(scene: Scene):
    """One subspace per mixture component, with wall-clock timings."""
    built = []
    for k, prior in enumerate(scene.priors):
        t0 = time.perf_counter()
        sub = build_component_subspace(scene.ops, prior, scene.config.subspace)
        built.append((sub, time.perf_counter() - t0))
    return built


def cmd_build(args) -> int:
    cfg = load_scene(args.config)
    scene = realize_scene(cfg)
    out_dir = Path(args.out or "build")
    out_dir.mkdir(parents=True, exist_ok=True)

    built = _build_all_subspaces(scene)
    manifest = {"version": 1, "mixture": cfg.is_mixture,
                "weights": list(map(float, cfg.weights)),
                "hysteresis": {"enabled": cfg.hysteresis.enabled,
                               "margin": cfg.hysteresis.margin,
                               "patience": cfg.hysteresis.patience},
                "components": []}
    report = [f"scene: {args.config}",
              f"mesh: {cfg.mesh.path} ({scene.mesh.num_vertices} vertices, "
              f"{scene.mesh.num_tets} tets)",
              f"subspace dimension: {cfg.subspace.dimension}",
              ""]
    for k, ((sub, elapsed), prior) in enumerate(zip(built, scene.priors)):
        fname = f"component{k:02d}_{prior.label or 'prior'}.subspace"
        containers.save_subspace(out_dir / fname, sub)
        gram = sub.basis.T @ (scene.ops.mass[:, None] * sub.basis)
        ortho = float(np.abs(gram - np.eye(sub.dim)).max())
        manifest["components"].append({"index": k, "label": prior.label,
                                       "file": fname, "build_path": sub.path})
        report.append(f"component {k}: label={prior.label!r} path={sub.path} "
                      f"m={sub.dim}")
        report.append(f"  mass-orthonormality residual: {ortho:.3e}")
        report.append("  eigenvalues: " +
                      " ".join(f"{v:.6e}" for v in sub.eigenvalues[:8]) +
                      (" ..." if sub.dim > 8 else ""))
        report.append(f"  build time: {elapsed:.3f} s  (wall clock, informational)")
        if cfg.subspace.skinning:
            sw = subspace_mod.scalarize_skinning(scene.ops, prior, cfg.subspace.dimension)
            sk_name = f"component{k:02d}_{prior.label or 'prior'}.skinning"
            containers.save_skinning(out_dir / sk_name, sw.weights, sw.eigenvalues,
                                     sw.basis, label=prior.label)
            manifest["components"][-1]["skinning_file"] = sk_name
            report.append(f"  skinning weights: {sw.num_weights} columns, "
                          f"blend basis dim {sw.basis.shape[1]}")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out_dir / "report.txt").write_text("\n".join(report) + "\n")
    print("\n".join(report))
    print(f"wrote {len(built)} subspace container(s) to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _load_schedule(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read schedule {path}: {exc}") from exc
    top = _require_keys(raw, {"version": _REQUIRED, "steps": _REQUIRED,
                              "record_positions": False, "events": []}, "schedule")
    if top["version"] != 1:
        raise InputError(f"schedule version {top['version']!r} is not supported")
    if int(top["steps"]) < 1:
        raise InputError("schedule needs at least one step")
    events = []
    for i, ev in enumerate(top["events"]):
        kind = ev.get("type")
        ctx = f"schedule.events[{i}]"
        if kind == "point_load":
            ev = _require_keys(ev, {"type": _REQUIRED, "step": _REQUIRED,
                                    "vertex": _REQUIRED, "force": _REQUIRED}, ctx)
        elif kind == "handle":
            ev = _require_keys(ev, {"type": _REQUIRED, "step": _REQUIRED,
                                    "vertex": _REQUIRED, "target": _REQUIRED,
                                    "strength": None}, ctx)
        elif kind == "release":
            ev = _require_keys(ev, {"type": _REQUIRED, "step": _REQUIRED,
                                    "vertex": _REQUIRED}, ctx)
        elif kind == "clear_loads":
            ev = _require_keys(ev, {"type": _REQUIRED, "step": _REQUIRED}, ctx)
        else:
            raise InputError(f"{ctx} has unknown type {kind!r}")
        events.append(ev)
    events.sort(key=lambda e: int(e["step"]))
    top["events"] = events
    top["steps"] = int(top["steps"])
    return top


class _ScheduleRunner:
    """Deterministic scripted simulation over a built scene."""

    def __init__(self, scene: Scene, subspaces):
        self.scene = scene
        self.subspaces = subspaces
        cfg = scene.config
        self.mix = scene.mixture.with_subspaces(subspaces)
        self.selector = SubspaceSelector(self.mix, margin=cfg.hysteresis.margin,
                                         patience=cfg.hysteresis.patience,
                                         enabled=cfg.hysteresis.enabled)
        self.loads = {}      # vertex -> force triple
        self.handles = {}    # vertex -> (target triple, strength)
        self.reduced = {k: sim.reduce_operators(scene.ops, s, damping=cfg.simulation.damping)
                        for k, s in enumerate(subspaces)}
        ops = scene.ops
        g = np.asarray(cfg.simulation.gravity)
        self.gravity = (ops.mass.reshape(-1, 3) * g[None, :]).ravel() if g.any() else None

    def apply_event(self, ev):
        kind = ev["type"]
        if kind == "clear_loads":
            self.loads.clear()
            return
        v = int(ev["vertex"])
        if not (0 <= v < self.scene.mesh.num_vertices):
            raise InputError(f"schedule references vertex {v}, mesh has "
                             f"{self.scene.mesh.num_vertices}")
        if kind == "point_load":
            self.loads[v] = np.asarray(ev["force"], dtype=float)
        elif kind == "handle":
            strength = ev["strength"]
            if strength is None:
                strength = self.scene.config.service.handle_strength
            self.handles[v] = (np.asarray(ev["target"], dtype=float), float(strength))
        elif kind == "release":
            if v not in self.handles:
                raise InputError(f"schedule releases handle at vertex {v}, "
                                 "but none is assigned")
            del self.handles[v]

    def force_for(self, u: np.ndarray) -> np.ndarray:
        ops = self.scene.ops
        f = np.zeros(ops.num_coords)
        if self.gravity is not None:
            f += self.gravity
        for v, triple in self.loads.items():
            f[3 * v:3 * v + 3] += triple
        for v, (target, strength) in self.handles.items():
            mass_v = ops.scalar_mass[v]
            f[3 * v:3 * v + 3] += strength * mass_v * (target - u[3 * v:3 * v + 3])
        return f

    def observation_support(self):
        verts = sorted(set(self.loads) | set(self.handles))
        return np.asarray(verts, dtype=np.int64) if verts else None

    def run(self, steps: int, record_positions: bool):
        cfg = self.scene.config
        state = sim.rest_state(self.selector.subspace)
        times, comps, zs, xs = [], [], [], []
        events = list(self._events)
        h = cfg.simulation.timestep
        for step in range(steps):
            while events and int(events[0]["step"]) <= step:
                self.apply_event(events.pop(0))
            u = state.subspace.reconstruct(state.z)
            f = self.force_for(u)
            support = self.observation_support()
            if support is not None and self.mix.num_components > 1:
                obs = ForceObservation.from_force(f, support)
                before = self.selector.current
                active = self.selector.observe(obs)
                if active != before:
                    state = sim.transfer_state(state, self.subspaces[active])
            active = self.selector.current
            state = sim.dynamic_step(self.reduced[active], self.subspaces[active],
                                     state, sim.ExternalLoad.from_vector(f), h=h)
            times.append(state.time)
            comps.append(float(active))
            zs.append(state.z.copy())
            if record_positions:
                xs.append(state.subspace.reconstruct(state.z))
        # reduced coordinate columns are padded to the widest component
        width = max(z.shape[0] for z in zs)
        padded = np.zeros((len(zs), width))
        for i, z in enumerate(zs):
            padded[i, :z.shape[0]] = z
        return containers.Trajectory(
            times=np.asarray(times), components=np.asarray(comps), reduced=padded,
            positions=np.asarray(xs) if record_positions else None)


def cmd_simulate(args) -> int:
    cfg = load_scene(args.config)
    scene = realize_scene(cfg)
    if cfg.simulation.schedule is not None:
        schedule = _load_schedule(cfg.simulation.schedule)
    else:
        schedule = {"steps": 120, "record_positions": False, "events": []}
    subspaces = [s for s, _ in _build_all_subspaces(scene)]
    runner = _ScheduleRunner(scene, subspaces)
    runner._events = schedule["events"]
    traj = runner.run(schedule["steps"], bool(schedule["record_positions"]))
    out = Path(args.out or "trajectory.fdl")
    containers.save_trajectory(out, traj, {"scene": str(args.config),
                                           "timestep": cfg.simulation.timestep})
    switches = int(np.count_nonzero(np.diff(traj.components)))
    print(f"simulated {traj.num_steps} steps, h={cfg.simulation.timestep:g} s, "
          f"{switches} component switch(es); wrote {out}")
    _log(args, "per-step active components: " +
         " ".join(str(int(c)) for c in traj.components))
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _stock_fixture():
    """Reference-scale plate, clamped along one edge, used when no scene is
    given. A plate has many competing low-frequency shapes, which is what
    makes the localized-prior comparison meaningful."""
    mesh = bar_mesh(cells=(8, 8, 1), length=2.0, width=2.0, height=0.12)
    mat = MaterialParams(youngs_modulus=5e4, poisson_ratio=0.4, density=1200.0)
    pins = tuple(vertices_in_box(mesh, (-1, -1, -1), (1e-9, 9, 9)))
    return mesh, build_operators(mesh, mat, pins=pins)


def _corner_region_load(mesh, ops, radius: float):
    """Downward push on every vertex within ``radius`` of the far corner."""
    corner = np.array([mesh.vertices[:, 0].max(), mesh.vertices[:, 1].max(),
                       0.5 * mesh.vertices[:, 2].max()])
    dist = np.linalg.norm(mesh.vertices - corner, axis=1)
    f = np.zeros(ops.num_coords)
    f[3 * np.flatnonzero(dist <= radius) + 2] = -1.0
    return corner, sim.ExternalLoad.from_vector(f)


def _radius_sweep(mesh, ops, m: int, radii):
    """Reconstruction error against load-localized priors of shrinking
    radius, compared with the uncorrelated mass-weighted prior at equal m."""
    center, load = _corner_region_load(mesh, ops, radius=min(radii))
    lma_sub = subspace_mod.build_diagonal(ops, lma_prior(ops), m)
    e_lma = sim.reconstruction_error(lma_sub, ops, load)
    rows = []
    for r in radii:
        w = radial_decay_weights(mesh, center, r)
        local = painted_prior(mesh, ops, w, label=f"painted-r{r:g}")
        local_sub = subspace_mod.build_diagonal(ops, local, m)
        e_local = sim.reconstruction_error(local_sub, ops, load)
        rows.append({"radius": r, "m": m, "error_localized": e_local,
                     "error_lma": e_lma,
                     "ratio": e_lma / e_local if e_local > 0 else float("inf")})
    return rows


def cmd_validate(args) -> int:
    if args.config:
        cfg = load_scene(args.config)
        scene = realize_scene(cfg)
        mesh, ops = scene.mesh, scene.ops
    else:
        mesh, ops = _stock_fixture()
    if ops.num_coords > oracle.SIZE_CAP:
        raise InputError(
            f"validation needs a reference-scale mesh (3n <= {oracle.SIZE_CAP}), "
            f"got {ops.num_coords} coordinates")

    checks = []

    def check(name, value, threshold, ok=None):
        passed = bool(value < threshold) if ok is None else bool(ok)
        checks.append((name, value, threshold, passed))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3e} "
              f"(threshold {threshold:g})")

    m = 10
    sub = subspace_mod.build_diagonal(ops, lma_prior(ops), m)
    gram = sub.basis.T @ (ops.mass[:, None] * sub.basis)
    check("mass-orthonormality", float(np.abs(gram - np.eye(m)).max()), 1e-8)

    rep = oracle.appendix_checks(ops, m)
    check("modal-equivalence angle", rep.lma_max_angle, 1e-6)
    check("response-span containment", rep.greens_max_residual, 1e-8)

    model = oracle.DenseModel.from_system(ops, lma_prior(ops))
    ref = oracle.dense_optimal_basis(model, m)
    closed = oracle.expected_reconstruction_error(model, ref.basis)
    disc = oracle.discarded_eigenvalue_sum(model, m)
    scale = max(disc, 1e-300)
    check("optimal-error identity", abs(closed - disc) / scale, 1e-8)

    with tempfile.TemporaryDirectory() as td:
        p = Path(td) / "roundtrip.subspace"
        containers.save_subspace(p, sub)
        back = containers.load_subspace(p, ops.mass)
        ok = (np.array_equal(back.basis, sub.basis)
              and np.array_equal(back.eigenvalues, sub.eigenvalues)
              and np.array_equal(back.mean, sub.mean))
        check("container bit-exact round trip", 0.0 if ok else 1.0, 0.5, ok=ok)

        blob = bytearray(p.read_bytes())
        # flip a high mantissa byte inside the basis payload
        blob[-8 * (sub.dim + sub.num_coords) - 100] ^= 0xFF
        bad = Path(td) / "corrupt.subspace"
        bad.write_bytes(bytes(blob))
        try:
            containers.load_subspace(bad, ops.mass)
            detected = False
        except InputError:
            detected = True
        check("corrupted container rejected", 0.0 if detected else 1.0, 0.5, ok=detected)

    # the radius sweep is a fixed reference experiment, independent of the scene
    sweep_mesh, sweep_ops = (mesh, ops) if not args.config else _stock_fixture()
    span = float(sweep_mesh.vertices[:, 0].max() - sweep_mesh.vertices[:, 0].min())
    rows = _radius_sweep(sweep_mesh, sweep_ops, m,
                         radii=(0.8 * span, 0.4 * span, 0.175 * span))
    out_dir = Path(args.out or "validation")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "radius_sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    tightest = rows[-1]
    check("localized-prior advantage (x over baseline at tightest radius)",
          tightest["ratio"], 10.0, ok=tightest["ratio"] >= 10.0)
    print(f"radius sweep written to {csv_path}")

    failed = [name for name, _, _, passed in checks if not passed]
    if failed:
        raise ValidationError("failed checks: " + ", ".join(failed))
    print(f"all {len(checks)} validation checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve / export
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .service import SimulationService
    cfg = load_scene(args.config)
    scene = realize_scene(cfg)
    subspaces = [s for s, _ in _build_all_subspaces(scene)]
    service = SimulationService(scene, subspaces)
    print(f"serving on ws://{cfg.service.host}:{cfg.service.port} "
          f"({scene.mesh.num_vertices} vertices, m={cfg.subspace.dimension})")
    service.run_forever()
    return EXIT_OK


def cmd_export_obj(args) -> int:
    cfg = load_scene(args.config)
    scene = realize_scene(cfg)
    traj = containers.load_trajectory(args.trajectory)
    out_dir = Path(args.out or "frames")
    out_dir.mkdir(parents=True, exist_ok=True)
    subspaces = None
    if traj.positions is None:
        subspaces = [s for s, _ in _build_all_subspaces(scene)]
    faces = scene.mesh.surface + 1    # OBJ indices are 1-based
    rest = scene.mesh.vertices
    for i in range(traj.num_steps):
        if traj.positions is not None:
            u = traj.positions[i]
        else:
            k = int(traj.components[i])
            z = traj.reduced[i, :subspaces[k].dim]
            u = subspaces[k].reconstruct(z)
        pos = rest + u.reshape(-1, 3)
        lines = [f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in pos]
        lines += [f"f {a} {b} {c}" for a, b, c in faces]
        (out_dir / f"frame_{i:05d}.obj").write_text("\n".join(lines) + "\n")
    print(f"wrote {traj.num_steps} OBJ frame(s) to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required,
                   help="scene configuration file (JSON)")
    p.add_argument("--seed", type=int, default=0, help="seed for stochastic steps")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forcedual",
        description="Subspace construction from force priors, reduced "
                    "simulation, and the live interaction service.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("build", help="build subspace containers from a scene")
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = commands.add_parser("simulate", help="run a scripted reduced simulation")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser("validate", help="run reference checks against dense routes")
    _add_common(p, config_required=False)
    p.set_defaults(func=cmd_validate)

    p = commands.add_parser("serve", help="host the live WebSocket session")
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    p = commands.add_parser("export-obj", help="write per-frame OBJ surface meshes")
    _add_common(p)
    p.add_argument("trajectory", help="trajectory container to export")
    p.set_defaults(func=cmd_export_obj)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_limit(args.threads, args.verbose)
    np.random.seed(args.seed % (2 ** 32))
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MeshError, InputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
