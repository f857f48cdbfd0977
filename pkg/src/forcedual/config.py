"""Scene configuration: JSON schema, strict validation, and realization.

A scene file is versioned JSON describing the mesh, material, pins, force
priors (single or mixture), subspace build parameters, simulation and
service settings. Validation is strict: unknown keys are rejected and every
referenced file must exist at load time. ``realize_scene`` turns a parsed
config into live objects (mesh, operators, priors, mixture).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError
from .fem import MaterialParams, SystemOperators, build_operators, element_jacobians
from .meshes import TetMesh, load_mesh, vertices_in_box
from . import priors as priors_mod
from .mixture import MixtureModel

SCHEMA_VERSION = 1

_PRIOR_TYPES = ("lma", "painted", "handles", "contact", "pneumatic", "muscle", "springs")


def _require_keys(section: dict, allowed: dict, context: str) -> dict:
    """Strict key check: every present key must be known, every required
    key must be present. Returns the section with defaults filled in."""
    if not isinstance(section, dict):
        raise InputError(f"{context} must be a JSON object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise InputError(f"{context} has unknown keys: {sorted(unknown)}")
    out = {}
    for key, default in allowed.items():
        if default is _REQUIRED and key not in section:
            raise InputError(f"{context} is missing required key {key!r}")
        out[key] = section.get(key, default)
    return out


_REQUIRED = object()


@dataclass(frozen=True)
class MeshConfig:
    path: str
    format: str


@dataclass(frozen=True)
class PinConfig:
    vertices: tuple = ()
    box: Optional[tuple] = None   # (lo xyz, hi xyz)


@dataclass(frozen=True)
class HysteresisConfig:
    enabled: bool = True
    margin: float = 2.0
    patience: int = 3


@dataclass(frozen=True)
class SubspaceConfig:
    dimension: int
    method: str = "auto"          # auto | diagonal | lowrank
    skinning: bool = False


@dataclass(frozen=True)
class SimulationConfig:
    timestep: float = 1.0 / 60.0
    damping: tuple = (0.0, 0.0)
    gravity: tuple = (0.0, 0.0, 0.0)
    use_mean: bool = True
    schedule: Optional[str] = None


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    frame_rate: float = 60.0
    handle_strength: float = 100.0


@dataclass(frozen=True)
class SceneConfig:
    mesh: MeshConfig
    material: MaterialParams
    pins: PinConfig
    regularization: Optional[float]
    priors: tuple                  # one or more prior spec dicts
    weights: tuple                 # mixture weights, one per prior
    hysteresis: HysteresisConfig
    subspace: SubspaceConfig
    simulation: SimulationConfig
    service: ServiceConfig
    max_support: int = 256
    base_dir: Path = field(default=Path("."), repr=False)

    @property
    def is_mixture(self) -> bool:
        return len(self.priors) > 1


def _parse_prior_spec(spec: dict, idx: int, base: Path) -> dict:
    context = f"prior[{idx}]"
    if not isinstance(spec, dict) or "type" not in spec:
        raise InputError(f"{context} must be an object with a 'type' key")
    kind = spec["type"]
    if kind not in _PRIOR_TYPES:
        raise InputError(f"{context} has unknown type {kind!r}; expected one of {_PRIOR_TYPES}")
    common = {"type": _REQUIRED, "label": "", "sigma_a": None, "mu_a": None}
    if kind == "lma":
        out = _require_keys(spec, {"type": _REQUIRED, "label": ""}, context)
    elif kind == "painted":
        out = _require_keys(spec, {"type": _REQUIRED, "label": "", "weights_file": None,
                                   "center": None, "radius": None, "alpha": 10.0}, context)
        has_file = out["weights_file"] is not None
        has_radial = out["center"] is not None and out["radius"] is not None
        if has_file == has_radial:
            raise InputError(f"{context} needs exactly one of weights_file or center+radius")
        if has_file:
            wpath = base / out["weights_file"]
            if not wpath.is_file():
                raise InputError(f"{context} weights file {wpath} does not exist")
            out["weights_file"] = str(wpath)
    elif kind == "handles":
        out = _require_keys(spec, {**common, "vertices": _REQUIRED, "strength": _REQUIRED}, context)
    elif kind == "contact":
        out = _require_keys(spec, {**common, "frames": _REQUIRED, "normalize": False}, context)
        for j, fr in enumerate(out["frames"]):
            _require_keys(fr, {"vertices": _REQUIRED, "weights": _REQUIRED,
                               "normal": _REQUIRED, "tangent": _REQUIRED,
                               "bitangent": _REQUIRED}, f"{context}.frames[{j}]")
    elif kind == "pneumatic":
        out = _require_keys(spec, {**common, "pockets": _REQUIRED}, context)
    elif kind == "muscle":
        out = _require_keys(spec, {**common, "elements": _REQUIRED, "fibers": _REQUIRED}, context)
    else:   # springs
        out = _require_keys(spec, {**common, "edges": _REQUIRED}, context)
    return out


def load_scene(path) -> SceneConfig:
    """Parse and validate a scene file. Referenced files are resolved
    relative to the scene file's directory and must exist."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"scene file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"scene file {path} is not valid JSON: {exc}") from exc
    base = path.parent
    top = _require_keys(raw, {
        "version": _REQUIRED, "mesh": _REQUIRED, "material": {}, "pins": {},
        "regularization": None, "prior": None, "mixture": None,
        "subspace": _REQUIRED, "simulation": {}, "service": {},
    }, "scene")
    if top["version"] != SCHEMA_VERSION:
        raise InputError(f"scene schema version {top['version']!r} is not supported "
                         f"(expected {SCHEMA_VERSION})")

    mesh_sec = _require_keys(top["mesh"], {"path": _REQUIRED, "format": _REQUIRED}, "mesh")
    mesh_path = base / mesh_sec["path"]
    if mesh_sec["format"] not in ("tetgen", "gmsh"):
        raise InputError(f"mesh format {mesh_sec['format']!r} is not supported")
    if mesh_sec["format"] == "tetgen" and mesh_path.suffix != ".node":
        mesh_path = mesh_path.with_suffix(".node")
    if not mesh_path.is_file():
        raise InputError(f"mesh file {mesh_path} does not exist")
    mesh = MeshConfig(path=str(mesh_path), format=mesh_sec["format"])

    mat_sec = _require_keys(top["material"], {"youngs_modulus": 1e5, "poisson_ratio": 0.45,
                                              "density": 1000.0}, "material")
    material = MaterialParams(youngs_modulus=float(mat_sec["youngs_modulus"]),
                              poisson_ratio=float(mat_sec["poisson_ratio"]),
                              density=float(mat_sec["density"]))

    pin_sec = _require_keys(top["pins"], {"vertices": (), "box": None}, "pins")
    pins = PinConfig(vertices=tuple(int(v) for v in pin_sec["vertices"]),
                     box=tuple(tuple(float(x) for x in side) for side in pin_sec["box"])
                     if pin_sec["box"] is not None else None)

    reg = top["regularization"]
    if reg is not None:
        reg = float(reg)
        if reg <= 0:
            raise InputError("regularization must be positive when given")

    if (top["prior"] is None) == (top["mixture"] is None):
        raise InputError("scene needs exactly one of 'prior' or 'mixture'")
    if top["prior"] is not None:
        specs = [_parse_prior_spec(top["prior"], 0, base)]
        weights = (1.0,)
        hyst = HysteresisConfig()
        max_support = 256
    else:
        mix_sec = _require_keys(top["mixture"], {
            "components": _REQUIRED, "weights": _REQUIRED,
            "hysteresis": {}, "max_support": 256}, "mixture")
        comp_list = mix_sec["components"]
        if not isinstance(comp_list, list) or len(comp_list) < 1:
            raise InputError("mixture.components must be a nonempty list")
        specs = [_parse_prior_spec(s, i, base) for i, s in enumerate(comp_list)]
        weights = tuple(float(w) for w in mix_sec["weights"])
        if len(weights) != len(specs):
            raise InputError("mixture.weights must match the component count")
        h = _require_keys(mix_sec["hysteresis"], {"enabled": True, "margin": 2.0,
                                                  "patience": 3}, "mixture.hysteresis")
        hyst = HysteresisConfig(enabled=bool(h["enabled"]), margin=float(h["margin"]),
                                patience=int(h["patience"]))
        max_support = int(mix_sec["max_support"])

    sub_sec = _require_keys(top["subspace"], {"dimension": _REQUIRED, "method": "auto",
                                              "skinning": False}, "subspace")
    if sub_sec["method"] not in ("auto", "diagonal", "lowrank"):
        raise InputError(f"subspace method {sub_sec['method']!r} is not supported")
    subspace = SubspaceConfig(dimension=int(sub_sec["dimension"]),
                              method=sub_sec["method"], skinning=bool(sub_sec["skinning"]))
    if subspace.dimension < 1:
        raise InputError("subspace dimension must be at least 1")

    sim_sec = _require_keys(top["simulation"], {"timestep": 1.0 / 60.0,
                                                "damping": (0.0, 0.0),
                                                "gravity": (0.0, 0.0, 0.0),
                                                "use_mean": True,
                                                "schedule": None}, "simulation")
    schedule = sim_sec["schedule"]
    if schedule is not None:
        spath = base / schedule
        if not spath.is_file():
            raise InputError(f"schedule file {spath} does not exist")
        schedule = str(spath)
    damping = tuple(float(x) for x in sim_sec["damping"])
    gravity = tuple(float(x) for x in sim_sec["gravity"])
    if len(damping) != 2 or len(gravity) != 3:
        raise InputError("damping needs 2 entries and gravity needs 3")
    simulation = SimulationConfig(timestep=float(sim_sec["timestep"]), damping=damping,
                                  gravity=gravity, use_mean=bool(sim_sec["use_mean"]),
                                  schedule=schedule)
    if simulation.timestep <= 0:
        raise InputError("timestep must be positive")

    svc_sec = _require_keys(top["service"], {"host": "127.0.0.1", "port": 8765,
                                             "frame_rate": 60.0,
                                             "handle_strength": 100.0}, "service")
    service = ServiceConfig(host=str(svc_sec["host"]), port=int(svc_sec["port"]),
                            frame_rate=float(svc_sec["frame_rate"]),
                            handle_strength=float(svc_sec["handle_strength"]))

    return SceneConfig(mesh=mesh, material=material, pins=pins, regularization=reg,
                       priors=tuple(specs), weights=weights, hysteresis=hyst,
                       subspace=subspace, simulation=simulation, service=service,
                       max_support=max_support, base_dir=base)


# ---------------------------------------------------------------------------
# Realization: config -> live objects
# ---------------------------------------------------------------------------

def _sigma_a_matrix(raw, rank: int):
    if raw is None:
        return None
    if np.isscalar(raw):
        return float(raw) * np.eye(rank)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (rank,):
            raise InputError(f"sigma_a vector must have length {rank}")
        return np.diag(arr)
    return arr


def build_prior(spec: dict, mesh: TetMesh, ops: SystemOperators) -> priors_mod.ForcePrior:
    """Instantiate one force prior from its validated spec."""
    kind = spec["type"]
    label = spec.get("label") or kind
    if kind == "lma":
        pr = priors_mod.lma_prior(ops)
        return priors_mod.ForcePrior(pr.mean, pr.covariance, label)
    if kind == "painted":
        if spec["weights_file"] is not None:
            w = np.loadtxt(spec["weights_file"], dtype=float, ndmin=1)
            if w.shape != (mesh.num_vertices,):
                raise InputError(f"painted weights file has {w.shape[0]} entries, "
                                 f"mesh has {mesh.num_vertices} vertices")
        else:
            w = priors_mod.radial_decay_weights(mesh, spec["center"], float(spec["radius"]),
                                                float(spec["alpha"]))
        return priors_mod.painted_prior(mesh, ops, w, label=label)

    mu_a = None if spec["mu_a"] is None else np.asarray(spec["mu_a"], dtype=float)
    if kind == "handles":
        handles = priors_mod.HandleSet.create(ops, spec["vertices"], float(spec["strength"]))
        sig = _sigma_a_matrix(spec["sigma_a"], handles.rank)
        return priors_mod.handle_prior(ops, handles, sig, mu_a, label=label)
    if kind == "contact":
        frames = []
        for fr in spec["frames"]:
            w = np.zeros(mesh.num_vertices)
            w[np.asarray(fr["vertices"], dtype=np.int64)] = np.asarray(fr["weights"], dtype=float)
            frames.append(priors_mod.ContactFrame(
                weights=w, normal=np.asarray(fr["normal"], dtype=float),
                tangent=np.asarray(fr["tangent"], dtype=float),
                bitangent=np.asarray(fr["bitangent"], dtype=float)))
        patches = priors_mod.ContactPatchSet.create(mesh, frames)
        sig = _sigma_a_matrix(spec["sigma_a"], 3 * len(frames))
        return priors_mod.contact_prior(ops, patches, sig, mu_a,
                                        normalize=bool(spec["normalize"]), label=label)
    if kind == "pneumatic":
        pockets = priors_mod.PneumaticPocketSet.create(mesh, spec["pockets"])
        sig = _sigma_a_matrix(spec["sigma_a"], len(pockets.pockets))
        return priors_mod.pneumatic_prior(mesh, pockets, sig, mu_a, label=label)
    if kind == "muscle":
        fibers = priors_mod.MuscleFiberSet.create(mesh, spec["elements"],
                                                  np.asarray(spec["fibers"], dtype=float))
        sig = _sigma_a_matrix(spec["sigma_a"], len(fibers.elements))
        return priors_mod.muscle_prior(mesh, element_jacobians(mesh), fibers, sig, mu_a,
                                       label=label)
    if kind == "springs":
        springs = priors_mod.SpringSet.create(mesh, spec["edges"])
        sig = _sigma_a_matrix(spec["sigma_a"], len(springs.edges))
        return priors_mod.spring_prior(mesh, springs, sig, mu_a, label=label)
    raise InputError(f"unhandled prior type {kind!r}")


@dataclass(frozen=True)
class Scene:
    """Realized scene: live mesh, operators, priors, and mixture."""

    config: SceneConfig
    mesh: TetMesh
    ops: SystemOperators
    priors: tuple
    mixture: MixtureModel


def build_component_subspace(ops: SystemOperators, prior, cfg: SubspaceConfig):
    """Dispatch to the build path matching the prior's covariance form.

    ``method = "auto"`` picks the diagonal path for diagonal covariances and
    the factored-SVD path otherwise; an explicit method that contradicts the
    covariance form is an error.
    """
    from . import subspace as subspace_mod
    diagonal = prior.is_diagonal
    method = cfg.method
    if method == "auto":
        method = "diagonal" if diagonal else "lowrank"
    if method == "diagonal" and not diagonal:
        raise InputError("diagonal build path requires a diagonal-covariance prior")
    if method == "lowrank" and diagonal:
        raise InputError("lowrank build path requires a factored-covariance prior")
    if method == "diagonal":
        return subspace_mod.build_diagonal(ops, prior, cfg.dimension)
    return subspace_mod.build_lowrank(ops, prior, cfg.dimension)


def realize_scene(cfg: SceneConfig) -> Scene:
    mesh = load_mesh(cfg.mesh.path, cfg.mesh.format)
    pin_set = set(cfg.pins.vertices)
    if cfg.pins.box is not None:
        lo, hi = cfg.pins.box
        pin_set.update(vertices_in_box(mesh, lo, hi).tolist())
    for v in pin_set:
        if not (0 <= v < mesh.num_vertices):
            raise InputError(f"pinned vertex {v} out of range")
    ops = build_operators(mesh, cfg.material, pins=tuple(sorted(pin_set)),
                          eps=cfg.regularization)
    built = tuple(build_prior(spec, mesh, ops) for spec in cfg.priors)
    mixture = MixtureModel(components=built, weights=np.asarray(cfg.weights),
                           max_support=cfg.max_support)
    return Scene(config=cfg, mesh=mesh, ops=ops, priors=built, mixture=mixture)
