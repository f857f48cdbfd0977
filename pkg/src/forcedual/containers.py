"""Self-describing binary containers for subspaces and trajectories.

Layout: an 8-byte magic, a little-endian u32 header length, a UTF-8 header
of ``key=value`` lines, then the raw row-major float64 payload of each
array in the order the header declares. Writing and re-reading is bit
exact; every structural problem surfaces as InputError.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .subspace import Subspace

MAGIC = b"FDUALBIN"
FORMAT_VERSION = 1


def _encode_header(kind: str, meta: dict, arrays: Sequence[tuple]) -> bytes:
    lines = [f"kind={kind}", f"format={FORMAT_VERSION}"]
    for key, value in meta.items():
        text = str(value)
        if "\n" in text or "=" in str(key):
            raise InputError(f"header entry {key!r} contains forbidden characters")
        lines.append(f"{key}={text}")
    lines.append("arrays=" + ",".join(name for name, _ in arrays))
    for name, arr in arrays:
        lines.append(f"shape.{name}=" + ",".join(str(s) for s in arr.shape))
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_container(path, kind: str, meta: dict, arrays: Sequence[tuple]):
    """Write named float64 arrays with a key=value text header."""
    prepared = []
    for name, arr in arrays:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        prepared.append((name, a))
    header = _encode_header(kind, meta, prepared)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, a in prepared:
            fh.write(a.tobytes(order="C"))


def read_container(path):
    """Returns (kind, meta dict, name -> array dict)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read container {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 4 or blob[:len(MAGIC)] != MAGIC:
        raise InputError(f"{path} is not a recognized container (bad magic)")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if start + header_len > len(blob):
        raise InputError(f"{path} is truncated inside the header")
    try:
        header = blob[start:start + header_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} has an undecodable header") from exc
    meta = {}
    for lineno, line in enumerate(header.splitlines(), 1):
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path} header line {lineno} is not key=value")
        key, _, value = line.partition("=")
        meta[key] = value
    if meta.get("kind") is None or meta.get("arrays") is None:
        raise InputError(f"{path} header is missing kind/arrays entries")
    if meta.get("format") != str(FORMAT_VERSION):
        raise InputError(f"{path} has unsupported container format {meta.get('format')!r}")

    arrays = {}
    offset = start + header_len
    names = [n for n in meta["arrays"].split(",") if n]
    for name in names:
        shape_text = meta.get(f"shape.{name}")
        if shape_text is None:
            raise InputError(f"{path} header lacks the shape of array {name!r}")
        try:
            shape = tuple(int(s) for s in shape_text.split(",") if s != "")
        except ValueError as exc:
            raise InputError(f"{path} has a malformed shape for {name!r}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise InputError(f"{path} is truncated inside array {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[name] = arr.copy()
        offset += nbytes
    if offset != len(blob):
        raise InputError(f"{path} has {len(blob) - offset} trailing bytes")
    kind = meta.pop("kind")
    meta.pop("format")
    meta.pop("arrays")
    for name in names:
        meta.pop(f"shape.{name}", None)
    return kind, meta, arrays


# ---------------------------------------------------------------------------
# Subspace containers
# ---------------------------------------------------------------------------

def save_subspace(path, sub: Subspace):
    """Serialize basis, eigenvalues, and mean. The mass vector is runtime
    state of the mesh, not part of the artifact; loading takes it back."""
    meta = {"label": sub.label, "path": sub.path,
            "coords": sub.num_coords, "dim": sub.dim}
    write_container(path, "subspace", meta,
                    [("basis", sub.basis), ("eigenvalues", sub.eigenvalues),
                     ("mean", sub.mean)])


def load_subspace(path, mass: np.ndarray) -> Subspace:
    kind, meta, arrays = read_container(path)
    if kind != "subspace":
        raise InputError(f"{path} holds a {kind!r} container, expected a subspace")
    for name in ("basis", "eigenvalues", "mean"):
        if name not in arrays:
            raise InputError(f"{path} is missing the {name!r} array")
    return Subspace(basis=arrays["basis"], eigenvalues=arrays["eigenvalues"],
                    mean=arrays["mean"], mass=np.asarray(mass, dtype=float),
                    label=meta.get("label", ""), path=meta.get("path", ""))


def save_skinning(path, weights: np.ndarray, eigenvalues: np.ndarray,
                  basis: np.ndarray, label: str = ""):
    """Serialize scalar weight fields with their derived blend basis."""
    write_container(path, "skinning", {"label": label},
                    [("weights", weights), ("eigenvalues", eigenvalues),
                     ("basis", basis)])


def load_skinning(path):
    kind, meta, arrays = read_container(path)
    if kind != "skinning":
        raise InputError(f"{path} holds a {kind!r} container, expected skinning weights")
    for name in ("weights", "eigenvalues", "basis"):
        if name not in arrays:
            raise InputError(f"{path} is missing the {name!r} array")
    return arrays["weights"], arrays["eigenvalues"], arrays["basis"], meta.get("label", "")


# ---------------------------------------------------------------------------
# Trajectory containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Per-step simulation record: times, active component, reduced
    coordinates, and optionally full reconstructed positions."""

    times: np.ndarray                 # (T,)
    components: np.ndarray            # (T,) int-valued
    reduced: np.ndarray               # (T, m)
    positions: Optional[np.ndarray] = None   # (T, 3n)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.components, dtype=float)
        z = np.asarray(self.reduced, dtype=float)
        if t.ndim != 1 or c.shape != t.shape or z.ndim != 2 or z.shape[0] != t.shape[0]:
            raise InputError("inconsistent trajectory shapes")
        if self.positions is not None:
            p = np.asarray(self.positions, dtype=float)
            if p.ndim != 2 or p.shape[0] != t.shape[0]:
                raise InputError("positions must have one row per step")
            object.__setattr__(self, "positions", p)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "reduced", z)

    @property
    def num_steps(self) -> int:
        return self.times.shape[0]


def save_trajectory(path, traj: Trajectory, meta: dict = None):
    arrays = [("times", traj.times), ("components", traj.components),
              ("reduced", traj.reduced)]
    if traj.positions is not None:
        arrays.append(("positions", traj.positions))
    write_container(path, "trajectory", dict(meta or {}), arrays)


def load_trajectory(path) -> Trajectory:
    kind, _, arrays = read_container(path)
    if kind != "trajectory":
        raise InputError(f"{path} holds a {kind!r} container, expected a trajectory")
    for name in ("times", "components", "reduced"):
        if name not in arrays:
            raise InputError(f"{path} is missing the {name!r} array")
    return Trajectory(times=arrays["times"], components=arrays["components"],
                      reduced=arrays["reduced"], positions=arrays.get("positions"))
