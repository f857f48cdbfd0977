"""Tetrahedral meshes: loading, validation, and procedural test geometry.

A mesh is rest geometry only, vertices in meters plus tet connectivity.
The boundary surface is derived at construction and kept with outward
orientation, since several force models (contact, pneumatics) live on it.

Supported file formats: TetGen-style ``.node``/``.ele`` pairs and Gmsh
``.msh`` ASCII v2 (tet elements only).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, MeshError

# Faces of tet (v0,v1,v2,v3) wound so normals point outward when the tet
# has positive signed volume.
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]], dtype=np.int64)


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes, one per tet; positive for correctly oriented elements."""
    v = vertices
    d1 = v[tets[:, 1]] - v[tets[:, 0]]
    d2 = v[tets[:, 2]] - v[tets[:, 0]]
    d3 = v[tets[:, 3]] - v[tets[:, 0]]
    return np.einsum("ij,ij->i", np.cross(d1, d2), d3) / 6.0


@dataclass(frozen=True)
class TetMesh:
    """Validated tetrahedral mesh with derived, outward-oriented boundary.

    Invariants enforced at construction: all tet indices are in range, every
    tet has strictly positive signed volume, and the boundary triangles form
    a closed orientable 2-manifold (checked per connected component via edge
    incidence counts).
    """

    vertices: np.ndarray = field(repr=False)  # (n, 3) float64, meters
    tets: np.ndarray = field(repr=False)      # (t, 4) int64
    surface: np.ndarray = field(init=False, repr=False)  # (s, 3) int64, outward wound

    def __post_init__(self):
        vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        tets = np.ascontiguousarray(np.asarray(self.tets, dtype=np.int64))
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
            raise MeshError("tets must be a nonempty (t, 4) array")
        if not np.isfinite(vertices).all():
            raise MeshError("vertices contain non-finite coordinates")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "tets", tets)

        out_of_range = np.nonzero((tets < 0) | (tets >= len(vertices)))[0]
        if out_of_range.size:
            bad = sorted(set(out_of_range.tolist()))
            raise MeshError(
                f"tet indices out of range in elements {bad[:10]}"
                f" (vertex count {len(vertices)})", offending=bad)

        vols = tet_volumes(vertices, tets)
        inverted = np.nonzero(vols <= 0.0)[0]
        if inverted.size:
            bad = inverted.tolist()
            raise MeshError(
                f"{len(bad)} inverted or degenerate tets (first few: {bad[:10]});"
                " fix the element orientation in the input", offending=bad)

        object.__setattr__(self, "surface", _boundary_surface(tets))
        _check_surface_manifold(self.surface)

    # -- basic measures -----------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        return tet_volumes(self.vertices, self.tets)

    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def surface_vertices(self) -> np.ndarray:
        """Sorted unique vertex indices on the boundary."""
        return np.unique(self.surface)

    # -- surface geometry ---------------------------------------------------

    def surface_triangle_areas_normals(self):
        """Per-triangle area and unit outward normal."""
        p = self.vertices
        t = self.surface
        cross = np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        with np.errstate(invalid="ignore", divide="ignore"):
            normals = cross / norms[:, None]
        normals[norms == 0] = 0.0
        return areas, normals

    def vertex_surface_areas(self) -> np.ndarray:
        """Per-vertex Voronoi surface area: one third of incident triangle area.

        Zero for interior vertices.
        """
        areas, _ = self.surface_triangle_areas_normals()
        out = np.zeros(self.num_vertices)
        np.add.at(out, self.surface.ravel(), np.repeat(areas / 3.0, 3))
        return out

    def vertex_normals(self) -> np.ndarray:
        """Area-averaged outward normals at surface vertices.

        Deliberately not re-normalized to unit length: with the area-weighted
        average, the load sum ``sum_i v_i n_i`` over a closed pocket vanishes
        exactly (discrete divergence theorem), which pneumatic priors rely on.
        """
        areas, normals = self.surface_triangle_areas_normals()
        acc = np.zeros((self.num_vertices, 3))
        wsum = np.zeros(self.num_vertices)
        for k in range(3):
            np.add.at(acc, self.surface[:, k], areas[:, None] * normals)
            np.add.at(wsum, self.surface[:, k], areas)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = acc / wsum[:, None]
        out[wsum == 0] = 0.0
        return out


def _boundary_surface(tets: np.ndarray) -> np.ndarray:
    """Oriented boundary triangles: faces that belong to exactly one tet."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)          # (4t, 3) oriented
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(
        key, axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inverse] == 1
    if counts.max(initial=0) > 2:
        raise MeshError("a face is shared by more than two tets")
    return faces[boundary]


def _check_surface_manifold(surface: np.ndarray):
    """Closed orientable manifold check on the oriented boundary.

    Every directed edge must occur exactly once; equivalently each undirected
    edge borders exactly two triangles with opposite winding.
    """
    if len(surface) == 0:
        raise MeshError("mesh has no boundary surface")
    edges = np.concatenate([surface[:, [0, 1]], surface[:, [1, 2]], surface[:, [2, 0]]])
    directed = {}
    for a, b in edges:
        k = (int(a), int(b))
        directed[k] = directed.get(k, 0) + 1
    for (a, b), cnt in directed.items():
        if cnt != 1 or directed.get((b, a), 0) != 1:
            raise MeshError(
                f"boundary is not a closed orientable manifold near edge ({a}, {b})",
                offending=[a, b])


def _fix_orientation(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Swap two vertices of any negatively oriented tet (generator use only)."""
    tets = np.array(tets, dtype=np.int64)
    vols = tet_volumes(vertices, tets)
    flip = vols < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]
    return tets


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_mesh(path: str, format: str | None = None) -> TetMesh:
    """Load and validate a mesh file.

    ``format`` is one of ``"tetgen"`` (a ``.node`` path with a sibling
    ``.ele``) or ``"gmsh"``; inferred from the extension when omitted.
    """
    if not os.path.exists(path):
        raise InputError(f"mesh file not found: {path}")
    if format is None:
        ext = os.path.splitext(path)[1].lower()
        format = {".node": "tetgen", ".ele": "tetgen", ".msh": "gmsh"}.get(ext)
        if format is None:
            raise InputError(f"cannot infer mesh format from extension: {path}")
    if format == "tetgen":
        vertices, tets = _parse_tetgen(path)
    elif format == "gmsh":
        vertices, tets = _parse_gmsh_v2(path)
    else:
        raise InputError(f"unknown mesh format: {format!r}")
    return TetMesh(vertices, tets)


def _data_lines(path: str):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def _parse_tetgen(path: str):
    base, ext = os.path.splitext(path)
    node_path = base + ".node"
    ele_path = base + ".ele"
    if ext.lower() not in (".node", ".ele"):
        raise InputError(f"tetgen format expects a .node/.ele pair, got {path}")
    for p in (node_path, ele_path):
        if not os.path.exists(p):
            raise InputError(f"missing tetgen file: {p}")

    try:
        lines = list(_data_lines(node_path))
        n, dim = int(lines[0].split()[0]), int(lines[0].split()[1])
        if dim != 3:
            raise InputError(f"{node_path}: expected 3-D nodes, got dim={dim}")
        rows = [line.split() for line in lines[1:1 + n]]
        if len(rows) != n:
            raise InputError(f"{node_path}: declared {n} nodes, found {len(rows)}")
        ids = np.array([int(r[0]) for r in rows])
        vertices = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
        offset = ids.min()  # tetgen files may be 0- or 1-based

        lines = list(_data_lines(ele_path))
        t, per = int(lines[0].split()[0]), int(lines[0].split()[1])
        if per != 4:
            raise InputError(f"{ele_path}: only linear tets supported, got {per} nodes/elem")
        rows = [line.split() for line in lines[1:1 + t]]
        if len(rows) != t:
            raise InputError(f"{ele_path}: declared {t} tets, found {len(rows)}")
        tets = np.array([[int(r[1]), int(r[2]), int(r[3]), int(r[4])] for r in rows])
        tets -= offset
    except (ValueError, IndexError) as exc:
        raise InputError(f"failed to parse tetgen pair {base}: {exc}") from exc
    return vertices, tets


def _parse_gmsh_v2(path: str):
    vertices = None
    tets = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
        i = 0
        id_map = {}
        while i < len(lines):
            if lines[i] == "$MeshFormat":
                version = lines[i + 1].split()[0]
                if not version.startswith("2"):
                    raise InputError(f"{path}: only Gmsh ASCII v2 supported, got {version}")
                i += 3
            elif lines[i] == "$Nodes":
                count = int(lines[i + 1])
                vertices = np.empty((count, 3))
                for j in range(count):
                    parts = lines[i + 2 + j].split()
                    id_map[int(parts[0])] = j
                    vertices[j] = [float(parts[1]), float(parts[2]), float(parts[3])]
                i += 2 + count + 1
            elif lines[i] == "$Elements":
                count = int(lines[i + 1])
                for j in range(count):
                    parts = lines[i + 2 + j].split()
                    etype, ntags = int(parts[1]), int(parts[2])
                    if etype == 4:  # 4-node tetrahedron
                        node_ids = parts[3 + ntags:3 + ntags + 4]
                        tets.append([id_map[int(v)] for v in node_ids])
                i += 2 + count + 1
            else:
                i += 1
    except (ValueError, IndexError, KeyError) as exc:
        raise InputError(f"failed to parse gmsh file {path}: {exc}") from exc
    if vertices is None:
        raise InputError(f"{path}: no $Nodes section found")
    if not tets:
        raise InputError(f"{path}: no tetrahedral elements found")
    return vertices, np.array(tets, dtype=np.int64)


def save_tetgen(mesh: TetMesh, base_path):
    """Write a ``.node``/``.ele`` pair (0-based indices)."""
    base_path = str(base_path)
    with open(base_path + ".node", "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.num_vertices} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}\n")
    with open(base_path + ".ele", "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.num_tets} 4 0\n")
        for i, t in enumerate(mesh.tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


# ---------------------------------------------------------------------------
# Procedural geometry (fixtures and demo scenes)
# ---------------------------------------------------------------------------

def single_tet() -> TetMesh:
    """The canonical unit tet: corner at origin, unit edges along the axes."""
    vertices = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tets = np.array([[0, 1, 2, 3]])
    return TetMesh(vertices, tets)


# Five-tet split of a cell: four corner tets plus a central one. The two
# parities use complementary corner sets so faces of adjacent cells conform.
_FIVE_EVEN = [
    (0b000, 0b100, 0b010, 0b001),
    (0b110, 0b010, 0b100, 0b111),
    (0b101, 0b100, 0b111, 0b001),
    (0b011, 0b010, 0b001, 0b111),
    (0b100, 0b010, 0b001, 0b111),
]
_FIVE_ODD = [
    (0b100, 0b000, 0b110, 0b101),
    (0b010, 0b110, 0b000, 0b011),
    (0b001, 0b000, 0b011, 0b101),
    (0b111, 0b110, 0b101, 0b011),
    (0b000, 0b110, 0b101, 0b011),
]


def box_mesh(nx: int, ny: int, nz: int, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TetMesh:
    """Axis-aligned box split into nx*ny*nz cells of five tets each."""
    if min(nx, ny, nz) < 1:
        raise InputError("box_mesh needs at least one cell per axis")
    if np.isscalar(size):
        size = (float(size),) * 3
    xs = np.linspace(origin[0], origin[0] + size[0], nx + 1)
    ys = np.linspace(origin[1], origin[1] + size[1], ny + 1)
    zs = np.linspace(origin[2], origin[2] + size[2], nz + 1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    vertices = np.array([[xs[i], ys[j], zs[k]]
                         for i in range(nx + 1)
                         for j in range(ny + 1)
                         for k in range(nz + 1)])
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corners = {c: vid(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1))
                           for c in range(8)}
                pattern = _FIVE_EVEN if (i + j + k) % 2 == 0 else _FIVE_ODD
                for tet in pattern:
                    tets.append([corners[c] for c in tet])
    tets = _fix_orientation(vertices, np.array(tets, dtype=np.int64))
    return TetMesh(vertices, tets)


def bar_mesh(cells=(12, 2, 3), length=1.0, width=0.18, height=0.24) -> TetMesh:
    """Slender bar along x. The cross-section is deliberately asymmetric so
    bending modes in y and z are spectrally separated (no repeated eigenvalues
    to trip subspace comparisons)."""
    return box_mesh(*cells, size=(length, width, height))


def vertices_in_box(mesh: TetMesh, lo, hi) -> np.ndarray:
    """Indices of vertices inside the closed axis-aligned box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    inside = np.all((mesh.vertices >= lo) & (mesh.vertices <= hi), axis=1)
    return np.nonzero(inside)[0]
