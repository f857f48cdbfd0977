"""Gaussian priors on nodal forces.

A prior is the design object of the whole toolkit: a normal distribution
``F ~ N(mu_F, Sigma_F)`` over the 3n force coordinates, stored either with a
diagonal covariance (per-coordinate variances, e.g. painted localization) or
as a thin factor ``Sigma_F = L L^T`` coming from a linearly parameterized
actuation model ``F = D A`` with ``A ~ N(mu_A, Sigma_A)``, which gives
``F ~ N(D mu_A, D Sigma_A D^T)`` and ``L = D chol(Sigma_A)``.

Actuation models provided: point handles (mass- and strength-weighted vertex
springs), contact patches (weighted orthonormal frames on the surface),
pneumatic pockets (area-weighted normals), quadratic muscle fibers, and
rest-length spring actuators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .fem import ElementJacobians, SystemOperators
from .meshes import TetMesh


@dataclass(frozen=True)
class DiagonalCovariance:
    """Per-coordinate force variances (length 3n, nonnegative)."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.variances, dtype=float))
        if v.ndim != 1 or np.any(v < 0) or not np.isfinite(v).all():
            raise InputError("diagonal variances must be a finite nonnegative vector")
        object.__setattr__(self, "variances", v)


@dataclass(frozen=True)
class LowRankCovariance:
    """Thin covariance factor: Sigma_F = factor @ factor.T.

    The factor already absorbs the actuation covariance,
    ``factor = D chol(Sigma_A)``; with unit actuation covariance it is D
    itself. The raw actuation statistics are kept for provenance and for
    runtime force evaluation.
    """

    factor: np.ndarray          # (3n, r)
    actuation_mean: np.ndarray  # (r,)
    actuation_cov: np.ndarray   # (r, r)

    def __post_init__(self):
        f = np.ascontiguousarray(np.asarray(self.factor, dtype=float))
        if f.ndim != 2 or not np.isfinite(f).all():
            raise InputError("low-rank factor must be a finite (3n, r) matrix")
        object.__setattr__(self, "factor", f)

    @property
    def rank(self) -> int:
        return self.factor.shape[1]


@dataclass(frozen=True)
class ForcePrior:
    mean: np.ndarray
    covariance: DiagonalCovariance | LowRankCovariance
    label: str = ""

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.mean, dtype=float))
        if m.ndim != 1 or not np.isfinite(m).all():
            raise InputError("prior mean must be a finite vector")
        object.__setattr__(self, "mean", m)

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return isinstance(self.covariance, DiagonalCovariance)

    @property
    def is_lowrank(self) -> bool:
        return isinstance(self.covariance, LowRankCovariance)

    def variance_diagonal(self) -> np.ndarray:
        """diag(Sigma_F), whichever representation is stored."""
        if self.is_diagonal:
            return self.covariance.variances
        return np.einsum("ij,ij->i", self.covariance.factor, self.covariance.factor)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` force samples, returned as columns of a (3n, count) array."""
        if self.is_diagonal:
            xi = rng.standard_normal((self.size, count))
            return self.mean[:, None] + np.sqrt(self.covariance.variances)[:, None] * xi
        xi = rng.standard_normal((self.covariance.rank, count))
        return self.mean[:, None] + self.covariance.factor @ xi

    def scaled(self, s: float) -> "ForcePrior":
        """Prior for forces scaled by s (covariance scales by s^2)."""
        if self.is_diagonal:
            cov = DiagonalCovariance(self.covariance.variances * s * s)
        else:
            cov = LowRankCovariance(self.covariance.factor * s,
                                    self.covariance.actuation_mean * s,
                                    self.covariance.actuation_cov * s * s)
        return ForcePrior(self.mean * s, cov, self.label)


def psd_factor(sigma: np.ndarray) -> np.ndarray:
    """Cholesky-like factor R with sigma = R R^T; accepts semidefinite input.

    Strict Cholesky first; on failure fall back to a symmetric
    eigendecomposition with tiny negative eigenvalues clipped to zero.
    Genuinely indefinite matrices are rejected.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InputError("actuation covariance must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-12 * max(1.0, abs(sigma).max())):
        raise InputError("actuation covariance must be symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        tol = 1e-10 * max(1.0, w.max(initial=0.0))
        if w.min() < -tol:
            raise InputError("actuation covariance is not positive semidefinite")
        return v * np.sqrt(np.clip(w, 0.0, None))


def _lowrank_prior(d: np.ndarray, sigma_a, mu_a, label: str) -> ForcePrior:
    r = d.shape[1]
    if sigma_a is None:
        sigma_a = np.eye(r)
        factor = d
    else:
        sigma_a = np.asarray(sigma_a, dtype=float)
        if sigma_a.shape != (r, r):
            raise InputError(f"actuation covariance has shape {sigma_a.shape}, expected ({r}, {r})")
        factor = d @ psd_factor(sigma_a)
    mu_a = np.zeros(r) if mu_a is None else np.asarray(mu_a, dtype=float)
    if mu_a.shape != (r,):
        raise InputError(f"actuation mean has shape {mu_a.shape}, expected ({r},)")
    cov = LowRankCovariance(factor=factor, actuation_mean=mu_a, actuation_cov=sigma_a)
    return ForcePrior(mean=d @ mu_a, covariance=cov, label=label)


# ---------------------------------------------------------------------------
# Diagonal priors
# ---------------------------------------------------------------------------

def lma_prior(ops: SystemOperators) -> ForcePrior:
    """Uncorrelated mass-weighted white noise: Sigma_F = M, zero mean.

    Propagated through the system this reproduces classical modal analysis.
    """
    return ForcePrior(mean=np.zeros(ops.num_coords),
                      covariance=DiagonalCovariance(ops.mass.copy()),
                      label="lma")


def painted_prior(mesh: TetMesh, ops: SystemOperators, weight: np.ndarray,
                  label: str = "painted") -> ForcePrior:
    """Localize the mass-weighted prior with a per-vertex weight field in [0, 1].

    Each coordinate's variance is ``w_vertex * M_coordinate``; a weight field
    of ones reproduces ``lma_prior`` bit for bit.
    """
    weight = np.asarray(weight, dtype=float)
    if weight.shape != (mesh.num_vertices,):
        raise InputError(f"weight field has shape {weight.shape}, expected ({mesh.num_vertices},)")
    if np.any(weight < 0):
        raise InputError("painted weights must be nonnegative")
    variances = np.repeat(weight, 3) * ops.mass
    return ForcePrior(mean=np.zeros(ops.num_coords),
                      covariance=DiagonalCovariance(variances), label=label)


def radial_decay_weights(mesh: TetMesh, center, radius: float, alpha: float = 10.0) -> np.ndarray:
    """Weight field that is 1 within ``radius`` of ``center`` and decays as
    ``exp(-alpha (d - radius)^2)`` beyond it. ``alpha`` is in 1/m^2."""
    d = np.linalg.norm(mesh.vertices - np.asarray(center, dtype=float), axis=1)
    w = np.exp(-alpha * np.square(np.maximum(d - radius, 0.0)))
    return w


# ---------------------------------------------------------------------------
# Point handles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HandleSet:
    """Spring handles on selected vertices.

    ``coords`` enumerates the 3r selected force coordinates (the columns of
    the selection map); ``handle_mass`` is the diagonal of the selected mass
    block. The induced force for target displacements A at current
    displacement U is ``alpha * handle_mass * (A - U_selected)``.
    """

    vertices: tuple
    strength: float
    coords: np.ndarray        # (3r,)
    handle_mass: np.ndarray   # (3r,)

    @classmethod
    def create(cls, ops: SystemOperators, vertices: Sequence[int], strength: float) -> "HandleSet":
        verts = [int(v) for v in vertices]
        if len(set(verts)) != len(verts):
            raise InputError("handle vertices must be distinct")
        if any(v < 0 or v >= ops.mesh.num_vertices for v in verts):
            raise InputError("handle vertex index out of range")
        if strength <= 0:
            raise InputError("handle strength must be positive")
        coords = np.array([3 * v + d for v in verts for d in range(3)], dtype=np.int64)
        return cls(vertices=tuple(verts), strength=float(strength),
                   coords=coords, handle_mass=ops.mass[coords])

    @property
    def rank(self) -> int:
        return len(self.coords)

    def force_map(self, num_coords: int) -> np.ndarray:
        """D = alpha * S * N_h as a dense (3n, 3r) matrix."""
        d = np.zeros((num_coords, self.rank))
        d[self.coords, np.arange(self.rank)] = self.strength * self.handle_mass
        return d

    def runtime_force(self, u: np.ndarray, targets: np.ndarray, out=None) -> np.ndarray:
        """Linearized spring force alpha*S*N_h*(A - S^T U) in full coordinates."""
        f = np.zeros_like(u) if out is None else out
        f[self.coords] += self.strength * self.handle_mass * (targets - u[self.coords])
        return f


def handle_prior(ops: SystemOperators, handles: HandleSet,
                 sigma_a=None, mu_a=None, label: str = "handles") -> ForcePrior:
    """Prior induced by randomly actuated handle targets."""
    return _lowrank_prior(handles.force_map(ops.num_coords), sigma_a, mu_a, label)


# ---------------------------------------------------------------------------
# Contact patches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactFrame:
    """One contact frame: a weight field over surface vertices plus an
    orthonormal (normal, tangent, bitangent) triple."""

    weights: np.ndarray   # (n,), >= 0, zero off the surface
    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray

    def frame_matrix(self) -> np.ndarray:
        return np.column_stack([self.normal, self.tangent, self.bitangent])


@dataclass(frozen=True)
class ContactPatchSet:
    frames: tuple

    @classmethod
    def create(cls, mesh: TetMesh, frames: Sequence[ContactFrame]) -> "ContactPatchSet":
        on_surface = np.zeros(mesh.num_vertices, dtype=bool)
        on_surface[mesh.surface_vertices()] = True
        for k, fr in enumerate(frames):
            w = np.asarray(fr.weights, dtype=float)
            if w.shape != (mesh.num_vertices,) or np.any(w < 0):
                raise InputError(f"contact frame {k}: weights must be a nonnegative length-n field")
            if np.any(w[~on_surface] != 0):
                raise InputError(f"contact frame {k}: weights must vanish off the surface")
            q = fr.frame_matrix()
            if np.abs(q.T @ q - np.eye(3)).max() > 1e-10:
                raise InputError(f"contact frame {k}: frame vectors are not orthonormal")
        return cls(frames=tuple(frames))


def contact_prior(ops: SystemOperators, patches: ContactPatchSet,
                  sigma_a=None, mu_a=None, normalize: bool = False,
                  label: str = "contact") -> ForcePrior:
    """Prior for contact loads: per frame j and vertex i the force block is
    ``v_i * w_ij * [n_j t_j r_j]`` with v_i the lumped vertex mass.

    ``normalize`` rescales each frame's weights to sum to one before use.
    """
    n3 = ops.num_coords
    vertex_mass = ops.scalar_mass
    cols = []
    for fr in patches.frames:
        w = np.asarray(fr.weights, dtype=float)
        if normalize:
            total = w.sum()
            if total > 0:
                w = w / total
        scale = vertex_mass * w                       # (n,)
        block = np.zeros((n3, 3))
        q = fr.frame_matrix()
        block.reshape(-1, 3, 3)[:] = scale[:, None, None] * q[None]
        cols.append(block)
    d = np.concatenate(cols, axis=1) if cols else np.zeros((n3, 0))
    if d.shape[1] == 0:
        raise InputError("contact prior needs at least one frame")
    return _lowrank_prior(d, sigma_a, mu_a, label)


# ---------------------------------------------------------------------------
# Pneumatic pockets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PneumaticPocketSet:
    pockets: tuple                # tuple of index arrays
    vertex_areas: np.ndarray      # (n,) Voronoi surface areas
    vertex_normals: np.ndarray    # (n, 3) area-averaged outward normals

    @classmethod
    def create(cls, mesh: TetMesh, pockets: Sequence[Sequence[int]]) -> "PneumaticPocketSet":
        surf = set(mesh.surface_vertices().tolist())
        clean = []
        for k, pocket in enumerate(pockets):
            ids = np.array(sorted(set(int(i) for i in pocket)), dtype=np.int64)
            if ids.size == 0:
                raise InputError(f"pocket {k} is empty")
            off = [int(i) for i in ids if int(i) not in surf]
            if off:
                raise InputError(f"pocket {k} contains non-surface vertices {off[:10]}")
            clean.append(ids)
        areas = mesh.vertex_surface_areas()
        normals = mesh.vertex_normals()
        return cls(pockets=tuple(clean), vertex_areas=areas, vertex_normals=normals)


def pneumatic_prior(mesh: TetMesh, pockets: PneumaticPocketSet,
                    sigma_a=None, mu_a=None, label: str = "pneumatic") -> ForcePrior:
    """Prior for pocket inflation: column j pushes every pocket-j vertex along
    its area-weighted normal, scaled by its Voronoi surface area."""
    n3 = 3 * mesh.num_vertices
    d = np.zeros((n3, len(pockets.pockets)))
    for j, ids in enumerate(pockets.pockets):
        col = np.zeros((mesh.num_vertices, 3))
        col[ids] = pockets.vertex_areas[ids, None] * pockets.vertex_normals[ids]
        d[:, j] = col.ravel()
    return _lowrank_prior(d, sigma_a, mu_a, label)


# ---------------------------------------------------------------------------
# Muscle fibers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MuscleFiberSet:
    elements: np.ndarray    # (k,) active tet indices
    fibers: np.ndarray      # (k, 3) unit directions

    @classmethod
    def create(cls, mesh: TetMesh, elements: Sequence[int], fibers) -> "MuscleFiberSet":
        elements = np.asarray(elements, dtype=np.int64)
        fibers = np.asarray(fibers, dtype=float)
        if fibers.shape != (len(elements), 3):
            raise InputError("need one fiber direction per active element")
        if np.any(elements < 0) or np.any(elements >= mesh.num_tets):
            raise InputError("muscle element index out of range")
        lengths = np.linalg.norm(fibers, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-10):
            raise InputError("fiber directions must be unit vectors (|d| = 1 to 1e-10)")
        return cls(elements=elements, fibers=fibers)


def muscle_prior(mesh: TetMesh, jac: ElementJacobians, fibers: MuscleFiberSet,
                 sigma_a=None, mu_a=None, label: str = "muscle") -> ForcePrior:
    """Prior for fiber contraction under the quadratic muscle model.

    At the rest state the force of a unit actuation on element j is
    ``-v_j (d_j d_j^T) : dF_j/dU``, i.e. ``-v_j * G_j (d_j d_j^T)`` scattered
    to the element's vertices. The fiber appears quadratically, so flipping
    its sign leaves the prior unchanged.
    """
    n3 = 3 * mesh.num_vertices
    d = np.zeros((n3, len(fibers.elements)))
    for col, (e, direction) in enumerate(zip(fibers.elements, fibers.fibers)):
        outer = np.outer(direction, direction)
        local = -jac.volumes[e] * jac.grads[e] @ outer        # (4, 3)
        scatter = np.zeros((mesh.num_vertices, 3))
        np.add.at(scatter, mesh.tets[e], local)
        d[:, col] = scatter.ravel()
    return _lowrank_prior(d, sigma_a, mu_a, label)


# ---------------------------------------------------------------------------
# Spring actuators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpringSet:
    edges: np.ndarray          # (r, 2)
    rest_lengths: np.ndarray   # (r,)

    @classmethod
    def create(cls, mesh: TetMesh, edges: Sequence[Sequence[int]]) -> "SpringSet":
        edges = np.asarray(edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise InputError("edges must be an (r, 2) index array")
        if np.any(edges < 0) or np.any(edges >= mesh.num_vertices):
            raise InputError("spring edge index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise InputError("spring edge endpoints must be distinct")
        rest = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
        if np.any(rest <= 1e-14):
            raise InputError("degenerate zero-length spring edge")
        return cls(edges=edges, rest_lengths=rest)


def spring_prior(mesh: TetMesh, springs: SpringSet,
                 sigma_a=None, mu_a=None, label: str = "springs") -> ForcePrior:
    """Prior for rest-length actuation: the force map is the transposed
    edge-length Jacobian at rest (-unit direction at the tail, +unit at the
    head of each edge)."""
    n3 = 3 * mesh.num_vertices
    d = np.zeros((n3, len(springs.edges)))
    dirs = (mesh.vertices[springs.edges[:, 1]] - mesh.vertices[springs.edges[:, 0]])
    dirs = dirs / springs.rest_lengths[:, None]
    for col, ((a, b), e) in enumerate(zip(springs.edges, dirs)):
        d[3 * a:3 * a + 3, col] = -e
        d[3 * b:3 * b + 3, col] = e
    return _lowrank_prior(d, sigma_a, mu_a, label)
