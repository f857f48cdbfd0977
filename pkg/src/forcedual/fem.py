"""Discrete elastodynamic operators on tetrahedral meshes.

Assembles the two operators everything downstream consumes:

* a lumped diagonal mass matrix ``M`` (each vertex gets a quarter of every
  incident tet's mass, replicated over its three coordinates), so that
  ``N = sqrt(M)`` is trivial; and
* the rest-state stiffness Hessian ``H`` of linear isotropic elasticity,
  assembled from 12x12 element blocks.

Constrained (pinned) coordinates are handled by identity-row replacement,
which keeps sizes fixed and ``H`` positive definite. Meshes with no pins get
a small inertial shift ``H + eps*M`` so the operator stays invertible; force
propagation needs ``H^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, NumericalError
from .meshes import TetMesh, tet_volumes


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic material: Young's modulus (Pa, scalar or per-element),
    Poisson ratio, mass density (kg/m^3, scalar or per-element)."""

    youngs_modulus: float | np.ndarray = 1.0e5
    poisson_ratio: float = 0.45
    density: float | np.ndarray = 1000.0

    def __post_init__(self):
        e = np.asarray(self.youngs_modulus, dtype=float)
        rho = np.asarray(self.density, dtype=float)
        if np.any(e <= 0):
            raise InputError("youngs_modulus must be positive")
        if np.any(rho <= 0):
            raise InputError("density must be positive")
        if not (-1.0 < self.poisson_ratio < 0.5):
            raise InputError("poisson_ratio must lie in (-1, 0.5)")

    def lame(self):
        e = np.asarray(self.youngs_modulus, dtype=float)
        nu = self.poisson_ratio
        lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        mu = e / (2 * (1 + nu))
        return lam, mu


def _per_element(value, num_tets: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(num_tets, float(arr))
    if arr.shape != (num_tets,):
        raise InputError(f"per-element parameter has shape {arr.shape}, expected ({num_tets},)")
    return arr


def shape_gradients(mesh: TetMesh) -> np.ndarray:
    """Barycentric shape-function gradients, one (4, 3) block per tet.

    Row a holds grad N_a; rows sum to zero, so rigid translations produce a
    zero deformation-gradient increment exactly.
    """
    v = mesh.vertices
    t = mesh.tets
    dm = np.stack([v[t[:, 1]] - v[t[:, 0]],
                   v[t[:, 2]] - v[t[:, 0]],
                   v[t[:, 3]] - v[t[:, 0]]], axis=2)   # (e, 3, 3) columns are edges
    dm_inv = np.linalg.inv(dm)                          # rows are grad N_1..3
    grads = np.empty((len(t), 4, 3))
    grads[:, 1:, :] = dm_inv
    grads[:, 0, :] = -dm_inv.sum(axis=1)
    return grads


def assemble_mass(mesh: TetMesh, mat: MaterialParams) -> np.ndarray:
    """Lumped mass diagonal, length 3n. Conserves total mass exactly."""
    rho = _per_element(mat.density, mesh.num_tets)
    vols = tet_volumes(mesh.vertices, mesh.tets)
    vertex_mass = np.zeros(mesh.num_vertices)
    np.add.at(vertex_mass, mesh.tets.ravel(), np.repeat(rho * vols / 4.0, 4))
    return np.repeat(vertex_mass, 3)


def _elasticity_matrix(lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Voigt-form isotropic elasticity tensor (6x6 per element)."""
    e = len(lam)
    c = np.zeros((e, 6, 6))
    c[:, :3, :3] = lam[:, None, None]
    idx = np.arange(3)
    c[:, idx, idx] += 2.0 * mu[:, None]
    c[:, 3 + idx, 3 + idx] = mu[:, None]
    return c


def element_stiffness(mesh: TetMesh, mat: MaterialParams) -> np.ndarray:
    """Per-element 12x12 stiffness blocks ``vol * B^T C B``."""
    grads = shape_gradients(mesh)
    vols = tet_volumes(mesh.vertices, mesh.tets)
    lam, mu = mat.lame()
    lam = _per_element(lam, mesh.num_tets)
    mu = _per_element(mu, mesh.num_tets)

    e = mesh.num_tets
    b = np.zeros((e, 6, 12))
    for a in range(4):
        gx, gy, gz = grads[:, a, 0], grads[:, a, 1], grads[:, a, 2]
        col = 3 * a
        b[:, 0, col + 0] = gx
        b[:, 1, col + 1] = gy
        b[:, 2, col + 2] = gz
        b[:, 3, col + 0] = gy
        b[:, 3, col + 1] = gx
        b[:, 4, col + 1] = gz
        b[:, 4, col + 2] = gy
        b[:, 5, col + 0] = gz
        b[:, 5, col + 2] = gx
    c = _elasticity_matrix(lam, mu)
    return vols[:, None, None] * np.einsum("eki,ekl,elj->eij", b, c, b)


def assemble_hessian(mesh: TetMesh, mat: MaterialParams,
                     pins: Iterable[int] = (), eps: float | None = None) -> sp.csc_matrix:
    """Rest-state stiffness with pins applied; shifted by ``eps*M`` when free.

    Pinned coordinate rows/columns are replaced by identity. With no pins,
    ``eps`` defaults to ``1e-4 * mean(diag H) / mean(diag M)`` so the result
    is positive definite despite the six rigid modes.
    """
    ke = element_stiffness(mesh, mat)
    n3 = 3 * mesh.num_vertices
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    h = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n3, n3)).tocsc()
    h.sum_duplicates()

    pins = sorted(set(int(p) for p in pins))
    if any(p < 0 or p >= mesh.num_vertices for p in pins):
        raise InputError("pinned vertex index out of range")
    pinned_coords = np.array([3 * p + d for p in pins for d in range(3)], dtype=np.int64)

    if len(pins) == 0:
        # eps=0 is permitted here (yields the singular rest Hessian, useful
        # for nullspace checks); invertibility is enforced where H is solved.
        mass = assemble_mass(mesh, mat)
        if eps is None:
            eps = 1.0e-4 * (h.diagonal().mean() / mass.mean())
        if eps < 0:
            raise InputError("regularization eps must be nonnegative")
        if eps > 0:
            h = (h + sp.diags(eps * mass)).tocsc()
    else:
        if eps is None:
            eps = 0.0
        keep = np.ones(n3, dtype=bool)
        keep[pinned_coords] = False
        mask = sp.diags(keep.astype(float))
        h = (mask @ h @ mask + sp.diags((~keep).astype(float))).tocsc()
        if eps > 0:
            mass = assemble_mass(mesh, mat)
            h = (h + sp.diags(eps * mass * keep)).tocsc()
    return h


@dataclass(frozen=True)
class ElementJacobians:
    """Per-element linear map from nodal displacements to the deformation
    gradient increment: ``F_j(U) = I + dF_j(U)`` with ``dF_j = U_j^T G_j``."""

    tets: np.ndarray         # (e, 4)
    grads: np.ndarray        # (e, 4, 3)
    volumes: np.ndarray      # (e,)

    def deformation_gradients(self, u: np.ndarray) -> np.ndarray:
        """F per element for the displacement field u (3n or (n,3))."""
        disp = u.reshape(-1, 3)
        ue = disp[self.tets]                               # (e, 4, 3)
        df = np.einsum("eai,eaj->eij", ue, self.grads)
        return np.eye(3)[None] + df


def element_jacobians(mesh: TetMesh) -> ElementJacobians:
    vols = tet_volumes(mesh.vertices, mesh.tets)
    if np.any(vols <= 0):
        raise InputError("degenerate tet with non-positive volume")
    return ElementJacobians(tets=mesh.tets, grads=shape_gradients(mesh), volumes=vols)


class SystemOperators:
    """Mass, stiffness, and their factorization for one configured scene.

    ``solve`` applies the constrained inverse: pinned coordinates carry no
    load and never move, so the right-hand side and the solution are zeroed
    there. This is exactly the solve on the free block, with sizes kept at 3n.
    """

    def __init__(self, mesh: TetMesh, material: MaterialParams,
                 pins: Iterable[int] = (), eps: float | None = None):
        self.mesh = mesh
        self.material = material
        self.pinned = frozenset(int(p) for p in pins)
        self.mass = assemble_mass(mesh, material)
        if eps is None and not self.pinned:
            raw = assemble_hessian(mesh, material, (), 0.0)
            eps = 1.0e-4 * float(raw.diagonal().mean() / self.mass.mean())
        self.regularization = float(eps) if eps is not None else 0.0
        if not self.pinned and self.regularization <= 0:
            raise InputError("unpinned meshes need a positive regularization eps")
        self.hessian = assemble_hessian(mesh, material, self.pinned, self.regularization)
        coords = np.array([3 * p + d for p in sorted(self.pinned) for d in range(3)],
                          dtype=np.int64)
        self.pinned_coords = coords
        self._free_mask = np.ones(3 * mesh.num_vertices, dtype=bool)
        self._free_mask[coords] = False

        asym = abs(self.hessian - self.hessian.T).max()
        scale = abs(self.hessian).max()
        if asym > 1e-12 * scale:
            raise NumericalError(f"assembled Hessian is not symmetric (|H-H^T|={asym:g})")

    @property
    def num_coords(self) -> int:
        return 3 * self.mesh.num_vertices

    @property
    def free_mask(self) -> np.ndarray:
        """Boolean mask over coordinates, False where pinned."""
        return self._free_mask

    @cached_property
    def sqrt_mass(self) -> np.ndarray:
        return np.sqrt(self.mass)

    @cached_property
    def scalar_mass(self) -> np.ndarray:
        """Per-vertex masses (length n); each appears three times in ``mass``."""
        return self.mass[0::3]

    @cached_property
    def _factor(self):
        try:
            lu = spla.splu(self.hessian.tocsc())
        except RuntimeError as exc:
            raise NumericalError(
                f"stiffness factorization failed ({exc}); mesh may contain "
                "degenerate elements or eps is too small") from exc
        # Definiteness probe: splu succeeds for any nonsingular matrix, so
        # check a few quadratic forms before trusting the factor.
        rng = np.random.default_rng(12345)
        probes = rng.standard_normal((3, self.num_coords))
        for v in probes:
            if float(v @ (self.hessian @ v)) <= 0:
                raise NumericalError("stiffness operator is not positive definite")
        return lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Constrained solve H u = f; accepts a vector or a (3n, k) block."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.num_coords:
            raise InputError(f"rhs has leading dimension {rhs.shape[0]}, expected {self.num_coords}")
        constrained = rhs.copy()
        constrained[~self._free_mask] = 0.0
        out = self._factor.solve(constrained)
        if self.pinned_coords.size:
            out[~self._free_mask] = 0.0
        return out

    def mass_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(a * self.mass, b))

    def mass_norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(np.dot(a * self.mass, a), 0.0)))


def build_operators(mesh: TetMesh, material: MaterialParams,
                    pins: Iterable[int] = (), eps: float | None = None) -> SystemOperators:
    return SystemOperators(mesh, material, pins, eps)
