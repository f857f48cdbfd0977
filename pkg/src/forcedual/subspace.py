"""Subspace construction from force priors.

A force prior N(mu_F, Sigma_F) pushed through the linearized system gives a
displacement distribution N(mu_U, Sigma_U) with mu_U = H^-1 mu_F and
Sigma_U = H^-1 Sigma_F H^-1. The best m-dimensional mass-orthonormal basis
for that distribution consists of the top m eigenvectors of Sigma_U M; with
N = sqrt(M) those are N^-1 times the top eigenvectors of the symmetric
operator N H^-1 Sigma_F H^-1 N.

Two computational paths:
  * diagonal covariance: Lanczos iteration on the symmetric operator above,
    applied matrix-free with two sparse solves per product;
  * low-rank covariance Sigma_F = L L^T: thin SVD of K = N H^-1 L, one
    sparse solve per column of L, with basis N^-1 U and eigenvalues S^2.

Both paths agree with the dense reference eigendecomposition; the low-rank
basis always lies in the span of the force responses H^-1 L.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla

from .errors import InputError, NumericalError
from .fem import SystemOperators
from .priors import DiagonalCovariance, ForcePrior, LowRankCovariance

_LANCZOS_TOL = 1e-10
_LANCZOS_MAXITER = 300
_LANCZOS_EXTRA = 8          # subspace size beyond m
_LANCZOS_SEED = 1234        # fixed start vector for run-to-run determinism
_RANK_RTOL = 1e-12          # relative eigenvalue cutoff for rank checks
_DEGENERATE_RTOL = 1e-7     # relative gap below which eigenvalues count as equal


@dataclass(frozen=True)
class Subspace:
    """Mass-orthonormal basis with per-mode displacement variances.

    ``basis`` is 3n x m with basis^T M basis = I, ``eigenvalues`` holds the
    corresponding variances of Sigma_U M in descending order, ``mean`` is the
    propagated prior mean. ``mass`` is kept in memory for projections but is
    not part of the serialized artifact.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    mass: np.ndarray = field(repr=False)
    label: str = ""
    path: str = ""

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.basis, dtype=float))
        lam = np.ascontiguousarray(np.asarray(self.eigenvalues, dtype=float))
        mu = np.ascontiguousarray(np.asarray(self.mean, dtype=float))
        mass = np.asarray(self.mass, dtype=float)
        if b.ndim != 2 or lam.shape != (b.shape[1],) or mu.shape != (b.shape[0],):
            raise InputError("inconsistent subspace shapes")
        if mass.shape != (b.shape[0],):
            raise InputError("mass vector size mismatch")
        if np.any(lam < 0) or np.any(np.diff(lam) > 1e-12 * max(1.0, lam[0] if lam.size else 1.0)):
            raise InputError("eigenvalues must be nonnegative and descending")
        gram = b.T @ (mass[:, None] * b)
        if np.abs(gram - np.eye(b.shape[1])).max() > 1e-8:
            raise InputError("basis is not mass-orthonormal")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "mass", mass)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def num_coords(self) -> int:
        return self.basis.shape[0]

    @property
    def modal_frequencies(self) -> np.ndarray:
        """Frequencies of the equivalent vibration modes, lambda^(-1/4).

        Meaningful for the mass-weighted white-noise prior, where the
        construction reduces to classical modal analysis.
        """
        with np.errstate(divide="ignore"):
            return np.power(self.eigenvalues, -0.25)

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise InputError(f"reduced coordinates must have length {self.dim}")
        return self.basis @ z + self.mean

    def project(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.num_coords,):
            raise InputError(f"displacement vector must have length {self.num_coords}")
        return self.basis.T @ (self.mass * (u - self.mean))


def reconstruct(sub: Subspace, z: np.ndarray) -> np.ndarray:
    return sub.reconstruct(z)


def project(sub: Subspace, u: np.ndarray) -> np.ndarray:
    return sub.project(u)


@dataclass(frozen=True)
class DisplacementDistribution:
    """Lazy N(mu_U, Sigma_U): holds the system and the force prior, never a
    dense covariance. The mean costs one sparse solve on first access."""

    ops: SystemOperators
    prior: ForcePrior

    def __post_init__(self):
        if self.prior.size != self.ops.num_coords:
            raise InputError("prior size does not match the system")

    @cached_property
    def mean(self) -> np.ndarray:
        if not self.prior.mean.any():
            return np.zeros(self.ops.num_coords)
        return self.ops.solve(self.prior.mean)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Displacement samples as columns of a (3n, count) array."""
        return self.ops.solve(self.prior.sample(rng, count))


def propagate(ops: SystemOperators, prior: ForcePrior) -> DisplacementDistribution:
    return DisplacementDistribution(ops=ops, prior=prior)


# ---------------------------------------------------------------------------
# Canonicalization: deterministic output for equal mathematical content
# ---------------------------------------------------------------------------

def _canonical_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    np.argmax resolves ties toward the lowest coordinate index.
    """
    out = basis.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            out[:, j] = -col
    return out


def _canonicalize(basis: np.ndarray, eigenvalues: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Fix the arbitrary choices a symmetric eigensolver leaves open.

    Within a repeated-eigenvalue block any orthonormal rotation of the
    columns is valid; we rebuild such blocks by M-orthogonal Gram-Schmidt
    applied to the projections of the coordinate axes (ascending index)
    onto the block's span, then apply the sign rule to every column.
    """
    basis = basis.copy()
    scale = eigenvalues[0] if eigenvalues.size else 0.0
    j = 0
    while j < len(eigenvalues):
        k = j + 1
        while k < len(eigenvalues) and eigenvalues[j] - eigenvalues[k] <= _DEGENERATE_RTOL * max(scale, 1e-300):
            k += 1
        if k - j > 1:
            block = basis[:, j:k]
            coeff = block.T * mass[None, :]       # maps a full vector to block coords
            fixed = []
            axis = 0
            while len(fixed) < k - j and axis < basis.shape[0]:
                c = coeff[:, axis].copy()         # block coordinates of axis projection
                for _ in range(2):                # second pass keeps near-dependent
                    for f in fixed:               # candidates orthogonal in float
                        c -= f * (f @ c)
                norm = np.linalg.norm(c)
                if norm > 1e-8:
                    fixed.append(c / norm)
                axis += 1
            if len(fixed) == k - j:
                rot = np.column_stack(fixed)
                if np.abs(rot.T @ rot - np.eye(k - j)).max() <= 1e-12:
                    basis[:, j:k] = block @ rot
        j = k
    return _canonical_signs(basis)


# ---------------------------------------------------------------------------
# Build paths
# ---------------------------------------------------------------------------

def _check_prior_size(ops: SystemOperators, prior: ForcePrior):
    if prior.size != ops.num_coords:
        raise InputError(f"prior has {prior.size} coordinates, system has {ops.num_coords}")


def _zero_pins(basis: np.ndarray, pinned_coords: np.ndarray) -> np.ndarray:
    # Pinned coordinates are exactly immobile; scrub the solver's rounding
    # junk (the true eigenvector components there are zero).
    if pinned_coords.size:
        basis[pinned_coords, :] = 0.0
    return basis


def _mean_u(ops: SystemOperators, prior: ForcePrior) -> np.ndarray:
    if prior.mean.any():
        return ops.solve(prior.mean)
    return np.zeros(ops.num_coords)


def build_diagonal(ops: SystemOperators, prior: ForcePrior, m: int) -> Subspace:
    """Top-m basis for a diagonal-covariance prior via matrix-free Lanczos.

    The iteration runs on the symmetric positive semidefinite operator
    ``N H^-1 diag(sigma^2) H^-1 N`` whose top eigenpairs are exactly
    (Lambda, N B); each product costs two sparse solves. Zero variances are
    honored exactly: those force coordinates simply never enter the range.
    """
    _check_prior_size(ops, prior)
    if not isinstance(prior.covariance, DiagonalCovariance):
        raise InputError("build_diagonal requires a diagonal-covariance prior")
    if m < 1:
        raise InputError("subspace dimension must be at least 1")
    variances = prior.covariance.variances.copy()
    variances[ops.pinned_coords] = 0.0
    available = int(np.count_nonzero(variances > 0))
    if available == 0:
        raise InputError("prior covariance is identically zero")
    if m > available:
        raise InputError(
            f"requested dimension {m} exceeds the prior's rank ({available} "
            "unpinned coordinates with positive variance)")

    dim = ops.num_coords
    sqrt_m = ops.sqrt_mass

    def apply(v):
        w = ops.solve(sqrt_m * v)
        w = ops.solve(variances * w)
        return sqrt_m * w

    op = spla.LinearOperator((dim, dim), matvec=apply, dtype=float)
    v0 = np.random.default_rng(_LANCZOS_SEED).standard_normal(dim)
    v0[ops.pinned_coords] = 0.0
    ncv = min(dim, max(m + _LANCZOS_EXTRA, min(dim, 2 * m + 1)))
    try:
        lam, y = spla.eigsh(op, k=m, which="LM", tol=_LANCZOS_TOL,
                            maxiter=_LANCZOS_MAXITER, ncv=ncv, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(f"eigensolver failed to converge: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    y = y[:, order]
    if lam[0] <= 0 or lam[-1] <= _RANK_RTOL * lam[0]:
        raise InputError(f"requested dimension {m} exceeds the prior's effective rank")
    basis = _zero_pins(y / sqrt_m[:, None], ops.pinned_coords)
    basis = _canonicalize(basis, lam, ops.mass)
    return Subspace(basis=basis, eigenvalues=lam, mean=_mean_u(ops, prior),
                    mass=ops.mass, label=prior.label, path="diagonal-GEVP")


def build_lowrank(ops: SystemOperators, prior: ForcePrior, m: int) -> Subspace:
    """Top-m basis for a factored-covariance prior via thin SVD.

    With Sigma_F = L L^T the operator N H^-1 Sigma_F H^-1 N equals K K^T for
    K = N H^-1 L, so the basis is N^-1 times the top-m left singular vectors
    of K and the eigenvalues are the squared singular values.
    """
    _check_prior_size(ops, prior)
    if not isinstance(prior.covariance, LowRankCovariance):
        raise InputError("build_lowrank requires a factored-covariance prior")
    r = prior.covariance.rank
    if m < 1:
        raise InputError("subspace dimension must be at least 1")
    if m > r:
        raise InputError(f"requested dimension {m} exceeds the prior rank {r}")
    if not prior.covariance.factor.any():
        raise InputError("prior covariance is identically zero")
    k = ops.sqrt_mass[:, None] * ops.solve(prior.covariance.factor)
    try:
        u, s, _ = np.linalg.svd(k, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of the response factor failed: {exc}") from exc
    lam = s * s
    if lam[0] <= 0 or lam[m - 1] <= _RANK_RTOL * lam[0]:
        raise InputError(f"requested dimension {m} exceeds the prior's effective rank")
    basis = _zero_pins(u[:, :m] / ops.sqrt_mass[:, None], ops.pinned_coords)
    basis = _canonicalize(basis, lam[:m], ops.mass)
    return Subspace(basis=basis, eigenvalues=lam[:m], mean=_mean_u(ops, prior),
                    mass=ops.mass, label=prior.label, path="lowrank-SVD")


def greens_subspace(ops: SystemOperators, forces: np.ndarray, m: int) -> Subspace:
    """Baseline basis spanning the responses to the given force columns.

    No truncation: the whole m-column response set is mass-orthonormalized,
    so the span equals Col(H^-1 D) exactly. Rank deficiency is an error.
    """
    forces = np.asarray(forces, dtype=float)
    if forces.ndim != 2 or forces.shape[0] != ops.num_coords:
        raise InputError("force set must be a (3n, m) matrix")
    if m != forces.shape[1]:
        raise InputError("greens_subspace keeps every response: m must equal the column count")
    k = ops.sqrt_mass[:, None] * ops.solve(forces)
    u, s, _ = np.linalg.svd(k, full_matrices=False)
    if s[0] <= 0 or s[-1] <= 1e-10 * s[0]:
        raise InputError("force responses are numerically rank-deficient")
    lam = s * s
    basis = _zero_pins(u / ops.sqrt_mass[:, None], ops.pinned_coords)
    basis = _canonicalize(basis, lam, ops.mass)
    return Subspace(basis=basis, eigenvalues=lam, mean=np.zeros(ops.num_coords),
                    mass=ops.mass, label="greens", path="greens")


# ---------------------------------------------------------------------------
# Skinning scalarization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkinningWeights:
    """Scalar per-vertex weight fields with a derived blend-skinning basis.

    ``weights`` (n x m) are the principal components of the summed-coordinate
    scalar displacement field, orthonormal under the scalar lumped mass.
    ``basis`` is the mass-orthonormalized span of the per-weight affine
    blends (up to 12 columns per weight before rank truncation).
    """

    weights: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray = field(repr=False)
    label: str = ""

    @property
    def num_weights(self) -> int:
        return self.weights.shape[1]


def _scalar_components(ops: SystemOperators, prior: ForcePrior, m: int):
    """Top-m scalar principal components of phi = U_x + U_y + U_z."""
    n = ops.num_coords // 3
    pinned_verts = np.array(sorted(ops.pinned), dtype=np.int64)
    sqrt_ms = np.sqrt(ops.scalar_mass)
    if isinstance(prior.covariance, LowRankCovariance):
        if m > prior.covariance.rank:
            raise InputError(f"requested dimension {m} exceeds the prior rank {prior.covariance.rank}")
        q = ops.solve(prior.covariance.factor)          # (3n, r)
        k_phi = sqrt_ms[:, None] * q.reshape(n, 3, -1).sum(axis=1)
        u, s, _ = np.linalg.svd(k_phi, full_matrices=False)
        lam = s * s
        if lam[0] <= 0 or lam[m - 1] <= _RANK_RTOL * lam[0]:
            raise InputError("requested dimension exceeds the scalarized prior's rank")
        w = _zero_pins(u[:, :m] / sqrt_ms[:, None], pinned_verts)
        return _canonicalize(w, lam[:m], ops.scalar_mass), lam[:m]

    variances = prior.covariance.variances.copy()
    variances[ops.pinned_coords] = 0.0
    if not variances.any():
        raise InputError("prior covariance is identically zero")

    def apply(v):
        expanded = np.repeat(sqrt_ms * v, 3)
        w = ops.solve(variances * ops.solve(expanded))
        return sqrt_ms * w.reshape(n, 3).sum(axis=1)

    op = spla.LinearOperator((n, n), matvec=apply, dtype=float)
    v0 = np.random.default_rng(_LANCZOS_SEED).standard_normal(n)
    v0[pinned_verts] = 0.0
    ncv = min(n, max(m + _LANCZOS_EXTRA, min(n, 2 * m + 1)))
    try:
        lam, y = spla.eigsh(op, k=m, which="LM", tol=_LANCZOS_TOL,
                            maxiter=_LANCZOS_MAXITER, ncv=ncv, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(f"scalar eigensolver failed to converge: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    if lam[0] <= 0 or lam[-1] <= _RANK_RTOL * lam[0]:
        raise InputError("requested dimension exceeds the scalarized prior's rank")
    w = _zero_pins(y[:, order] / sqrt_ms[:, None], pinned_verts)
    return _canonicalize(w, lam, ops.scalar_mass), lam


def expand_blend_basis(ops: SystemOperators, weights: np.ndarray) -> np.ndarray:
    """Mass-orthonormalized affine blend of the weight columns.

    Weight column w contributes, at vertex i with rest position x_i, the
    twelve displacement generators w_i * [x_i1 I, x_i2 I, x_i3 I, I]
    (a full affine transform blended by the weight). Linearly dependent
    generators are dropped by singular value truncation.
    """
    n = ops.num_coords // 3
    x = ops.mesh.vertices
    m = weights.shape[1]
    e = np.zeros((ops.num_coords, 12 * m))
    eye = np.eye(3)
    for k in range(m):
        w = weights[:, k]
        block = np.zeros((n, 3, 12))
        for a in range(3):
            block[:, :, 3 * a:3 * a + 3] = (w * x[:, a])[:, None, None] * eye[None]
        block[:, :, 9:12] = w[:, None, None] * eye[None]
        e[:, 12 * k:12 * (k + 1)] = block.reshape(ops.num_coords, 12)
    y = ops.sqrt_mass[:, None] * e
    u, s, _ = np.linalg.svd(y, full_matrices=False)
    keep = s > 1e-10 * s[0]
    if not keep.any():
        raise InputError("blend expansion produced a zero basis")
    return _zero_pins(u[:, keep] / ops.sqrt_mass[:, None], ops.pinned_coords)


def scalarize_skinning(ops: SystemOperators, prior: ForcePrior, m: int) -> SkinningWeights:
    """Collapse the displacement distribution to one scalar per vertex and
    extract skinning weight fields plus their affine blend basis."""
    _check_prior_size(ops, prior)
    if m < 1:
        raise InputError("need at least one weight column")
    weights, lam = _scalar_components(ops, prior, m)
    basis = expand_blend_basis(ops, weights)
    return SkinningWeights(weights=weights, eigenvalues=lam, basis=basis,
                           label=prior.label)
