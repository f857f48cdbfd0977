"""Dense brute-force references used only in tests and validation.

Everything here trades scalability for directness: covariances are
materialized, eigenproblems are solved densely, and expectations are checked
by closed form and by Monte Carlo. These routes are the ground truth the
sparse construction paths are validated against, so they deliberately share
no solver machinery with them beyond the assembled operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InputError
from .fem import SystemOperators
from .priors import DiagonalCovariance, ForcePrior, _lowrank_prior, lma_prior
from .subspace import Subspace, build_diagonal, build_lowrank

SIZE_CAP = 600  # largest 3n for which dense covariances may be materialized


def _masked_prior_arrays(ops: SystemOperators, prior: ForcePrior):
    """Dense Sigma_F and mu_F with pinned coordinates zeroed out."""
    pins = ops.pinned_coords
    mean = prior.mean.copy()
    mean[pins] = 0.0
    if isinstance(prior.covariance, DiagonalCovariance):
        v = prior.covariance.variances.copy()
        v[pins] = 0.0
        return np.diag(v), mean
    factor = prior.covariance.factor.copy()
    factor[pins, :] = 0.0
    return factor @ factor.T, mean


@dataclass(frozen=True)
class DenseModel:
    """Fully materialized linear-Gaussian model on a small mesh."""

    hessian: np.ndarray   # dense, with identity rows on pinned coordinates
    mass: np.ndarray      # (3n,)
    sigma_f: np.ndarray   # dense force covariance, pinned rows/cols zero
    sigma_u: np.ndarray   # dense displacement covariance
    mean_f: np.ndarray
    mean_u: np.ndarray
    label: str = ""

    @classmethod
    def from_system(cls, ops: SystemOperators, prior: ForcePrior) -> "DenseModel":
        if ops.num_coords > SIZE_CAP:
            raise InputError(
                f"dense reference capped at {SIZE_CAP} coordinates, got {ops.num_coords}")
        if prior.size != ops.num_coords:
            raise InputError("prior size does not match the system")
        h = ops.hessian.toarray()
        sigma_f, mean_f = _masked_prior_arrays(ops, prior)
        # Sigma_U = H^-1 Sigma_F H^-1 by two dense solves (H is symmetric).
        half = np.linalg.solve(h, sigma_f)
        sigma_u = np.linalg.solve(h, half.T)
        sigma_u = (sigma_u + sigma_u.T) / 2
        mean_u = np.linalg.solve(h, mean_f)
        return cls(hessian=h, mass=ops.mass.copy(), sigma_f=sigma_f,
                   sigma_u=sigma_u, mean_f=mean_f, mean_u=mean_u,
                   label=prior.label)

    @property
    def num_coords(self) -> int:
        return self.mass.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.hessian, rhs)


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    out = basis.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def dense_optimal_basis(model: DenseModel, m: int) -> Subspace:
    """Top-m eigenvectors of Sigma_U M by a dense symmetric eigensolve.

    Worked in the symmetrized variable: eigenvectors y of N Sigma_U N give
    the mass-orthonormal basis N^-1 y with the same eigenvalues.
    """
    if m < 1 or m > model.num_coords:
        raise InputError("invalid subspace dimension for dense eigensolve")
    sqrt_m = np.sqrt(model.mass)
    c = sqrt_m[:, None] * model.sigma_u * sqrt_m[None, :]
    w, y = np.linalg.eigh((c + c.T) / 2)
    w = w[::-1]
    y = y[:, ::-1]
    lam = np.clip(w[:m], 0.0, None)
    if lam[0] <= 0 or lam[-1] <= 1e-14 * lam[0]:
        raise InputError("requested dimension exceeds the dense covariance rank")
    basis = _fix_signs(y[:, :m] / sqrt_m[:, None])
    return Subspace(basis=basis, eigenvalues=lam, mean=model.mean_u,
                    mass=model.mass, label=model.label, path="dense-GEVP")


def discarded_eigenvalue_sum(model: DenseModel, m: int) -> float:
    """Closed-form optimal expected squared M-norm error for dimension m."""
    sqrt_m = np.sqrt(model.mass)
    c = sqrt_m[:, None] * model.sigma_u * sqrt_m[None, :]
    w = np.linalg.eigvalsh((c + c.T) / 2)[::-1]
    return float(np.clip(w[m:], 0.0, None).sum())


def expected_reconstruction_error(model: DenseModel, basis: np.ndarray,
                                  mean=None) -> float:
    """Expected squared M-norm error of mean-offset projection onto Col(basis).

    For U ~ N(mu_U, Sigma_U) reconstructed as B B^T M (U - mean) + mean:
    error = |(I-P)(mu_U - mean)|_M^2 + tr(M Sigma_U) - tr(B^T M Sigma_U M B).
    """
    mean = model.mean_u if mean is None else np.asarray(mean, dtype=float)
    mb = model.mass[:, None] * basis          # M B
    d = model.mean_u - mean
    resid = d - basis @ (mb.T @ d)
    bias = float(resid @ (model.mass * resid))
    total = float(np.sum(model.mass * np.diag(model.sigma_u)))
    captured = float(np.trace(mb.T @ model.sigma_u @ mb))
    return bias + total - captured


def monte_carlo_reconstruction_error(model: DenseModel, prior: ForcePrior,
                                     basis: np.ndarray, mean, rng,
                                     count: int, pins=()) -> float:
    """Same quantity as expected_reconstruction_error, by sampling.

    Forces are drawn from the prior, zeroed on the pinned coordinates, and
    propagated by dense solves; returns the average squared M-norm residual.
    """
    mean = np.asarray(mean, dtype=float)
    f = prior.sample(rng, count)
    if len(pins):
        f[np.asarray(pins, dtype=np.int64), :] = 0.0
    u = model.solve(f)
    centered = u - mean[:, None]
    resid = centered - basis @ ((model.mass[:, None] * basis).T @ centered)
    errs = np.einsum("ij,ij->j", resid, model.mass[:, None] * resid)
    return float(errs.mean())


def random_mass_orthonormal_basis(mass: np.ndarray, m: int,
                                  rng: np.random.Generator) -> np.ndarray:
    """Uniformly random M-orthonormal basis (for optimality comparisons)."""
    y = rng.standard_normal((mass.shape[0], m))
    q, _ = np.linalg.qr(np.sqrt(mass)[:, None] * y)
    return q / np.sqrt(mass)[:, None]


def pca_from_samples(ops: SystemOperators, prior: ForcePrior, m: int,
                     count: int, seed: int) -> Subspace:
    """Empirical top-m basis from sampled interaction responses.

    Draws ``count`` forces from the prior, solves one static problem per
    sample, and runs mass-weighted PCA on the snapshots about the true
    propagated mean. Deterministic for a fixed seed.
    """
    if count < m:
        raise InputError(f"need at least {m} samples for {m} components, got {count}")
    rng = np.random.default_rng(seed)
    f = prior.sample(rng, count)
    u = ops.solve(f)
    mean_u = ops.solve(prior.mean) if prior.mean.any() else np.zeros(ops.num_coords)
    x = (u - mean_u[:, None]) / np.sqrt(count)
    yv, s, _ = np.linalg.svd(ops.sqrt_mass[:, None] * x, full_matrices=False)
    lam = s[:m] ** 2
    if lam[0] <= 0 or lam[-1] <= 1e-14 * lam[0]:
        raise InputError("samples do not span the requested dimension")
    basis = _fix_signs(yv[:, :m] / ops.sqrt_mass[:, None])
    return Subspace(basis=basis, eigenvalues=lam, mean=mean_u,
                    mass=ops.mass, label=prior.label, path="pca")


@dataclass(frozen=True)
class AlignmentReport:
    """Principal angles between two subspaces in the M-inner product,
    ascending, plus per-column relative projection residuals of the first
    basis onto the second."""

    angles: np.ndarray
    residuals: np.ndarray

    @property
    def max_angle(self) -> float:
        return float(self.angles.max()) if self.angles.size else 0.0

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0


def principal_angles(a: Subspace, b: Subspace, mass=None) -> AlignmentReport:
    """Angles via singular values of B_a^T M B_b, clamped to [0, 1]."""
    if a.num_coords != b.num_coords:
        raise InputError("subspaces live in different ambient dimensions")
    mass = a.mass if mass is None else np.asarray(mass, dtype=float)
    g = a.basis.T @ (mass[:, None] * b.basis)
    s = np.linalg.svd(g, compute_uv=False)
    s = np.clip(s, 0.0, 1.0)
    angles = np.sort(np.arccos(s))
    row_capture = np.minimum(np.einsum("ij,ij->i", g, g), 1.0)
    residuals = np.sqrt(1.0 - row_capture)
    return AlignmentReport(angles=angles, residuals=residuals)


@dataclass(frozen=True)
class AppendixReport:
    lma_max_angle: float
    greens_max_residual: float


def modal_basis(ops: SystemOperators, m: int) -> Subspace:
    """Classical vibration modes by a dense generalized eigensolve.

    Solves H x = omega^2 M x on the free coordinates, pads pinned rows with
    zeros, and reports displacement variances lambda = omega^-4 (the prior
    Sigma_F = M propagated through H twice).
    """
    free = ops.free_mask
    h = ops.hessian.toarray()[np.ix_(free, free)]
    mdiag = ops.mass[free]
    w, v = sla.eigh(h, np.diag(mdiag))
    basis = np.zeros((ops.num_coords, m))
    basis[free, :] = v[:, :m]
    lam = 1.0 / np.square(w[:m])          # eigh returns omega^2 directly
    order = np.argsort(lam)[::-1]
    return Subspace(basis=_fix_signs(basis[:, order]), eigenvalues=lam[order],
                    mean=np.zeros(ops.num_coords), mass=ops.mass,
                    label="lma", path="lma-reference")


def appendix_checks(ops: SystemOperators, m: int, lowrank: ForcePrior = None,
                    seed: int = 0) -> AppendixReport:
    """Special-case equivalences of the construction.

    (i) With Sigma_F = M the sparse diagonal path must span the classical
    vibration modes. (ii) A factored-prior basis must lie inside the span of
    the force responses H^-1 L, for full or truncated dimension.
    """
    lma_sub = build_diagonal(ops, lma_prior(ops), m)
    ref = modal_basis(ops, m)
    lma_angle = principal_angles(lma_sub, ref).max_angle

    if lowrank is None:
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((ops.num_coords, max(m, 5)))
        lowrank = _lowrank_prior(d, None, None, "random-lowrank")
    sub = build_lowrank(ops, lowrank, min(m, lowrank.covariance.rank))
    g = ops.sqrt_mass[:, None] * ops.solve(lowrank.covariance.factor)
    q, _ = np.linalg.qr(g)
    y = ops.sqrt_mass[:, None] * sub.basis
    resid = y - q @ (q.T @ y)
    greens_resid = float(np.linalg.norm(resid, axis=0).max())
    return AppendixReport(lma_max_angle=lma_angle, greens_max_residual=greens_resid)
