"""Gaussian-mixture force priors with Bayes-rule component selection.

A mixture holds K force priors with simplex weights pi. Its first two
moments combine the component moments with the spread of the component
means. At runtime, an observed force on a small vertex subset scores each
component by its marginal Gaussian log-density plus log pi_k; the argmax
picks the active component and its precomputed subspace. A hysteresis
filter suppresses chattering between closely scored components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NumericalError
from .priors import DiagonalCovariance, ForcePrior, LowRankCovariance
from .subspace import Subspace

_RIDGE_FACTOR = 1e-8
_DEFAULT_MAX_SUPPORT = 256   # vertices per observation


@dataclass(frozen=True)
class ForceObservation:
    """Observed forces on a subset of vertices.

    ``support`` lists vertex indices (unique, ascending); ``values`` holds
    the 3 force components per support vertex, interleaved like the global
    coordinate layout.
    """

    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64)
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if s.ndim != 1 or s.size == 0:
            raise InputError("observation support must be a nonempty vertex list")
        if np.any(np.diff(s) <= 0):
            raise InputError("observation support must be strictly ascending")
        if v.shape != (3 * s.size,):
            raise InputError("observation needs exactly 3 force values per support vertex")
        if not np.isfinite(v).all():
            raise InputError("observed forces must be finite")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_force(cls, force: np.ndarray, support) -> "ForceObservation":
        """Restrict a full force vector to the given vertices."""
        support = np.asarray(sorted(set(int(i) for i in support)), dtype=np.int64)
        coords = (3 * support[:, None] + np.arange(3)[None, :]).ravel()
        return cls(support=support, values=np.asarray(force, dtype=float)[coords])

    @property
    def coords(self) -> np.ndarray:
        """Global coordinate indices covered by the support."""
        return (3 * self.support[:, None] + np.arange(3)[None, :]).ravel()

    def support_key(self) -> tuple:
        return tuple(self.support.tolist())


@dataclass
class MixtureModel:
    """K force priors with simplex weights and optional per-component
    subspaces; marginal score factorizations are cached per support."""

    components: tuple
    weights: np.ndarray
    subspaces: Optional[tuple] = None
    max_support: int = _DEFAULT_MAX_SUPPORT
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise InputError("mixture needs at least one component")
        sizes = {c.size for c in comps}
        if len(sizes) != 1:
            raise InputError("mixture components must share the coordinate count")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(comps),) or np.any(w < 0):
            raise InputError("weights must be a nonnegative vector, one per component")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise InputError("weights must have a positive finite sum")
        if self.subspaces is not None:
            subs = tuple(self.subspaces)
            if len(subs) != len(comps):
                raise InputError("need one subspace per component")
            self.subspaces = subs
        self.components = comps
        self.weights = w / total

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def size(self) -> int:
        return self.components[0].size

    def with_subspaces(self, subspaces: Sequence[Subspace]) -> "MixtureModel":
        return MixtureModel(components=self.components, weights=self.weights.copy(),
                           subspaces=tuple(subspaces), max_support=self.max_support)


@dataclass(frozen=True)
class MixtureMoments:
    """First two moments of the mixture in factored form.

    The covariance is diag(diagonal) + factor @ factor.T: component diagonal
    covariances accumulate in the diagonal part, component factors and the
    weighted mean deviations accumulate as factor columns.
    """

    mean: np.ndarray
    diagonal: np.ndarray
    factor: np.ndarray

    def variance_diagonal(self) -> np.ndarray:
        return self.diagonal + np.einsum("ij,ij->i", self.factor, self.factor)

    def dense(self) -> np.ndarray:
        """Full covariance; only for reference-scale checks."""
        if self.mean.shape[0] > 600:
            raise InputError("dense mixture covariance is capped at 600 coordinates")
        return np.diag(self.diagonal) + self.factor @ self.factor.T


def mixture_moments(mix: MixtureModel) -> MixtureMoments:
    """mu = sum pi_k mu_k; Sigma = sum pi_k (Sigma_k + d_k d_k^T) with
    d_k = mu_k - mu, kept factored."""
    n = mix.size
    mean = np.zeros(n)
    for pi, comp in zip(mix.weights, mix.components):
        mean += pi * comp.mean
    diagonal = np.zeros(n)
    cols = []
    for pi, comp in zip(mix.weights, mix.components):
        if isinstance(comp.covariance, DiagonalCovariance):
            diagonal += pi * comp.covariance.variances
        else:
            cols.append(np.sqrt(pi) * comp.covariance.factor)
        delta = comp.mean - mean
        if delta.any():
            cols.append(np.sqrt(pi) * delta[:, None])
    factor = np.concatenate(cols, axis=1) if cols else np.zeros((n, 0))
    return MixtureMoments(mean=mean, diagonal=diagonal, factor=factor)


def sample_mixture(mix: MixtureModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Mixture samples as columns: draw a component per pi, then its Gaussian."""
    picks = rng.choice(mix.num_components, size=count, p=mix.weights)
    out = np.empty((mix.size, count))
    for k in range(mix.num_components):
        idx = np.flatnonzero(picks == k)
        if idx.size:
            out[:, idx] = mix.components[k].sample(rng, idx.size)
    return out


def _marginal_factorization(mix: MixtureModel, k: int, obs: ForceObservation):
    """Cached (solve, logdet) for component k's marginal on the support."""
    key = (k, obs.support_key())
    hit = mix._cache.get(key)
    if hit is not None:
        return hit
    comp = mix.components[k]
    coords = obs.coords
    dim = coords.size
    if isinstance(comp.covariance, DiagonalCovariance):
        var = comp.covariance.variances[coords].copy()
        scale = var.sum() / dim
        if scale == 0.0:
            scale = comp.covariance.variances.sum() / comp.size
        if scale == 0.0:
            raise NumericalError(f"component {k} has zero variance everywhere")
        var += _RIDGE_FACTOR * scale
        logdet = float(np.log(var).sum())
        inv = 1.0 / var

        def solve(r, inv=inv):
            return inv * r
    else:
        rows = comp.covariance.factor[coords, :]
        cov = rows @ rows.T
        scale = np.trace(cov) / dim
        if scale == 0.0:
            scale = np.einsum("ij,ij->", comp.covariance.factor, comp.covariance.factor) / comp.size
        if scale == 0.0:
            raise NumericalError(f"component {k} has zero variance everywhere")
        cov[np.diag_indices(dim)] += _RIDGE_FACTOR * scale
        try:
            chol = sla.cho_factor(cov, lower=True)
        except sla.LinAlgError as exc:
            raise NumericalError(f"marginal covariance of component {k} is singular "
                                 f"after ridge: {exc}") from exc
        logdet = float(2.0 * np.log(np.diag(chol[0])).sum())

        def solve(r, chol=chol):
            return sla.cho_solve(chol, r)

    entry = (solve, logdet)
    mix._cache[key] = entry
    return entry


def log_posterior(mix: MixtureModel, obs: ForceObservation) -> np.ndarray:
    """Per-component log-scores of the observed forces, comparable across
    components: -1/2 r^T Sigma_s^-1 r - 1/2 log det Sigma_s + log pi_k,
    with everything marginalized to the observation support."""
    if obs.support.size > mix.max_support:
        raise InputError(
            f"observation support of {obs.support.size} vertices exceeds the "
            f"marginal cache limit {mix.max_support}")
    if obs.support[-1] * 3 + 2 >= mix.size:
        raise InputError("observation support indexes past the mesh")
    coords = obs.coords
    scores = np.empty(mix.num_components)
    with np.errstate(divide="ignore"):
        log_pi = np.log(mix.weights)
    for k, comp in enumerate(mix.components):
        solve, logdet = _marginal_factorization(mix, k, obs)
        r = obs.values - comp.mean[coords]
        scores[k] = -0.5 * float(r @ solve(r)) - 0.5 * logdet + log_pi[k]
    return scores


def select_subspace(mix: MixtureModel, obs: ForceObservation):
    """Argmax of log_posterior; ties go to the lowest index. Returns the
    winning index and its precomputed subspace."""
    scores = log_posterior(mix, obs)
    k = int(np.argmax(scores))
    if mix.subspaces is None:
        raise InputError("mixture has no per-component subspaces built")
    return k, mix.subspaces[k]


class SubspaceSelector:
    """Stateful component selection with switching hysteresis.

    A challenger must beat the incumbent's score by ``margin`` nats on
    ``patience`` consecutive observations before the switch happens. With
    hysteresis disabled every observation switches to the argmax directly.
    """

    def __init__(self, mix: MixtureModel, margin: float = 2.0, patience: int = 3,
                 enabled: bool = True, initial: int = 0):
        if not (0 <= initial < mix.num_components):
            raise InputError("initial component index out of range")
        if patience < 1:
            raise InputError("patience must be at least 1")
        self.mix = mix
        self.margin = float(margin)
        self.patience = int(patience)
        self.enabled = bool(enabled)
        self.current = int(initial)
        self.last_scores = None
        self._challenger = None
        self._streak = 0

    def observe(self, obs: ForceObservation) -> int:
        """Score one observation and return the (possibly updated) active
        component index."""
        scores = log_posterior(self.mix, obs)
        best = int(np.argmax(scores))
        self.last_scores = scores
        if not self.enabled:
            self.current = best
            return self.current
        if best == self.current or scores[best] < scores[self.current] + self.margin:
            self._challenger = None
            self._streak = 0
            return self.current
        if best == self._challenger:
            self._streak += 1
        else:
            self._challenger = best
            self._streak = 1
        if self._streak >= self.patience:
            self.current = best
            self._challenger = None
            self._streak = 0
        return self.current

    @property
    def subspace(self) -> Subspace:
        if self.mix.subspaces is None:
            raise InputError("mixture has no per-component subspaces built")
        return self.mix.subspaces[self.current]
