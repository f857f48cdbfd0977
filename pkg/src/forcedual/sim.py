"""Reduced statics and implicit-Euler dynamics in a fixed subspace.

With a mass-orthonormal basis the reduced mass matrix is the identity and
the reduced stiffness is the small dense H_r = B^T H B. One implicit Euler
step minimizes

    E(z) = |z - z_tilde|^2 / (2 h^2) + z^T H_r z / 2 - z^T f_r
           + (z - z_prev)^T C_r (z - z_prev) / (2 h)

over the reduced coordinates, where z_tilde = z_prev + h z_dot and C_r is
optional Rayleigh damping a I + b H_r. The energy is quadratic, so the
Newton solver lands on the minimizer in a single step; the backtracking
line search exists to guard future non-quadratic energies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NumericalError
from .fem import SystemOperators
from .subspace import Subspace

DEFAULT_TIMESTEP = 1.0 / 60.0
_DIM_WARN_CAP = 512
_NEWTON_TOL = 1e-8
_ARMIJO_C = 1e-4
_MAX_HALVINGS = 20
_DEFAULT_MAX_ITERS = 10


@dataclass(frozen=True)
class ReducedState:
    """Reduced coordinates and velocities at a point in time."""

    z: np.ndarray
    z_dot: np.ndarray
    time: float
    subspace: Subspace

    def __post_init__(self):
        z = np.ascontiguousarray(np.asarray(self.z, dtype=float))
        zd = np.ascontiguousarray(np.asarray(self.z_dot, dtype=float))
        m = self.subspace.dim
        if z.shape != (m,) or zd.shape != (m,):
            raise InputError(f"state vectors must have the subspace dimension {m}")
        if not (np.isfinite(z).all() and np.isfinite(zd).all() and np.isfinite(self.time)):
            raise InputError("state must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_dot", zd)


def rest_state(sub: Subspace, time: float = 0.0) -> ReducedState:
    return ReducedState(z=np.zeros(sub.dim), z_dot=np.zeros(sub.dim),
                        time=time, subspace=sub)


def transfer_state(state: ReducedState, new_sub: Subspace) -> ReducedState:
    """Carry reduced state across a subspace switch.

    The state is reconstructed to full displacement and velocity and
    re-projected, which keeps the mass-optimal approximation of the motion
    in the new basis. The mean offset applies to positions only.
    """
    u = state.subspace.reconstruct(state.z)
    v = state.subspace.basis @ state.z_dot
    return ReducedState(z=new_sub.project(u),
                        z_dot=new_sub.basis.T @ (new_sub.mass * v),
                        time=state.time, subspace=new_sub)


@dataclass(frozen=True)
class ExternalLoad:
    """A full-space force, stored either directly or factored as f = D a."""

    force: np.ndarray = None
    matrix: np.ndarray = None
    amplitudes: np.ndarray = None

    def __post_init__(self):
        if self.force is not None:
            f = np.asarray(self.force, dtype=float)
            if f.ndim != 1 or not np.isfinite(f).all():
                raise InputError("load force must be a finite vector")
            object.__setattr__(self, "force", f)
        else:
            if self.matrix is None or self.amplitudes is None:
                raise InputError("factored load needs both the matrix and amplitudes")
            d = np.asarray(self.matrix, dtype=float)
            a = np.asarray(self.amplitudes, dtype=float)
            if d.ndim != 2 or a.shape != (d.shape[1],):
                raise InputError("factored load shapes are inconsistent")
            if not (np.isfinite(d).all() and np.isfinite(a).all()):
                raise InputError("factored load must be finite")
            object.__setattr__(self, "matrix", d)
            object.__setattr__(self, "amplitudes", a)

    @classmethod
    def from_vector(cls, force: np.ndarray) -> "ExternalLoad":
        return cls(force=force)

    @classmethod
    def from_factored(cls, matrix: np.ndarray, amplitudes: np.ndarray) -> "ExternalLoad":
        return cls(force=None, matrix=matrix, amplitudes=amplitudes)

    @classmethod
    def zero(cls, num_coords: int) -> "ExternalLoad":
        return cls(force=np.zeros(num_coords))

    def full(self) -> np.ndarray:
        if self.force is not None:
            return self.force
        return self.matrix @ self.amplitudes

    def reduced(self, sub: Subspace) -> np.ndarray:
        """B^T f without materializing D a when factored."""
        if self.force is not None:
            if self.force.shape[0] != sub.num_coords:
                raise InputError("load size does not match the subspace")
            return sub.basis.T @ self.force
        if self.matrix.shape[0] != sub.num_coords:
            raise InputError("load size does not match the subspace")
        return (sub.basis.T @ self.matrix) @ self.amplitudes


class ReducedOperators:
    """Dense reduced-space operators with cached step factorizations."""

    def __init__(self, ops: SystemOperators, sub: Subspace,
                 damping: tuple = (0.0, 0.0), dim_cap: int = _DIM_WARN_CAP):
        if sub.num_coords != ops.num_coords:
            raise InputError("subspace does not match the system size")
        m = sub.dim
        if m > dim_cap:
            warnings.warn(f"reduced dimension {m} exceeds {dim_cap}; the model "
                          "is no longer meaningfully reduced", RuntimeWarning)
        gram = sub.basis.T @ (ops.mass[:, None] * sub.basis)
        if np.abs(gram - np.eye(m)).max() > 1e-8:
            raise InputError("subspace basis is not mass-orthonormal")
        h_r = sub.basis.T @ (ops.hessian @ sub.basis)
        self.h_r = (h_r + h_r.T) / 2
        self.subspace = sub
        self.damping = (float(damping[0]), float(damping[1]))
        self._static_chol = None
        self._step_chol = {}

    @property
    def dim(self) -> int:
        return self.h_r.shape[0]

    def damping_matrix(self) -> np.ndarray:
        a, b = self.damping
        return a * np.eye(self.dim) + b * self.h_r

    def _static_factor(self):
        if self._static_chol is None:
            try:
                self._static_chol = sla.cho_factor(self.h_r, lower=True)
            except sla.LinAlgError as exc:
                raise NumericalError(f"reduced stiffness is not positive definite: {exc}") from exc
        return self._static_chol

    def _step_factor(self, h: float):
        key = h
        chol = self._step_chol.get(key)
        if chol is None:
            a, b = self.damping
            k = self.h_r * (1.0 + b / h) + np.eye(self.dim) * (1.0 / (h * h) + a / h)
            try:
                chol = sla.cho_factor(k, lower=True)
            except sla.LinAlgError as exc:
                raise NumericalError(f"step system is not positive definite: {exc}") from exc
            self._step_chol[key] = chol
        return chol


def reduce_operators(ops: SystemOperators, sub: Subspace,
                     damping: tuple = (0.0, 0.0)) -> ReducedOperators:
    return ReducedOperators(ops, sub, damping=damping)


def static_solve(red: ReducedOperators, sub: Subspace, load: ExternalLoad) -> ReducedState:
    """Reduced equilibrium z = H_r^-1 B^T f."""
    f_r = load.reduced(sub)
    z = sla.cho_solve(red._static_factor(), f_r)
    return ReducedState(z=z, z_dot=np.zeros(sub.dim), time=0.0, subspace=sub)


def dynamic_step(red: ReducedOperators, sub: Subspace, state: ReducedState,
                 load: ExternalLoad, h: float = DEFAULT_TIMESTEP,
                 max_iters: int = _DEFAULT_MAX_ITERS, stats: dict = None) -> ReducedState:
    """One implicit-Euler step by Newton iteration with backtracking.

    Pass a dict as ``stats`` to receive the iteration count and final
    energy (used by convergence tests and the runtime monitor).
    """
    if h <= 0:
        raise InputError("timestep must be positive")
    if state.z.shape != (sub.dim,):
        raise InputError("state does not match the subspace")
    f_r = load.reduced(sub)
    z_prev = state.z
    z_tilde = z_prev + h * state.z_dot
    c_r = red.damping_matrix() if any(red.damping) else None
    inv_h2 = 1.0 / (h * h)

    def energy(z):
        d = z - z_tilde
        e = 0.5 * inv_h2 * (d @ d) + 0.5 * (z @ (red.h_r @ z)) - z @ f_r
        if c_r is not None:
            dz = z - z_prev
            e += 0.5 / h * (dz @ (c_r @ dz))
        return e

    def gradient(z):
        g = inv_h2 * (z - z_tilde) + red.h_r @ z - f_r
        if c_r is not None:
            g = g + (c_r @ (z - z_prev)) / h
        return g

    chol = red._step_factor(h)
    z = z_prev.copy()
    e = energy(z)
    iters = 0
    for _ in range(max_iters):
        g = gradient(z)
        if np.linalg.norm(g) <= _NEWTON_TOL * (1.0 + abs(e)):
            break
        p = -sla.cho_solve(chol, g)
        slope = float(g @ p)
        t = 1.0
        z_new = z + p
        e_new = energy(z_new)
        halvings = 0
        while e_new > e + _ARMIJO_C * t * slope:
            halvings += 1
            if halvings > _MAX_HALVINGS:
                raise NumericalError("line search failed: step system is not a descent model")
            t *= 0.5
            z_new = z + t * p
            e_new = energy(z_new)
        z = z_new
        e = e_new
        iters += 1
    if stats is not None:
        stats["iterations"] = iters
        stats["energy"] = float(e)
        stats["grad_norm"] = float(np.linalg.norm(gradient(z)))
    return ReducedState(z=z, z_dot=(z - z_prev) / h, time=state.time + h,
                        subspace=sub)


def reconstruction_error(sub: Subspace, ops: SystemOperators, load: ExternalLoad) -> float:
    """Squared M-norm gap between the full static solution and the reduced
    static reconstruction for the given load."""
    f = load.full()
    u_full = ops.solve(f)
    red = ReducedOperators(ops, sub)
    z = sla.cho_solve(red._static_factor(), load.reduced(sub))
    u_red = sub.basis @ z
    diff = u_full - u_red
    return float(diff @ (ops.mass * diff))
