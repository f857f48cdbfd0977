"""Reduced dynamic step vs full-space sparse Newton step.

Times both in the same process on a box mesh: the reduced step solves a
cached m-by-m system, the full step does a prefactorized sparse
triangular solve plus a residual matvec. Reports per-step wall times and
the ratio. Reconstruction and load projection are excluded from the
reduced timing, matching how a runtime loop caches them.
"""

import argparse
import sys
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from forcedual import sim
from forcedual.fem import MaterialParams, build_operators
from forcedual.meshes import box_mesh, vertices_in_box
from forcedual.priors import HandleSet, handle_prior
from forcedual.subspace import build_lowrank


class CachedLoad:
    def __init__(self, sub, force):
        self._reduced = sub.basis.T @ force

    def reduced(self, sub):
        return self._reduced


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, nargs=3, default=[30, 25, 25])
    ap.add_argument("--modes", type=int, default=24)
    ap.add_argument("--reps", type=int, default=300)
    ap.add_argument("--reps-full", type=int, default=20)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    mesh = box_mesh(*args.cells, size=(1.2, 1.0, 1.0))
    pins = tuple(vertices_in_box(mesh, (-1, -1, -1), (1e-9, 10, 10)).tolist())
    ops = build_operators(mesh, MaterialParams(5e4, 0.4, 1200.0), pins=pins)
    print(f"mesh: {mesh.num_vertices} vertices ({ops.num_coords} coords), "
          f"assembled in {time.perf_counter() - t0:.1f} s")

    targets = ([(1.2, y, z) for y in (0.2, 0.8) for z in (0.2, 0.8)]
               + [(0.7, y, 0.5) for y in (0.1, 0.5, 0.9)] + [(0.4, 0.5, 0.5)])
    anchors = sorted({int(np.argmin(((mesh.vertices - t) ** 2).sum(axis=1)))
                      for t in targets})
    t0 = time.perf_counter()
    sub = build_lowrank(ops, handle_prior(ops, HandleSet.create(ops, anchors, 50.0)),
                        m=args.modes)
    print(f"subspace m={args.modes} built in {time.perf_counter() - t0:.1f} s")
    red = sim.reduce_operators(ops, sub)
    h = 1.0 / 60.0

    f = np.zeros(ops.num_coords)
    f[3 * anchors[0]: 3 * anchors[0] + 3] = (0.0, 0.0, -40.0)
    load = CachedLoad(sub, f)
    state = sim.dynamic_step(red, sub, sim.rest_state(sub), load, h=h)
    t0 = time.perf_counter()
    for _ in range(args.reps):
        state = sim.dynamic_step(red, sub, state, load, h=h)
    reduced_step = (time.perf_counter() - t0) / args.reps

    ops.__dict__.pop("_factor", None)      # free the build-time factor
    mass = ops.mass
    step_matrix = (ops.hessian + sp.diags(mass) / h ** 2).tocsc()
    t0 = time.perf_counter()
    lu = spla.splu(step_matrix)
    print(f"full step matrix factored in {time.perf_counter() - t0:.1f} s "
          f"(excluded from per-step timing)")

    u = np.zeros(ops.num_coords)
    v = np.zeros(ops.num_coords)

    def full_step(u, v):
        z_tilde = u + h * v
        rhs = mass * z_tilde / h ** 2 + f
        u_new = lu.solve(rhs)
        _ = step_matrix @ u_new - rhs
        return u_new, (u_new - u) / h

    u, v = full_step(u, v)
    t0 = time.perf_counter()
    for _ in range(args.reps_full):
        u, v = full_step(u, v)
    full = (time.perf_counter() - t0) / args.reps_full

    print(f"reduced step: {reduced_step * 1e6:9.1f} us  "
          f"({args.reps} reps, m={args.modes})")
    print(f"full step:    {full * 1e3:9.2f} ms  ({args.reps_full} reps)")
    print(f"speedup:      {full / reduced_step:9.0f} x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
