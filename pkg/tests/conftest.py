"""Shared fixtures: small meshes and assembled systems.

Everything here stays well under the dense-reference size cap so tests can
cross-check the iterative build paths against materialized matrices. The
soft material keeps displacement responses O(1e-3): large enough that
absolute tolerances (1e-8 and tighter) are meaningful, small enough that
the linearized model is the right regime.
"""

import numpy as np
import pytest

from forcedual.fem import MaterialParams, build_operators
from forcedual.meshes import bar_mesh, single_tet, vertices_in_box

SOFT = MaterialParams(youngs_modulus=5e4, poisson_ratio=0.4, density=1200.0)


@pytest.fixture(scope="session")
def small_bar():
    # 45 vertices, 135 coordinates; asymmetric cross-section avoids
    # accidental eigenvalue multiplicity in the leading modes
    return bar_mesh(cells=(4, 2, 2), length=1.0, width=0.18, height=0.24)


@pytest.fixture(scope="session")
def small_ops(small_bar):
    pins = tuple(vertices_in_box(small_bar, (-1, -1, -1), (1e-9, 1, 1)))
    return build_operators(small_bar, SOFT, pins=pins)


@pytest.fixture(scope="session")
def free_ops(small_bar):
    # unpinned variant; H carries a small regularizer so solves stay defined
    return build_operators(small_bar, SOFT, pins=(), eps=1e-4)


@pytest.fixture(scope="session")
def medium_bar():
    return bar_mesh(cells=(8, 2, 3), length=1.0, width=0.18, height=0.24)


@pytest.fixture(scope="session")
def medium_ops(medium_bar):
    pins = tuple(vertices_in_box(medium_bar, (-1, -1, -1), (1e-9, 1, 1)))
    return build_operators(medium_bar, SOFT, pins=pins)


@pytest.fixture(scope="session")
def tet_mesh():
    return single_tet()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
