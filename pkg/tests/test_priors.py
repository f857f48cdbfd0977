import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from forcedual.errors import InputError
from forcedual.fem import element_jacobians
from forcedual.meshes import box_mesh, single_tet
from forcedual.priors import (ContactFrame, ContactPatchSet, DiagonalCovariance,
                              ForcePrior, HandleSet, LowRankCovariance,
                              MuscleFiberSet, PneumaticPocketSet, SpringSet,
                              contact_prior, handle_prior, lma_prior,
                              muscle_prior, painted_prior, pneumatic_prior,
                              psd_factor, radial_decay_weights, spring_prior)


# -- representation types ----------------------------------------------------

def test_diagonal_covariance_rejects_negative():
    with pytest.raises(InputError):
        DiagonalCovariance(np.array([1.0, -0.5, 2.0]))


def test_lowrank_covariance_shape_check():
    with pytest.raises(InputError):
        LowRankCovariance(np.ones(5), np.zeros(1), np.eye(1))


def test_prior_size_and_kind(small_ops):
    pr = lma_prior(small_ops)
    assert pr.size == small_ops.num_coords
    assert pr.is_diagonal and not pr.is_lowrank


def test_variance_diagonal_lowrank_matches_product(rng):
    d = rng.standard_normal((12, 3))
    pr = ForcePrior(np.zeros(12), LowRankCovariance(d, np.zeros(3), np.eye(3)), "t")
    np.testing.assert_allclose(pr.variance_diagonal(), np.diag(d @ d.T), rtol=1e-12)


def test_sample_statistics_diagonal(small_ops):
    pr = lma_prior(small_ops)
    rng = np.random.default_rng(4)
    x = pr.sample(rng, 20_000)
    assert x.shape == (small_ops.num_coords, 20_000)
    np.testing.assert_allclose(x.mean(axis=1), 0.0, atol=0.05 * np.sqrt(pr.variance_diagonal().max()))
    np.testing.assert_allclose(x.var(axis=1), pr.variance_diagonal(), rtol=0.08)


def test_sample_statistics_lowrank(rng):
    d = rng.standard_normal((9, 2))
    mu = np.arange(2.0)
    pr = ForcePrior(d @ mu, LowRankCovariance(d, mu, np.eye(2)), "t")
    x = pr.sample(np.random.default_rng(8), 40_000)
    np.testing.assert_allclose(x.mean(axis=1), d @ mu, atol=0.05 * np.abs(d).max() + 0.02)
    np.testing.assert_allclose(np.cov(x), d @ d.T, atol=0.08 * np.abs(d @ d.T).max())


def test_scaled_prior_scales_variance_quadratically(small_ops):
    pr = lma_prior(small_ops).scaled(3.0)
    np.testing.assert_allclose(pr.variance_diagonal(), 9.0 * small_ops.mass, rtol=1e-13)


def test_psd_factor_positive_definite(rng):
    a = rng.standard_normal((5, 5))
    sigma = a @ a.T + 5 * np.eye(5)
    r = psd_factor(sigma)
    np.testing.assert_allclose(r @ r.T, sigma, rtol=1e-10, atol=1e-12)


def test_psd_factor_semidefinite():
    sigma = np.array([[1.0, 1.0], [1.0, 1.0]])    # rank one
    r = psd_factor(sigma)
    np.testing.assert_allclose(r @ r.T, sigma, atol=1e-12)


def test_psd_factor_indefinite_rejected():
    with pytest.raises(InputError, match="positive semidefinite"):
        psd_factor(np.array([[1.0, 0.0], [0.0, -1.0]]))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_psd_factor_reconstructs_any_gram_matrix(a):
    sigma = a @ a.T
    r = psd_factor(sigma)
    np.testing.assert_allclose(r @ r.T, sigma, atol=1e-8 * max(1.0, np.abs(sigma).max()))


# -- painted / uniform -------------------------------------------------------

def test_lma_prior_is_mass_diagonal(small_ops):
    pr = lma_prior(small_ops)
    np.testing.assert_array_equal(pr.covariance.variances, small_ops.mass)
    assert not pr.mean.any()


def test_painted_all_ones_equals_uniform(small_bar, small_ops):
    w = np.ones(small_bar.num_vertices)
    a = painted_prior(small_bar, small_ops, w)
    b = lma_prior(small_ops)
    np.testing.assert_array_equal(a.covariance.variances, b.covariance.variances)


def test_painted_weight_layout(small_bar, small_ops, rng):
    w = rng.uniform(0.1, 1.0, small_bar.num_vertices)
    pr = painted_prior(small_bar, small_ops, w)
    np.testing.assert_allclose(pr.covariance.variances,
                               np.repeat(w, 3) * small_ops.mass, rtol=1e-15)


def test_painted_rejects_negative_weights(small_bar, small_ops):
    w = np.ones(small_bar.num_vertices)
    w[3] = -0.1
    with pytest.raises(InputError):
        painted_prior(small_bar, small_ops, w)


def test_radial_decay_inside_is_one(small_bar):
    center = small_bar.vertices[7]
    w = radial_decay_weights(small_bar, center, radius=0.4)
    d = np.linalg.norm(small_bar.vertices - center, axis=1)
    np.testing.assert_array_equal(w[d <= 0.4], 1.0)
    assert (w[d > 0.4] < 1.0).all()
    assert (w > 0).all()


def test_radial_decay_formula(small_bar):
    center, radius, alpha = small_bar.vertices[0], 0.2, 25.0
    w = radial_decay_weights(small_bar, center, radius, alpha)
    d = np.linalg.norm(small_bar.vertices - center, axis=1)
    outside = d > radius
    np.testing.assert_allclose(w[outside],
                               np.exp(-alpha * (d[outside] - radius) ** 2), rtol=1e-12)


# -- handles -----------------------------------------------------------------

def test_handle_force_map_structure(small_ops):
    hs = HandleSet.create(small_ops, [2, 5], strength=40.0)
    d = hs.force_map(small_ops.num_coords)
    assert d.shape == (small_ops.num_coords, 6)
    for k, c in enumerate(hs.coords):
        col = d[:, k]
        assert col[c] == pytest.approx(40.0 * hs.handle_mass[k])
        assert np.count_nonzero(col) == 1


def test_handle_runtime_force_matches_map(small_ops, rng):
    hs = HandleSet.create(small_ops, [2, 5], strength=40.0)
    u = rng.standard_normal(small_ops.num_coords) * 1e-2
    targets = rng.standard_normal(6) * 1e-2
    f = hs.runtime_force(u, targets)
    d = hs.force_map(small_ops.num_coords)
    np.testing.assert_allclose(f, d @ (targets - u[hs.coords]), rtol=1e-12, atol=1e-18)


def test_handle_prior_identity_actuation(small_ops):
    hs = HandleSet.create(small_ops, [4], strength=10.0)
    pr = handle_prior(small_ops, hs, None, None)
    np.testing.assert_array_equal(pr.covariance.factor, hs.force_map(small_ops.num_coords))
    assert not pr.mean.any()


def test_handle_prior_with_actuation_moments(small_ops):
    hs = HandleSet.create(small_ops, [4], strength=10.0)
    sigma = np.diag([4.0, 1.0, 0.25])
    mu = np.array([0.1, 0.0, -0.2])
    pr = handle_prior(small_ops, hs, sigma, mu)
    d = hs.force_map(small_ops.num_coords)
    np.testing.assert_allclose(pr.mean, d @ mu, rtol=1e-12)
    np.testing.assert_allclose(pr.covariance.factor @ pr.covariance.factor.T,
                               d @ sigma @ d.T, atol=1e-10 * np.abs(d).max() ** 2)


def test_handle_duplicate_vertices_rejected(small_ops):
    with pytest.raises(InputError):
        HandleSet.create(small_ops, [3, 3], strength=1.0)


# -- contact -----------------------------------------------------------------

def _surface_frame(mesh, weights):
    return ContactFrame(weights=weights,
                        normal=np.array([0.0, 0.0, 1.0]),
                        tangent=np.array([1.0, 0.0, 0.0]),
                        bitangent=np.array([0.0, 1.0, 0.0]))


def test_contact_prior_column_structure(small_bar, small_ops):
    surf = small_bar.surface_vertices()
    w = np.zeros(small_bar.num_vertices)
    w[surf[:4]] = [0.5, 1.0, 0.25, 0.75]
    patches = ContactPatchSet.create(small_bar, [_surface_frame(small_bar, w)])
    pr = contact_prior(small_ops, patches, None, None)
    d = pr.covariance.factor
    assert d.shape == (small_ops.num_coords, 3)
    # column 0 pushes along the frame normal, weighted by vertex mass
    for v in surf[:4]:
        block = d[3 * v:3 * v + 3, :]
        expect = small_ops.scalar_mass[v] * w[v] * np.column_stack(
            [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
        np.testing.assert_allclose(block, expect, rtol=1e-12)


def test_contact_frame_must_be_orthonormal(small_bar):
    w = np.zeros(small_bar.num_vertices)
    w[small_bar.surface_vertices()[0]] = 1.0
    bad = ContactFrame(weights=w, normal=np.array([0.0, 0.0, 2.0]),
                       tangent=np.array([1.0, 0.0, 0.0]),
                       bitangent=np.array([0.0, 1.0, 0.0]))
    with pytest.raises(InputError, match="orthonormal"):
        ContactPatchSet.create(small_bar, [bad])


def test_contact_weights_must_live_on_surface(medium_bar):
    interior = np.setdiff1d(np.arange(medium_bar.num_vertices),
                            medium_bar.surface_vertices())
    assert interior.size > 0
    w = np.zeros(medium_bar.num_vertices)
    w[interior[0]] = 1.0
    with pytest.raises(InputError, match="surface"):
        ContactPatchSet.create(medium_bar, [_surface_frame(medium_bar, w)])


# -- pneumatics --------------------------------------------------------------

def test_pneumatic_closed_pocket_has_zero_net_force():
    mesh = box_mesh(2, 2, 2, size=0.5)
    pocket = mesh.surface_vertices().tolist()      # whole closed boundary
    pockets = PneumaticPocketSet.create(mesh, [pocket])
    pr = pneumatic_prior(mesh, pockets, None, None)
    col = pr.covariance.factor[:, 0].reshape(-1, 3)
    np.testing.assert_allclose(col.sum(axis=0), 0.0, atol=1e-13)


def test_pneumatic_column_is_area_weighted_normal():
    mesh = box_mesh(2, 2, 2, size=0.5)
    pocket = mesh.surface_vertices().tolist()
    pr = pneumatic_prior(mesh, PneumaticPocketSet.create(mesh, [pocket]), None, None)
    a = mesh.vertex_surface_areas()
    n = mesh.vertex_normals()
    col = pr.covariance.factor[:, 0].reshape(-1, 3)
    np.testing.assert_allclose(col, a[:, None] * n, atol=1e-14)


def test_pneumatic_rejects_interior_vertices(medium_bar):
    interior = np.setdiff1d(np.arange(medium_bar.num_vertices),
                            medium_bar.surface_vertices())
    with pytest.raises(InputError, match="surface"):
        PneumaticPocketSet.create(medium_bar, [[int(interior[0])]])


# -- muscles -----------------------------------------------------------------

def test_muscle_column_has_zero_net_force(small_bar):
    jac = element_jacobians(small_bar)
    fibers = MuscleFiberSet.create(small_bar, [0, 3], np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    pr = muscle_prior(small_bar, jac, fibers, None, None)
    for j in range(2):
        col = pr.covariance.factor[:, j].reshape(-1, 3)
        np.testing.assert_allclose(col.sum(axis=0), 0.0, atol=1e-12)


def test_muscle_single_tet_known_column():
    mesh = single_tet()
    jac = element_jacobians(mesh)
    fiber = np.array([1.0, 0.0, 0.0])
    pr = muscle_prior(mesh, jac, MuscleFiberSet.create(mesh, [0], fiber[None]), None, None)
    grads = jac.grads[0]
    vol = jac.volumes[0]
    expect = np.zeros((4, 3))
    for a in range(4):
        expect[a] = -vol * (np.outer(fiber, fiber) @ grads[a])
    np.testing.assert_allclose(pr.covariance.factor[:, 0].reshape(-1, 3), expect,
                               rtol=1e-12, atol=1e-15)


def test_muscle_fiber_must_be_unit(small_bar):
    with pytest.raises(InputError, match="unit"):
        MuscleFiberSet.create(small_bar, [0], np.array([[2.0, 0.0, 0.0]]))


# -- springs -----------------------------------------------------------------

def test_spring_column_structure(small_bar):
    springs = SpringSet.create(small_bar, [(0, 10)])
    pr = spring_prior(small_bar, springs, None, None)
    col = pr.covariance.factor[:, 0].reshape(-1, 3)
    e = small_bar.vertices[10] - small_bar.vertices[0]
    e = e / np.linalg.norm(e)
    np.testing.assert_allclose(col[0], -e, rtol=1e-12)
    np.testing.assert_allclose(col[10], e, rtol=1e-12)
    np.testing.assert_allclose(np.delete(col, [0, 10], axis=0), 0.0, atol=0)


def test_spring_self_loop_rejected(small_bar):
    with pytest.raises(InputError):
        SpringSet.create(small_bar, [(4, 4)])


def test_spring_net_force_zero(small_bar, rng):
    edges = [(0, 7), (3, 12), (5, 20)]
    pr = spring_prior(small_bar, SpringSet.create(small_bar, edges), None, None)
    for j in range(3):
        col = pr.covariance.factor[:, j].reshape(-1, 3)
        np.testing.assert_allclose(col.sum(axis=0), 0.0, atol=1e-12)
