"""Mixture moments, marginal scoring, and hysteresis switching.

Most tests run on small synthetic priors (no mesh needed): the mixture
layer is pure linear algebra over whatever components it is handed.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forcedual.errors import InputError, NumericalError
from forcedual.mixture import (ForceObservation, MixtureModel, SubspaceSelector,
                               log_posterior, mixture_moments, sample_mixture,
                               select_subspace)
from forcedual.priors import DiagonalCovariance, ForcePrior, LowRankCovariance

N_VERTS = 6
SIZE = 3 * N_VERTS


def _diag_component(variance_scale=1.0, mean=None, label="a"):
    mean = np.zeros(SIZE) if mean is None else mean
    return ForcePrior(mean, DiagonalCovariance(np.full(SIZE, variance_scale)), label)


def _lowrank_component(rng, rank=2, mean_shift=0.0, label="b"):
    factor = rng.standard_normal((SIZE, rank))
    mean = np.full(SIZE, mean_shift)
    return ForcePrior(mean, LowRankCovariance(factor, np.zeros(rank), np.eye(rank)), label)


def _unit_mean_mixture(offset=2.0, weights=(0.5, 0.5)):
    """Two unit-variance components whose means differ by ``offset`` along
    the x coordinate of vertex 1; score gaps are then analytic."""
    mu1 = np.zeros(SIZE)
    mu1[3] = offset
    return MixtureModel(components=(_diag_component(), _diag_component(mean=mu1)),
                        weights=np.array(weights))


def _obs(t):
    return ForceObservation(support=np.array([1]), values=np.array([t, 0.0, 0.0]))


# -- observations ------------------------------------------------------------

def test_observation_requires_ascending_support():
    with pytest.raises(InputError, match="ascending"):
        ForceObservation(support=np.array([3, 1]), values=np.zeros(6))


def test_observation_requires_three_values_per_vertex():
    with pytest.raises(InputError, match="3 force values"):
        ForceObservation(support=np.array([0, 1]), values=np.zeros(5))


def test_observation_rejects_nonfinite():
    with pytest.raises(InputError, match="finite"):
        ForceObservation(support=np.array([0]), values=np.array([0.0, np.nan, 0.0]))


def test_observation_rejects_empty_support():
    with pytest.raises(InputError):
        ForceObservation(support=np.array([], dtype=int), values=np.array([]))


def test_from_force_restricts_and_sorts(rng):
    force = rng.standard_normal(SIZE)
    obs = ForceObservation.from_force(force, [4, 0, 4])
    np.testing.assert_array_equal(obs.support, [0, 4])
    np.testing.assert_array_equal(obs.values, force[[0, 1, 2, 12, 13, 14]])
    np.testing.assert_array_equal(obs.coords, [0, 1, 2, 12, 13, 14])


@settings(max_examples=50, deadline=None)
@given(support=st.lists(st.integers(0, N_VERTS - 1), min_size=1, max_size=N_VERTS),
       seed=st.integers(0, 2**31 - 1))
def test_from_force_roundtrip(support, seed):
    force = np.random.default_rng(seed).standard_normal(SIZE)
    obs = ForceObservation.from_force(force, support)
    expect = np.asarray(sorted(set(support)))
    np.testing.assert_array_equal(obs.support, expect)
    np.testing.assert_array_equal(obs.values, force[obs.coords])


# -- model validation --------------------------------------------------------

def test_weights_are_normalized():
    mix = MixtureModel(components=(_diag_component(), _diag_component()),
                       weights=np.array([2.0, 6.0]))
    np.testing.assert_allclose(mix.weights, [0.25, 0.75], rtol=1e-15)


def test_negative_weights_rejected():
    with pytest.raises(InputError, match="nonnegative"):
        MixtureModel(components=(_diag_component(),), weights=np.array([-1.0]))


def test_zero_weight_sum_rejected():
    with pytest.raises(InputError, match="positive"):
        MixtureModel(components=(_diag_component(),), weights=np.array([0.0]))


def test_component_size_mismatch_rejected():
    small = ForcePrior(np.zeros(3), DiagonalCovariance(np.ones(3)), "s")
    with pytest.raises(InputError, match="coordinate count"):
        MixtureModel(components=(_diag_component(), small), weights=np.array([1.0, 1.0]))


def test_subspace_count_must_match():
    mix = MixtureModel(components=(_diag_component(), _diag_component()),
                       weights=np.array([1.0, 1.0]))
    with pytest.raises(InputError, match="one subspace per component"):
        mix.with_subspaces(())


# -- moments -----------------------------------------------------------------

def test_single_component_moments_pass_through():
    comp = _diag_component(variance_scale=2.5, mean=np.arange(SIZE, dtype=float))
    mom = mixture_moments(MixtureModel(components=(comp,), weights=np.array([3.0])))
    np.testing.assert_array_equal(mom.mean, comp.mean)
    np.testing.assert_array_equal(mom.diagonal, comp.covariance.variances)
    assert mom.factor.shape == (SIZE, 0)


def test_moments_match_dense_formula(rng):
    mu1 = rng.standard_normal(SIZE)
    comps = (_diag_component(variance_scale=0.5),
             ForcePrior(mu1, DiagonalCovariance(rng.uniform(0.1, 1.0, SIZE)), "b"))
    weights = np.array([0.3, 0.7])
    mix = MixtureModel(components=comps, weights=weights)
    mom = mixture_moments(mix)
    mean = sum(p * c.mean for p, c in zip(mix.weights, comps))
    dense = np.zeros((SIZE, SIZE))
    for p, c in zip(mix.weights, comps):
        d = c.mean - mean
        dense += p * (np.diag(c.covariance.variances) + np.outer(d, d))
    np.testing.assert_allclose(mom.dense(), dense, atol=1e-12)
    np.testing.assert_allclose(mom.variance_diagonal(), np.diag(dense), atol=1e-12)


def test_moments_match_monte_carlo(rng):
    comps = (_diag_component(variance_scale=0.8),
             _lowrank_component(rng, rank=2, mean_shift=1.5))
    mix = MixtureModel(components=comps, weights=np.array([0.4, 0.6]))
    mom = mixture_moments(mix)
    x = sample_mixture(mix, np.random.default_rng(99), 60_000)
    np.testing.assert_allclose(x.mean(axis=1), mom.mean, atol=0.05)
    np.testing.assert_allclose(np.cov(x), mom.dense(),
                               atol=0.06 * max(1.0, np.abs(mom.dense()).max()))


# -- scoring -----------------------------------------------------------------

def test_identical_components_score_identically():
    mix = MixtureModel(components=(_diag_component(), _diag_component()),
                       weights=np.array([0.5, 0.5]))
    scores = log_posterior(mix, _obs(0.7))
    assert scores[0] == pytest.approx(scores[1], abs=1e-12)


def test_prior_weight_enters_score():
    mix = MixtureModel(components=(_diag_component(), _diag_component()),
                       weights=np.array([0.9, 0.1]))
    scores = log_posterior(mix, _obs(0.7))
    assert scores[0] - scores[1] == pytest.approx(np.log(9.0), abs=1e-12)


def test_zero_weight_component_never_wins():
    mix = _unit_mean_mixture(offset=2.0, weights=(1.0, 0.0))
    scores = log_posterior(mix, _obs(2.0))    # dead on component 1's mean
    assert scores[1] == -np.inf
    assert int(np.argmax(scores)) == 0


def test_score_gap_matches_analytic_value():
    # unit variances and identical logdets: the gap reduces to the squared
    # distance difference, 2 (t - 1) for an offset of 2
    mix = _unit_mean_mixture(offset=2.0)
    for t in (-1.0, 0.0, 1.0, 2.5, 4.0):
        scores = log_posterior(mix, _obs(t))
        assert scores[1] - scores[0] == pytest.approx(2.0 * (t - 1.0), abs=1e-6)


def test_observation_from_component_selects_it(rng):
    mu1 = np.zeros(SIZE)
    mu1[::3] = 5.0                    # five-sigma separation on every vertex
    mix = MixtureModel(components=(_diag_component(), _diag_component(mean=mu1)),
                       weights=np.array([0.5, 0.5]))
    gen = np.random.default_rng(7)
    wins = 0
    for _ in range(200):
        f = mix.components[1].sample(gen, 1)[:, 0]
        obs = ForceObservation.from_force(f, [0, 2, 4])
        wins += int(np.argmax(log_posterior(mix, obs)) == 1)
    assert wins >= 190


def test_lowrank_marginal_matches_dense_score(rng):
    comp = _lowrank_component(rng, rank=3)
    mix = MixtureModel(components=(comp,), weights=np.array([1.0]))
    obs = ForceObservation.from_force(rng.standard_normal(SIZE), [1, 3])
    rows = comp.covariance.factor[obs.coords, :]
    cov = rows @ rows.T
    cov[np.diag_indices(6)] += 1e-8 * np.trace(cov) / 6
    r = obs.values - comp.mean[obs.coords]
    expect = -0.5 * r @ np.linalg.solve(cov, r) - 0.5 * np.linalg.slogdet(cov)[1]
    scores = log_posterior(mix, obs)
    # the ridged marginal is ill conditioned by design, so the two solver
    # routes only agree to around kappa * eps
    assert scores[0] == pytest.approx(expect, rel=1e-5)


def test_all_zero_variance_component_rejected():
    comp = ForcePrior(np.zeros(SIZE), DiagonalCovariance(np.zeros(SIZE)), "z")
    mix = MixtureModel(components=(comp,), weights=np.array([1.0]))
    with pytest.raises(NumericalError, match="zero variance"):
        log_posterior(mix, _obs(0.0))


def test_support_limit_enforced():
    mix = MixtureModel(components=(_diag_component(),), weights=np.array([1.0]),
                       max_support=2)
    obs = ForceObservation(support=np.array([0, 1, 2]), values=np.zeros(9))
    with pytest.raises(InputError, match="cache limit"):
        log_posterior(mix, obs)


def test_support_must_fit_mesh():
    mix = MixtureModel(components=(_diag_component(),), weights=np.array([1.0]))
    obs = ForceObservation(support=np.array([N_VERTS]), values=np.zeros(3))
    with pytest.raises(InputError, match="past the mesh"):
        log_posterior(mix, obs)


def test_repeated_scoring_is_bitwise_stable_and_cached():
    mix = _unit_mean_mixture()
    obs = _obs(1.3)
    first = log_posterior(mix, obs)
    assert len(mix._cache) == 2
    second = log_posterior(mix, obs)
    np.testing.assert_array_equal(first, second)
    assert len(mix._cache) == 2


def test_selection_tie_goes_to_lowest_index():
    from forcedual.oracle import random_mass_orthonormal_basis
    from forcedual.subspace import Subspace
    b = random_mass_orthonormal_basis(np.ones(SIZE), 2, np.random.default_rng(0))
    # identical components, equal weights: scores tie exactly
    subs = tuple(Subspace(basis=b, eigenvalues=np.array([2.0, 1.0]),
                          mean=np.zeros(SIZE), mass=np.ones(SIZE), label=str(k))
                 for k in range(2))
    mix = MixtureModel(components=(_diag_component(), _diag_component()),
                       weights=np.array([0.5, 0.5])).with_subspaces(subs)
    k, sub = select_subspace(mix, _obs(0.4))
    assert k == 0
    assert sub is subs[0]


def test_select_requires_built_subspaces():
    mix = _unit_mean_mixture()
    with pytest.raises(InputError, match="no per-component subspaces"):
        select_subspace(mix, _obs(0.0))


# -- hysteresis --------------------------------------------------------------

def test_selector_switches_after_patience():
    sel = SubspaceSelector(_unit_mean_mixture(), margin=2.0, patience=2)
    assert sel.observe(_obs(0.0)) == 0      # incumbent confirmed
    assert sel.observe(_obs(3.1)) == 0      # gap 4.2: challenger streak 1
    assert sel.observe(_obs(3.1)) == 1      # streak 2: switch
    assert sel.current == 1


def test_selector_ignores_subthreshold_gaps():
    sel = SubspaceSelector(_unit_mean_mixture(), margin=2.0, patience=1)
    assert sel.observe(_obs(1.9)) == 0      # gap 1.8 < margin
    assert sel.observe(_obs(1.9)) == 0


def test_selector_streak_resets_on_interruption():
    sel = SubspaceSelector(_unit_mean_mixture(), margin=2.0, patience=2)
    assert sel.observe(_obs(3.1)) == 0      # streak 1
    assert sel.observe(_obs(0.0)) == 0      # reset
    assert sel.observe(_obs(3.1)) == 0      # streak 1 again
    assert sel.observe(_obs(3.1)) == 1


def test_selector_disabled_tracks_argmax_directly():
    sel = SubspaceSelector(_unit_mean_mixture(), margin=2.0, patience=3, enabled=False)
    assert sel.observe(_obs(2.5)) == 1
    assert sel.observe(_obs(-0.5)) == 0


def test_selector_switch_back_needs_fresh_streak():
    sel = SubspaceSelector(_unit_mean_mixture(), margin=2.0, patience=2)
    for _ in range(2):
        sel.observe(_obs(3.1))
    assert sel.current == 1
    assert sel.observe(_obs(-1.1)) == 1     # gap 4.2 toward 0: streak 1
    assert sel.observe(_obs(-1.1)) == 0
    assert sel.last_scores is not None


def test_selector_validation():
    mix = _unit_mean_mixture()
    with pytest.raises(InputError, match="patience"):
        SubspaceSelector(mix, patience=0)
    with pytest.raises(InputError, match="initial"):
        SubspaceSelector(mix, initial=5)
