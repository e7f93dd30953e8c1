import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import fd_score
from ssi_sampler import targets as T


def _probe_points(target, rng, n=100):
    # Points where the target has mass; the box posterior has no sampler.
    if isinstance(target, T.MixtureCentersPosterior):
        low, high = target.box
        return rng.uniform(low + 0.5, high - 0.5, size=(n, target.dim))
    return target.sample(rng, n)


def _wide_points(target, rng, n=100):
    x = _probe_points(target, rng, n)
    if isinstance(target, T.MixtureCentersPosterior):
        return x
    return x + 2.0 * rng.normal(size=x.shape)


ALL_TARGETS = {
    "gaussian": lambda: T.make_standard_gaussian(3),
    "gmm_1d": lambda: T.make_gmm(T.GaussianMixtureSpec(means=[[-2.0], [2.0]], common_variance=1.0)),
    "gmm_fullcov": lambda: T.make_gmm(
        T.GaussianMixtureSpec(
            means=[[0.0, 0.0], [3.0, 1.0]],
            covariances=[[[1.0, 0.3], [0.3, 0.5]], [[0.4, -0.1], [-0.1, 2.0]]],
            weights=[0.3, 0.7],
        )
    ),
    "mog7x7": T.make_mog7x7,
    "mog40": T.make_mog40,
    "rings": T.make_rings,
    "many_well": T.make_many_well,
    "bayes_gmm": lambda: T.build_target("bayes_gmm"),
}


@pytest.mark.parametrize("name", sorted(ALL_TARGETS))
def test_score_matches_finite_differences(name):
    target = ALL_TARGETS[name]()
    rng = np.random.default_rng(11)
    x = _probe_points(target, rng)
    s = target.score(x)
    fd = fd_score(target.log_density, x)
    assert np.all(np.abs(s - fd) <= 1e-5 * (1.0 + np.abs(s)))


@pytest.mark.parametrize("name", sorted(ALL_TARGETS))
def test_score_matches_fine_differences_off_support(name):
    # Between well separated modes the default step has truncation error, so
    # a finer step checks the score away from the bulk.
    target = ALL_TARGETS[name]()
    rng = np.random.default_rng(12)
    x = _wide_points(target, rng)
    s = target.score(x)
    fd = fd_score(target.log_density, x, rel_step=1e-6)
    assert np.all(np.abs(s - fd) <= 1e-6 * (1.0 + np.abs(s)))


@pytest.mark.parametrize("name", sorted(ALL_TARGETS))
def test_batch_shapes_and_joint_evaluation(name):
    target = ALL_TARGETS[name]()
    rng = np.random.default_rng(0)
    x = _probe_points(target, rng, 12).reshape(3, 4, target.dim)
    logp, score = target.log_density_and_score(x)
    assert logp.shape == (3, 4)
    assert score.shape == (3, 4, target.dim)
    np.testing.assert_allclose(logp, target.log_density(x))
    np.testing.assert_allclose(score, target.score(x))


def test_two_mode_gmm_at_origin():
    # Both components contribute N(2; 0, 1) with weight 1/2 each.
    target = T.make_gmm(T.GaussianMixtureSpec(means=[[-2.0], [2.0]], common_variance=1.0, weights=[0.5, 0.5]))
    direct = math.log(0.5 * math.exp(-2.0) / math.sqrt(2 * math.pi) * 2)
    assert target.log_density(np.zeros(1)) == pytest.approx(direct, abs=1e-14)
    assert target.log_density(np.zeros(1)) == pytest.approx(-2.918938533204673, abs=1e-12)


def test_single_component_matches_analytic_gaussian():
    rng = np.random.default_rng(3)
    mean = rng.normal(size=4)
    target = T.make_gmm(T.GaussianMixtureSpec(means=mean[None], common_variance=2.5))
    x = rng.normal(size=(50, 4)) * 3
    ref = stats.multivariate_normal(mean, 2.5 * np.eye(4)).logpdf(x)
    np.testing.assert_allclose(target.log_density(x), ref, atol=1e-12, rtol=0)
    np.testing.assert_allclose(target.score(x), -(x - mean) / 2.5, atol=1e-12)


def test_full_covariance_matches_scipy():
    covs = np.array([[[1.0, 0.3], [0.3, 0.5]], [[0.4, -0.1], [-0.1, 2.0]]])
    means = np.array([[0.0, 0.0], [3.0, 1.0]])
    target = T.make_gmm(T.GaussianMixtureSpec(means=means, covariances=covs, weights=[0.3, 0.7]))
    x = np.random.default_rng(1).normal(size=(20, 2)) * 2
    ref = np.log(
        0.3 * stats.multivariate_normal(means[0], covs[0]).pdf(x)
        + 0.7 * stats.multivariate_normal(means[1], covs[1]).pdf(x)
    )
    np.testing.assert_allclose(target.log_density(x), ref, atol=1e-12)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=5))
@settings(max_examples=50, deadline=None)
def test_standard_gaussian_score_is_minus_x(xs):
    target = T.make_standard_gaussian(len(xs))
    x = np.array(xs)
    np.testing.assert_allclose(target.score(x), -x, atol=1e-12)


def test_gmm_spec_validation():
    with pytest.raises(ValueError, match="positive definite"):
        T.GaussianMixtureSpec(means=[[0.0, 0.0]], covariances=[[[1.0, 2.0], [2.0, 1.0]]])
    with pytest.raises(ValueError, match="sum to 1"):
        T.GaussianMixtureSpec(means=[[0.0], [1.0]], weights=[0.5, 0.6])
    with pytest.raises(ValueError):
        T.GaussianMixtureSpec(means=[[0.0]], common_variance=0.0)


def test_gmm_sampler_moments():
    target = T.make_gmm(T.GaussianMixtureSpec(means=[[-2.0], [2.0]], common_variance=1.0, weights=[0.25, 0.75]))
    x = target.sample(np.random.default_rng(0), 200_000)
    assert x.mean() == pytest.approx(1.0, abs=0.02)
    assert x.var() == pytest.approx(1.0 + 4.0 - 1.0, abs=0.05)


def test_mixture_tails_do_not_underflow():
    target = T.make_mog7x7()
    x = np.array([[400.0, -300.0]])
    assert np.isfinite(target.log_density(x)).all()
    assert np.isfinite(target.score(x)).all()


def test_mog7x7_layout():
    target = T.make_mog7x7()
    assert target.mode_centers.shape == (49, 2)
    np.testing.assert_allclose(target.spec.weights, np.full(49, 1 / 49))
    axis = np.unique(target.mode_centers[:, 0])
    assert axis.size == 7
    np.testing.assert_allclose(np.diff(axis), 5.0)
    assert target.mode_radius == pytest.approx(1.5)


def test_mog40_layout():
    target = T.make_mog40()
    assert target.mode_centers.shape == (40, 2)
    assert np.all(np.abs(target.mode_centers) <= 40)
    assert target.spec.common_variance == pytest.approx(math.log1p(math.e) ** 2)


# --- rings -----------------------------------------------------------------


def test_rings_centerline_exponent_is_one():
    rings = T.make_rings()
    assert rings.radii.size == 8
    for k, r in enumerate(rings.radii):
        x = r * np.array([math.cos(0.3 * k), math.sin(0.3 * k)])
        assert math.exp(-((np.linalg.norm(x) - r) ** 2) / (2 * rings.radial_std**2)) == 1.0


def _ring_masses_by_quadrature(rings):
    def radial(r):
        return 2 * math.pi * r * math.exp(rings.normalized_log_density(np.array([r, 0.0])))

    edges = np.concatenate([[0.0], (rings.radii[:-1] + rings.radii[1:]) / 2, [rings.radii[-1] + 3.0]])
    return np.array([integrate.quad(radial, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])])


def test_rings_carry_equal_mass():
    masses = _ring_masses_by_quadrature(T.make_rings())
    assert masses.sum() == pytest.approx(1.0, abs=1e-6)
    assert masses.max() / masses.min() - 1 < 0.02


def test_rings_sampler_matches_ring_masses():
    rings = T.make_rings()
    x = rings.sample(np.random.default_rng(2), 80_000)
    nearest = np.argmin(np.abs(np.linalg.norm(x, axis=1)[:, None] - rings.radii[None]), axis=1)
    freq = np.bincount(nearest, minlength=8) / x.shape[0]
    np.testing.assert_allclose(freq, 1 / 8, atol=0.006)


def test_rings_rejects_other_dimensions():
    with pytest.raises(ValueError):
        T.make_rings(dim=3)
    with pytest.raises(ValueError):
        T.make_rings(num_rings=0)


# --- many well ---------------------------------------------------------------


def test_many_well_dimension_checks():
    assert T.make_many_well().dim == 8
    with pytest.raises(ValueError):
        T.make_many_well(dim=7)


def test_many_well_symmetric_blocks_without_tilt():
    # The benchmark tilts each well by a linear term; with a = 0 the block
    # potential is even and negating a double-well coordinate is a symmetry.
    target = T.make_many_well(dim=8, a=0.0)
    x = np.random.default_rng(0).normal(size=(30, 8))
    for block in range(4):
        y = x.copy()
        y[:, 2 * block] *= -1
        np.testing.assert_allclose(target.log_density(y), target.log_density(x), atol=1e-12)


def test_many_well_has_sixteen_local_maxima():
    target = T.make_many_well(dim=8)
    found = []
    for signs in itertools.product((-1.0, 1.0), repeat=4):
        x = np.zeros((1, 8))
        x[0, 0::2] = 1.5 * np.array(signs)
        for _ in range(3000):
            x = x + 0.01 * target.score(x)
        found.append(x[0])
    found = np.array(found)
    assert np.max(np.linalg.norm(target.score(found), axis=1)) < 1e-6
    rounded = {tuple(f) for f in np.round(found, 5)}
    assert len(rounded) == 16
    assert rounded == {tuple(c) for c in np.round(target.mode_centers, 5)}


def test_many_well_normalizer_by_quadrature():
    target = T.make_many_well(dim=2)
    z, _ = integrate.dblquad(
        lambda x2, x1: math.exp(target.log_density(np.array([x1, x2]))), -4, 4, -10, 10, epsabs=1e-10
    )
    assert target.log_normalizer == pytest.approx(math.log(z), abs=1e-7)


def test_many_well_sampler_first_block_marginal():
    target = T.make_many_well(dim=2)
    x = target.sample(np.random.default_rng(4), 100_000)
    # Probability of the right well from the 1D normalized density.
    z_right, _ = integrate.quad(lambda u: math.exp(-target._energy1(u) - target._log_z1), 0, np.inf)
    assert np.mean(x[:, 0] > 0) == pytest.approx(z_right, abs=0.005)
    assert x[:, 1].std() == pytest.approx(1.0, abs=0.01)


# --- Bayesian posterior ---------------------------------------------------------


def test_bayes_posterior_permutation_invariance():
    target = T.build_target("bayes_gmm")
    rng = np.random.default_rng(5)
    theta = rng.uniform(-9, 9, size=(200, 4))
    for _ in range(10):
        perm = rng.permutation(4)
        np.testing.assert_array_less(np.abs(target.log_density(theta) - target.log_density(theta[:, perm])), 1e-10)


def test_bayes_posterior_modes_and_box():
    target = T.build_target("bayes_gmm")
    assert target.mode_centers.shape == (24, 4)
    assert target.box == (-10.0, 10.0)
    outside = np.array([[0.0, 0.0, 0.0, 10.5], [-11.0, 0.0, 0.0, 0.0]])
    assert np.all(target.log_density(outside) == -np.inf)
    np.testing.assert_array_equal(target.score(outside), 0.0)
    # The true centers, permuted, are all local maxima of nearly equal height.
    logp = target.log_density(target.mode_centers)
    assert np.ptp(logp) < 1e-9


def test_bayes_posterior_without_data_is_flat():
    target = T.make_bayes_gmm_posterior(np.array([]), 3, 1.0, (-5.0, 5.0))
    x = np.random.default_rng(0).uniform(-4, 4, size=(10, 3))
    np.testing.assert_array_equal(target.score(x), 0.0)
    assert np.ptp(target.log_density(x)) == 0.0


def test_bayes_posterior_validation():
    with pytest.raises(ValueError):
        T.make_bayes_gmm_posterior(np.ones(3), 2, 1.0, (1.0, -1.0))


def test_bayes_likelihood_matches_direct_sum():
    obs = np.array([-1.0, 0.5, 2.0])
    target = T.make_bayes_gmm_posterior(obs, 2, 0.7, (-10.0, 10.0))
    theta = np.array([0.3, 1.1])
    direct = sum(math.log(0.5 * stats.norm(theta, math.sqrt(0.7)).pdf(y).sum()) for y in obs)
    assert target.log_density(theta) == pytest.approx(direct, abs=1e-12)


# --- registry and custom targets ---------------------------------------------------


def test_build_target_unknown_name():
    with pytest.raises(ValueError, match="unknown target"):
        T.build_target("nope")


def test_callable_target_support_contract():
    target = T.CallableTarget(
        dim=1,
        log_density_fn=lambda x: -0.5 * x[:, 0] ** 2,
        score_fn=lambda x: -x,
        support_fn=lambda x: x[:, 0] > 0,
    )
    x = np.array([[-1.0], [2.0]])
    np.testing.assert_array_equal(target.log_density(x), [-np.inf, -2.0])
    np.testing.assert_array_equal(target.score(x), [[0.0], [-2.0]])
    with pytest.raises(NotImplementedError):
        target.sample(np.random.default_rng(0), 3)
