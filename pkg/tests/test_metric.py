import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covlearn.calculus import MetricMatrix, pinv
from covlearn.core import CongruentPair, JointMeasure, StepRandomness, Submersion
from covlearn.metric import (
    IdentityMetric,
    JointMeasureMetric,
    OuterProductAtX,
    SampledFisher,
    check_metric_transform,
    fisher_gaussian_closed_form,
    metric_from_joint,
    metric_transform_residual,
    steepest_direction,
)
from covlearn.models import GaussianModel, LinearFunction, shipped_pairs

from oracles import brute_force_steepest, cosine, monte_carlo_fisher


def test_single_atom_rank_one():
    f = LinearFunction(2)
    G = metric_from_joint(f, np.zeros(2), JointMeasure.from_diagonal(np.array([[1.0, 0.0]])))
    np.testing.assert_array_equal(G.entries, [[1.0, 0.0], [0.0, 0.0]])


def test_empty_joint_measure_rejected():
    with pytest.raises(ValueError):
        JointMeasure.from_diagonal(np.zeros((0, 2)))


def test_off_diagonal_joint_measure_is_symmetrized():
    f = LinearFunction(2)
    p = JointMeasure(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), np.array([1.0]))
    G = metric_from_joint(f, np.zeros(2), p)
    np.testing.assert_array_equal(G.entries, [[0.0, 0.5], [0.5, 0.0]])


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_monte_carlo_fisher_matches_closed_form(k):
    mu, sigma = 0.5, 1.7
    f = GaussianModel(k)
    rng = np.random.default_rng(k)
    xs = rng.normal(mu, sigma, size=1_000_000)
    G = metric_from_joint(f, np.array([mu, sigma ** k]), JointMeasure.from_diagonal(xs)).entries
    exact = fisher_gaussian_closed_form(mu, sigma ** k, k).entries
    np.testing.assert_allclose(np.diag(G), np.diag(exact), rtol=0.02)
    assert abs(G[0, 1]) < 0.02 * np.sqrt(exact[0, 0] * exact[1, 1])


def test_closed_form_fisher_values():
    np.testing.assert_allclose(fisher_gaussian_closed_form(0.0, 1.0, 1).entries, np.diag([1.0, 2.0]))
    np.testing.assert_allclose(fisher_gaussian_closed_form(0.0, 4.0, 2).entries, np.diag([0.25, 0.03125]))
    with pytest.raises(ValueError):
        fisher_gaussian_closed_form(0.0, 0.0, 1)


@pytest.mark.parametrize("k,sigma", [(1, 1.0), (2, 2.0), (3, 0.8)])
def test_closed_form_fisher_against_scipy_oracle(k, sigma):
    mc = monte_carlo_fisher(0.3, sigma ** k, k, n=1_000_000, seed=k)
    exact = fisher_gaussian_closed_form(0.3, sigma ** k, k).entries
    np.testing.assert_allclose(np.diag(mc), np.diag(exact), rtol=0.02)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_fisher_scaling_between_k(k):
    sigma = 1.3
    g1 = fisher_gaussian_closed_form(0.0, sigma, 1).entries[1, 1]
    gk = fisher_gaussian_closed_form(0.0, sigma ** k, k).entries[1, 1]
    assert gk / g1 == pytest.approx(1.0 / (k * k * sigma ** (2 * k - 2)), rel=1e-12)


def test_property2_identity_exact():
    f = GaussianModel(2)
    pair = CongruentPair(f, f, Submersion.identity(2))
    p = JointMeasure.from_diagonal(np.array([0.0, 1.0, 4.0]))
    assert metric_transform_residual(pair, [1.0, 2.0], p) == 0.0


@pytest.mark.parametrize("pair", shipped_pairs(), ids=lambda p: p.label)
def test_property2_shipped_pairs(pair):
    assert check_metric_transform(pair) < 1e-8


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), j=st.integers(1, 4), mu=st.floats(-2, 4), sigma=st.floats(0.5, 3),
       seed=st.integers(0, 1000))
def test_property2_gaussian_random(k, j, mu, sigma, seed):
    from covlearn.models import gaussian_pair
    pair = gaussian_pair(k, j)
    xs = np.random.default_rng(seed).normal(mu, 2 * sigma, size=6)
    assert metric_transform_residual(pair, [mu, sigma ** k], JointMeasure.from_diagonal(xs)) < 1e-8


def test_steepest_direction_examples():
    f = LinearFunction(2)
    x = np.array([1.0, 1.0])
    np.testing.assert_array_equal(steepest_direction(f, x, np.zeros(2), np.eye(2)), [1.0, 1.0])
    np.testing.assert_allclose(steepest_direction(f, x, np.zeros(2), MetricMatrix(np.diag([1.0, 4.0]))), [1.0, 0.25])


@pytest.mark.parametrize("seed", range(5))
def test_steepest_direction_brute_force(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2))
    G = B @ B.T + 0.1 * np.eye(2)
    x = rng.normal(size=2)
    d = steepest_direction(LinearFunction(2), x, np.zeros(2), G)
    assert cosine(d, brute_force_steepest(x, G)) > 0.999


def test_steepest_direction_in_row_space():
    rng = np.random.default_rng(3)
    B = rng.normal(size=(4, 2))
    G = B @ B.T
    d = steepest_direction(LinearFunction(4), rng.normal(size=4), np.zeros(4), G)
    P = G @ pinv(G)
    np.testing.assert_allclose(P @ d, d, atol=1e-10)


def test_rank_equals_sample_count_below_dimension():
    rng = np.random.default_rng(0)
    f = LinearFunction(5)
    for s in range(1, 5):
        G = metric_from_joint(f, np.zeros(5), JointMeasure.from_diagonal(rng.normal(size=(s, 5))))
        assert G.rank == s


def test_sampled_fisher_consistency():
    f = GaussianModel(2)
    theta = np.array([1.0, 2.0])
    exact = f.fisher(theta)
    dist = {}
    for s in (100, 1000, 10000):
        spec = SampledFisher(s)
        dist[s] = np.mean([np.linalg.norm(spec.matrix(f, theta, rand=StepRandomness(seed, 1)).entries - exact)
                           for seed in range(20)])
    assert dist[100] > dist[1000] > dist[10000]


def test_sampled_fisher_shares_points_across_congruent_functions():
    f, g = GaussianModel(1), GaussianModel(3)
    theta = np.array([0.5, 1.5])
    rand = StepRandomness(9, 4)
    spec = SampledFisher(50)
    np.testing.assert_allclose(spec.points(f, theta, rand), spec.points(g, np.array([0.5, 1.5 ** 3]), rand),
                               rtol=1e-13)


def test_uniform_source_support():
    f = GaussianModel(2)
    theta = np.array([1.0, 4.0])
    pts = SampledFisher(2000, "uniform").points(f, theta, StepRandomness(0, 1))
    assert pts.min() >= 1.0 - 10.0 and pts.max() <= 1.0 + 10.0
    assert pts.min() < -8.0 and pts.max() > 10.0


def test_sampled_fisher_needs_randomness():
    with pytest.raises(ValueError):
        SampledFisher(10).matrix(GaussianModel(1), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        SampledFisher(0)


def test_metric_specs():
    f = LinearFunction(3)
    assert np.array_equal(IdentityMetric().matrix(f, np.zeros(3)).entries, np.eye(3))
    x = np.array([1.0, 2.0, 0.0])
    G = OuterProductAtX().matrix(f, np.zeros(3), x=x)
    np.testing.assert_array_equal(G.entries, np.outer(x, x))
    spec = JointMeasureMetric(lambda f, beta, rand, x: JointMeasure.from_diagonal(np.eye(3)))
    np.testing.assert_allclose(spec.matrix(f, np.zeros(3)).entries, np.eye(3) / 3)
