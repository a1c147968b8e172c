import numpy as np
import pytest

from covlearn.core import History, SignedMeasure, StepRandomness, run_rule
from covlearn.models import GaussianModel, LinearFunction, QuadraticLoss
from covlearn.rules import (
    DataSummary,
    LogLikelihoodAscent,
    MarkovRewardProcess,
    NesterovRule,
    SquaredErrorSGD,
    StepSchedule,
    TD0Rule,
    gaussian_loglik_gd_step,
    gaussian_mle,
    sgd_squared_error_step,
    td_fixed_point,
    three_state_chain,
)

from oracles import central_gradient, gaussian_loglik, gaussian_step_k2, gaussian_step_raw, value_iteration


# Gaussian log-likelihood ascent

def test_first_step_moves_toward_data():
    data = np.array([2.0, 4.0, 6.0])
    nxt = gaussian_loglik_gd_step([2.0, 1.0], data, 0.01, 1)
    assert nxt[0] > 2.0 and nxt[1] > 1.0


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_mle_is_fixed_point(k, small_data):
    mu, var = gaussian_mle(small_data)
    theta = np.array([mu, var ** (k / 2)])
    step = gaussian_loglik_gd_step(theta, small_data, 1e-3, k)
    np.testing.assert_allclose(step, theta, rtol=0, atol=1e-11 * max(1.0, theta[1]))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_step_matches_finite_difference_gradient(k, small_data):
    alpha = 1e-4
    theta = np.array([2.5, 2.0 ** k])
    expected = theta + alpha * central_gradient(lambda t: gaussian_loglik(small_data, t[0], t[1], k), theta)
    got = gaussian_loglik_gd_step(theta, small_data, alpha, k)
    np.testing.assert_allclose(got - theta, expected - theta, rtol=1e-6)


def test_k2_matches_hand_written_update(small_data):
    theta = np.array([1.0, 5.0])
    for _ in range(20):
        a = gaussian_loglik_gd_step(theta, small_data, 1e-3, 2)
        np.testing.assert_allclose(a, gaussian_step_k2(theta, small_data, 1e-3), rtol=1e-12)
        theta = a


def test_summary_and_raw_array_agree(small_data):
    theta = [2.0, 3.0]
    np.testing.assert_allclose(gaussian_loglik_gd_step(theta, DataSummary.of(small_data), 1e-3, 3),
                               gaussian_step_raw(theta, small_data, 1e-3, 3), rtol=1e-12)


def test_gaussian_step_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        gaussian_loglik_gd_step([0.0, 0.0], [1.0], 0.1, 1)
    with pytest.raises(ValueError):
        LogLikelihoodAscent([], 0.1)


def test_density_measure_weights_are_alpha_over_p(small_data):
    f = GaussianModel(2, "density")
    beta = np.array([3.0, 9.0])
    mu = LogLikelihoodAscent(small_data, 0.01).measure(1, f, None, beta, None)
    np.testing.assert_allclose(mu.weights * f.value(small_data, beta), 0.01, rtol=1e-12)
    # same update as the log-density measure
    g = GaussianModel(2)
    mu_log = LogLikelihoodAscent(small_data, 0.01).measure(1, g, None, beta, None)
    np.testing.assert_allclose(f.integrate_grad(mu, beta), g.integrate_grad(mu_log, beta), rtol=1e-10)


# SGD on squared error

def test_sgd_examples():
    f = LinearFunction(2)
    np.testing.assert_allclose(sgd_squared_error_step(f, lambda x: 1.0, [0.0, 0.0], [1.0, 0.0], 0.5), [0.5, 0.0])
    # already exact: no change
    np.testing.assert_array_equal(sgd_squared_error_step(f, lambda x: 3.0, [1.0, 1.0], [1.0, 2.0], 0.5), [1.0, 1.0])
    with pytest.raises(ValueError):
        sgd_squared_error_step(f, lambda x: 0.0, [0.0, 0.0], [1.0, 0.0], 0.0)


def test_sgd_rule_reduces_error_on_linear_target():
    w_true = np.array([1.5, -0.5])
    rule = SquaredErrorSGD(lambda x: w_true @ x, StepSchedule(0.05), lambda rng: rng.normal(size=2))
    traj = run_rule(rule, LinearFunction(2), [0.0, 0.0], 2000, rng_seed=4)
    assert np.linalg.norm(traj.final - w_true) < 1e-6


def test_step_schedule():
    assert StepSchedule(0.1)(50) == 0.1
    assert StepSchedule(0.1, 10.0)(10) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        StepSchedule(-1.0)


# Nesterov

def _quadratic():
    A = np.diag([1.0, 100.0])
    b = np.array([1.0, -2.0])
    f = QuadraticLoss(A, b)
    provider = lambda i, f, h, beta, r: SignedMeasure(np.zeros(1), np.ones(1))  # noqa: E731
    return f, provider


def test_nesterov_first_step_is_plain_gradient():
    f, provider = _quadratic()
    traj = run_rule(NesterovRule(provider, StepSchedule(0.01)), f, [3.0, 3.0], 1)
    step = traj.steps[0]
    np.testing.assert_array_equal(step.beta, [3.0, 3.0])
    np.testing.assert_allclose(step.theta_next, np.array([3.0, 3.0]) - 0.01 * (f.A @ [3.0, 3.0] - f.b))


def test_nesterov_beats_gradient_descent_on_ill_conditioned_quadratic():
    f, provider = _quadratic()
    x_star = f.minimizer()
    nest = run_rule(NesterovRule(provider, StepSchedule(0.01)), f, [3.0, 3.0], 200).final
    gd = run_rule(NesterovRule(provider, StepSchedule(0.01), momentum=False), f, [3.0, 3.0], 200).final
    loss = lambda t: float(f.value(np.zeros(1), t)[0] - f.value(np.zeros(1), x_star)[0])  # noqa: E731
    assert loss(nest) < 0.1 * loss(gd)


def test_nesterov_zero_measure_is_pure_extrapolation():
    # one gradient kick at i = 1, then only momentum
    def provider(i, f, h, b, r):
        if i == 1:
            return SignedMeasure(np.array([[-1.0, -1.0]]), np.ones(1))
        return SignedMeasure.empty((2,))

    traj = run_rule(NesterovRule(provider, StepSchedule(0.1)), LinearFunction(2), [0.0, 0.0], 3)
    l1 = np.array([0.1, 0.1])
    np.testing.assert_allclose(traj.steps[0].theta_next, l1)
    l2 = l1 + (1 / 3) * l1
    np.testing.assert_allclose(traj.steps[1].theta_next, l2)
    np.testing.assert_allclose(traj.steps[2].theta_next, l2 + 0.5 * (l2 - l1))


def test_nesterov_without_momentum_equals_gradient_descent():
    f, provider = _quadratic()
    traj = run_rule(NesterovRule(provider, StepSchedule(0.01), momentum=False), f, [3.0, 3.0], 20)
    theta = np.array([3.0, 3.0])
    for step in traj.steps:
        theta = theta - 0.01 * (f.A @ theta - f.b)
        np.testing.assert_allclose(step.theta_next, theta, rtol=1e-13)


# TD(0)

FEATS = np.array([[1.0, 0.0], [0.5, 1.0], [0.0, 1.0]])


def test_td_expected_update_vanishes_at_fixed_point():
    chain = three_state_chain()
    f = LinearFunction(2, FEATS)
    theta = td_fixed_point(chain, FEATS, 0.9)
    rule = TD0Rule(chain, 0.9, StepSchedule(1.0))
    # exact expectation over stationary transitions
    d = chain.stationary()
    v = FEATS @ theta
    exact = sum(d[s] * chain.P[s, t] * (chain.rewards[s] + 0.9 * v[t] - v[s]) * FEATS[s]
                for s in range(3) for t in range(3))
    assert np.abs(exact).max() < 1e-12
    # sampled through the rule; 1e5 draws give a standard error near 1e-3, so bound at 4 SE
    n = 100_000
    upd = np.array([f.integrate_grad(rule.measure(i, f, None, theta, StepRandomness(0, i)), theta)
                    for i in range(1, n + 1)])
    se = upd.std(axis=0) / np.sqrt(n)
    assert se.max() < 2e-3
    assert np.all(np.abs(upd.mean(axis=0)) < 4 * se)


def test_td_zero_rewards_stay_at_zero():
    chain = three_state_chain()
    zero = MarkovRewardProcess(chain.P, np.zeros(3))
    traj = run_rule(TD0Rule(zero, 0.9, StepSchedule(0.1)), LinearFunction(3, np.eye(3)), [0.0, 0.0, 0.0], 200)
    np.testing.assert_array_equal(traj.final, np.zeros(3))


def test_td_tabular_matches_value_iteration():
    chain = three_state_chain()
    f = LinearFunction(3, np.eye(3))
    traj = run_rule(TD0Rule(chain, 0.5, StepSchedule(0.05, 2000.0)), f, np.zeros(3), 50_000, rng_seed=2)
    np.testing.assert_allclose(traj.final, value_iteration(chain.P, chain.rewards, 0.5), atol=1e-2)


def test_td_rejects_bad_inputs():
    with pytest.raises(ValueError):
        TD0Rule(three_state_chain(), 1.0, StepSchedule(0.1))
    with pytest.raises(ValueError):
        MarkovRewardProcess(np.ones((2, 2)), np.zeros(2))


# rules in l = l' + sum w grad f form

@pytest.mark.parametrize("k", [1, 2, 4])
def test_decomposition_round_trip_is_bitwise(k, small_data):
    f = GaussianModel(k)
    rule = LogLikelihoodAscent(small_data, 1e-4)
    traj = run_rule(rule, f, [2.0, 2.0 ** k], 10, rng_seed=5)
    hist = History(list(traj.theta0))
    for i, step in enumerate(traj.steps, start=1):
        rand = StepRandomness(5, i)
        beta, base = rule.base_step(i, f, hist, rand)
        mu = rule.measure(i, f, hist, beta, rand)
        assert np.array_equal(base + f.integrate_grad(mu, beta), step.theta_next)
        hist.append(step.theta_next)
