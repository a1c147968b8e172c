"""Concrete learning rules, each exposing its ``beta_i``, ``l'_i`` and signed measure."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .core import History, LearningRule, ParamFunction, SignedMeasure, StepRandomness, as_param
from .models import GaussianModel

__all__ = [
    "StepSchedule",
    "DataSummary",
    "gaussian_loglik_gd_step",
    "LogLikelihoodAscent",
    "sgd_squared_error_step",
    "SquaredErrorSGD",
    "NesterovRule",
    "nesterov_rule",
    "MarkovRewardProcess",
    "three_state_chain",
    "TD0Rule",
    "td0_rule",
    "td_fixed_point",
    "FixedMeasureRule",
]


@dataclass(frozen=True)
class StepSchedule:
    """alpha_i = alpha, or alpha * t0 / (t0 + i) when ``decay_t0`` is set."""

    alpha: float
    decay_t0: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("step size must be positive")
        if self.decay_t0 is not None and not self.decay_t0 > 0:
            raise ValueError("decay_t0 must be positive")

    def __call__(self, i: int) -> float:
        if self.decay_t0 is None:
            return self.alpha
        return self.alpha * self.decay_t0 / (self.decay_t0 + max(i, 0))


@dataclass(frozen=True)
class DataSummary:
    """Count, mean and sum of squared deviations of a scalar data set."""

    n: int
    mean: float
    m2: float

    @classmethod
    def of(cls, data) -> "DataSummary":
        x = np.asarray(data, dtype=float).reshape(-1)
        if x.size == 0:
            raise ValueError("data must be non-empty")
        m = float(x.mean())
        d = x - m
        return cls(x.size, m, float(d @ d))

    def sums_about(self, mu: float) -> tuple:
        """(sum(X - mu), sum((X - mu)^2))."""
        off = self.mean - mu
        return self.n * off, self.m2 + self.n * off * off


def gaussian_loglik_gd_step(theta, data, alpha: float, k: int) -> np.ndarray:
    """One batch gradient-ascent step on the Gaussian log-likelihood in (mu, sigma**k).

    ``data`` is an array of samples or a :class:`DataSummary`. Returns the new
    ``(mu, sigma**k)``; the second entry may be non-positive, which callers
    treat as divergence.
    """
    mu, s = float(theta[0]), float(theta[1])
    if s <= 0:
        raise ValueError("sigma**k must be positive")
    summary = data if isinstance(data, DataSummary) else DataSummary.of(data)
    s1, s2 = summary.sums_about(mu)
    n = summary.n
    mu_next = mu + alpha / s ** (2.0 / k) * s1
    s_next = s - alpha * n / (k * s) + (alpha / k) * s ** (-(k + 2.0) / k) * s2
    return np.array([mu_next, s_next])


class FixedMeasureRule(LearningRule):
    """beta_i = l'_i = l_{i-1} with a caller-supplied measure (possibly empty)."""

    def __init__(self, measure: Callable = None):
        self._measure = measure

    def measure(self, i, f, history, beta, rand):
        if self._measure is None:
            return SignedMeasure.empty()
        return self._measure(i, f, history, beta, rand)


class LogLikelihoodAscent(LearningRule):
    """Batch gradient ascent on sum_j log p(X_j; theta).

    With ``f`` a log-density the measure puts weight ``alpha`` on each datum.
    With ``f`` a density the weight is ``alpha / f(X_j, beta)``, since
    grad log p = grad p / p; the weights then depend only on function values.
    """

    def __init__(self, data, alpha: float):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        self.data = np.asarray(data, dtype=float).reshape(-1)
        if self.data.size == 0:
            raise ValueError("data must be non-empty")
        self.alpha = float(alpha)
        self._log_measure = SignedMeasure.uniform(self.data, self.alpha)

    def measure(self, i, f, history, beta, rand):
        if getattr(f, "is_density", False):
            return SignedMeasure(self.data, self.alpha / f.value(self.data, beta))
        return self._log_measure


def sgd_squared_error_step(f: ParamFunction, f_star: Callable, theta, x, alpha: float) -> np.ndarray:
    """theta + alpha * (f*(x) - f(x, theta)) * grad f(x, theta)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    theta = as_param(theta, f.param_dim)
    xs = np.asarray([x])
    delta = float(f_star(x)) - float(f.value(xs, theta)[0])
    return theta + alpha * delta * f.grad(xs, theta)[0]


class SquaredErrorSGD(LearningRule):
    """Stochastic gradient descent on squared error to a target ``f_star``.

    Each step draws one input from ``input_sampler(rng)`` and uses the
    single-atom measure (x, alpha_i * delta) with delta = f*(x) - f(x, beta).
    """

    def __init__(self, f_star: Callable, schedule: StepSchedule, input_sampler: Callable):
        self.f_star = f_star
        self.schedule = schedule
        self.input_sampler = input_sampler

    def measure(self, i, f, history, beta, rand):
        x = self.input_sampler(rand.generator("rule.input"))
        xs = np.asarray([x])
        delta = float(self.f_star(x)) - float(f.value(xs, beta)[0])
        return SignedMeasure(xs, np.array([self.schedule(i) * delta]))


class NesterovRule(LearningRule):
    """Accelerated gradient with beta_i = l_{i-1} + (i-1)/(i+1) (l_{i-1} - l_{i-2}).

    ``provider(i, f, history, beta, rand)`` returns the measure whose gradient
    integral is the objective's gradient at beta; the step subtracts
    ``alpha_{i-1}`` times it.
    """

    iota = 2

    def __init__(self, provider: Callable, schedule: StepSchedule, momentum: bool = True):
        self.provider = provider
        self.schedule = schedule
        self.momentum = momentum

    def coefficient(self, i: int) -> float:
        return (i - 1.0) / (i + 1.0) if self.momentum else 0.0

    def base_step(self, i, f, history: History, rand):
        prev, prev2 = history[i - 1], history[i - 2]
        beta = prev + self.coefficient(i) * (prev - prev2)
        return beta, beta

    def measure(self, i, f, history, beta, rand):
        return self.provider(i, f, history, beta, rand).scaled(-self.schedule(i - 1))


def nesterov_rule(provider: Callable, schedule: StepSchedule) -> NesterovRule:
    return NesterovRule(provider, schedule)


@dataclass(frozen=True, eq=False)
class MarkovRewardProcess:
    """Finite Markov reward process; ``rewards[s]`` is paid on leaving s."""

    P: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape[0] != P.shape[1] or not np.allclose(P.sum(axis=1), 1.0):
            raise ValueError("P must be a square row-stochastic matrix")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @cached_property
    def _stationary(self) -> np.ndarray:
        w, V = np.linalg.eig(self.P.T)
        v = np.real(V[:, np.argmin(np.abs(w - 1.0))])
        return v / v.sum()

    def stationary(self) -> np.ndarray:
        return self._stationary.copy()

    @cached_property
    def _cdf(self) -> tuple:
        return np.cumsum(self._stationary), np.cumsum(self.P, axis=1)

    def values(self, gamma: float) -> np.ndarray:
        return np.linalg.solve(np.eye(self.n_states) - gamma * self.P, self.rewards)

    def sample_transition(self, rng: np.random.Generator) -> tuple:
        """Draw s from the stationary distribution, then s' ~ P(s, .)."""
        u = rng.random(2)
        s = min(int(np.searchsorted(self._cdf[0], u[0], side="right")), self.n_states - 1)
        s_next = min(int(np.searchsorted(self._cdf[1][s], u[1], side="right")), self.n_states - 1)
        return s, float(self.rewards[s]), s_next


def three_state_chain() -> MarkovRewardProcess:
    """The fixed 3-state chain used by the TD(0) demonstrations."""
    P = np.array([
        [0.1, 0.8, 0.1],
        [0.1, 0.1, 0.8],
        [0.8, 0.1, 0.1],
    ])
    return MarkovRewardProcess(P, np.array([1.0, 0.0, -0.5]))


def td_fixed_point(mrp: MarkovRewardProcess, features, gamma: float) -> np.ndarray:
    """Solve Phi^T D (r + gamma P Phi theta - Phi theta) = 0 for theta."""
    Phi = np.asarray(features, dtype=float)
    D = np.diag(mrp.stationary())
    A = Phi.T @ D @ (np.eye(mrp.n_states) - gamma * mrp.P) @ Phi
    return np.linalg.solve(A, Phi.T @ D @ mrp.rewards)


class TD0Rule(LearningRule):
    """TD(0) on one sampled transition per step.

    delta = r + gamma f(s', beta) - f(s, beta); measure = single atom (s, alpha_i * delta).
    """

    def __init__(self, mrp: MarkovRewardProcess, gamma: float, schedule: StepSchedule):
        if not 0 <= gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if mrp.n_states > 10:
            raise ValueError("TD(0) demonstration supports at most 10 states")
        self.mrp = mrp
        self.gamma = float(gamma)
        self.schedule = schedule

    def td_error(self, f, beta, s, r, s_next) -> float:
        v = f.value(np.array([s, s_next]), beta)
        return r + self.gamma * float(v[1]) - float(v[0])

    def measure(self, i, f, history, beta, rand):
        s, r, s_next = self.mrp.sample_transition(rand.generator("rule.transition"))
        delta = self.td_error(f, beta, s, r, s_next)
        return SignedMeasure(np.array([s]), np.array([self.schedule(i) * delta]))


def td0_rule(mrp: MarkovRewardProcess, gamma: float, schedule: StepSchedule) -> TD0Rule:
    return TD0Rule(mrp, gamma, schedule)


def gaussian_mle(data) -> np.ndarray:
    """(sample mean, mean squared deviation)."""
    s = DataSummary.of(data)
    return np.array([s.mean, s.m2 / s.n])
