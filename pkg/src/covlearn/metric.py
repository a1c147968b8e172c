"""Metric tensors built from joint measures over inputs, and the
steepest-ascent direction under such a metric."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .calculus import MetricMatrix, pinv
from .core import CongruentPair, JointMeasure, ParamFunction, SignedMeasure, StepRandomness, as_param

__all__ = [
    "metric_from_joint",
    "fisher_gaussian_closed_form",
    "steepest_direction",
    "MetricSpec",
    "IdentityMetric",
    "ClosedFormMetric",
    "JointMeasureMetric",
    "SampledFisher",
    "OuterProductAtX",
    "MeasureGram",
    "metric_transform_residual",
    "check_metric_transform",
]


def metric_from_joint(f: ParamFunction, beta, p: JointMeasure) -> MetricMatrix:
    """G = sum over atoms ((x, y), w) of w * grad f(x, beta) grad f(y, beta)^T."""
    if len(p) == 0:
        raise ValueError("joint measure has no atoms")
    gx = f.grad(p.xs, beta)
    gy = gx if p.diagonal else f.grad(p.ys, beta)
    G = (gx * p.probs[:, None]).T @ gy
    return MetricMatrix(0.5 * (G + G.T))


def fisher_gaussian_closed_form(mu: float, sigma_k: float, k: int) -> MetricMatrix:
    """Fisher information of N(mu, sigma^2) in the (mu, sigma**k) parameterization."""
    if sigma_k <= 0:
        raise ValueError(f"sigma**k must be positive, got {sigma_k}")
    var = sigma_k ** (2.0 / k)
    return MetricMatrix(np.diag([1.0 / var, 2.0 / (k * k * sigma_k * sigma_k)]))


def steepest_direction(f: ParamFunction, x, beta, G) -> np.ndarray:
    """G^+ grad f(x, beta): the direction of steepest ascent of f(x, .) when
    lengths are measured by ``d^T G d``. Unnormalized."""
    grad = f.grad(np.asarray([x]), as_param(beta))[0]
    return pinv(G) @ grad


class MetricSpec:
    """How to build G at one step.

    ``per_atom`` specs build a separate G for every atom of the rule's
    measure; the others build one G per step.
    """

    per_atom = False
    label = "metric"

    def matrix(self, f: ParamFunction, beta, *, rand: Optional[StepRandomness] = None,
               mu: Optional[SignedMeasure] = None, x=None) -> MetricMatrix:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.label})"


class IdentityMetric(MetricSpec):
    label = "identity"

    def matrix(self, f, beta, **_):
        return MetricMatrix(np.eye(f.param_dim))


class ClosedFormMetric(MetricSpec):
    """Uses ``f.fisher(beta)``; the exact Fisher information of a log-density."""

    label = "closed-form-fisher"

    def matrix(self, f, beta, **_):
        if not hasattr(f, "fisher"):
            raise TypeError(f"{f!r} has no closed-form Fisher information")
        return MetricMatrix(f.fisher(beta))


class JointMeasureMetric(MetricSpec):
    """G from a caller-supplied joint measure ``provider(f, beta, rand, x)``.

    The provider must build its atoms from quantities shared by congruent
    functions (data, function values, or the ``rand`` substreams).
    """

    def __init__(self, provider: Callable, per_atom: bool = False, label: str = "joint"):
        self.provider = provider
        self.per_atom = per_atom
        self.label = label

    def matrix(self, f, beta, *, rand=None, mu=None, x=None):
        return metric_from_joint(f, beta, self.provider(f, beta, rand, x))


class SampledFisher(MetricSpec):
    """Diagonal joint measure on ``samples`` points drawn each step.

    ``source="model"`` draws x from f(., beta) by inverse CDF (f must expose
    ``sample_model``); ``source="uniform"`` draws from the uniform
    distribution on ``f.uniform_support(beta)``. Draws come from the step's
    ``"metric"`` substream, so congruent runs see the same points.
    """

    def __init__(self, samples: int, source: str = "model"):
        if samples < 1:
            raise ValueError("samples must be >= 1")
        if source not in ("model", "uniform"):
            raise ValueError(f"unknown source {source!r}")
        self.samples = int(samples)
        self.source = source
        self.label = f"sampled-{source}-{samples}"

    def points(self, f, beta, rand: StepRandomness) -> np.ndarray:
        u = rand.generator("metric").random(self.samples)
        if self.source == "model":
            return f.sample_model(beta, u)
        lo, hi = f.uniform_support(beta)
        return lo + (hi - lo) * u

    def matrix(self, f, beta, *, rand=None, mu=None, x=None):
        if rand is None:
            raise ValueError("sampled metrics need the step's randomness")
        return metric_from_joint(f, beta, JointMeasure.from_diagonal(self.points(f, beta, rand)))


class OuterProductAtX(MetricSpec):
    """G(x) = grad f(x, beta) grad f(x, beta)^T, one per atom."""

    per_atom = True
    label = "outer-product-at-x"

    def matrix(self, f, beta, *, rand=None, mu=None, x=None):
        g = f.grad(np.asarray([x]), beta)[0]
        return MetricMatrix(np.outer(g, g))


class MeasureGram(MetricSpec):
    """Gram matrix of the rule's own measure: sum w grad f grad f^T.

    With ``normalize=True`` the weights are first divided by their total
    (non-negative measures only), which makes the joint measure a
    probability measure.
    """

    def __init__(self, normalize: bool = True):
        self.normalize = normalize
        self.label = "measure-gram" + ("-normalized" if normalize else "")

    def matrix(self, f, beta, *, rand=None, mu=None, x=None):
        if mu is None or len(mu) == 0:
            raise ValueError("measure Gram metric needs a non-empty measure")
        if self.normalize:
            return metric_from_joint(f, beta, JointMeasure.normalized(mu))
        g = f.grad(mu.points, beta)
        G = (g * mu.weights[:, None]).T @ g
        return MetricMatrix(0.5 * (G + G.T))


def metric_transform_residual(pair: CongruentPair, theta, p: JointMeasure) -> float:
    """||G_f(theta) - J^T G_g(psi(theta)) J|| / max(1, ||G_f||), J = dpsi(theta).

    Zero when the metric transforms like a (0, 2) tensor under psi.
    """
    theta = as_param(theta, pair.f.param_dim)
    Gf = metric_from_joint(pair.f, theta, p).entries
    Gg = metric_from_joint(pair.g, pair.psi(theta), p).entries
    J = pair.psi.jac(theta)
    return float(np.linalg.norm(Gf - J.T @ Gg @ J) / max(1.0, np.linalg.norm(Gf)))


def check_metric_transform(pair: CongruentPair, trials: int = 16, atoms: int = 8, rng_seed: int = 0) -> float:
    """Largest :func:`metric_transform_residual` over random parameters and
    random (non-diagonal) joint measures. Returns the residual."""
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(trials):
        theta = pair.f.sample_params(rng)
        xs = pair.f.sample_inputs(rng, atoms)
        ys = pair.f.sample_inputs(rng, atoms)
        probs = rng.random(atoms)
        # symmetric joint measure, so G is a proper metric candidate
        p = JointMeasure(np.concatenate([xs, ys]), np.concatenate([ys, xs]),
                         np.concatenate([probs, probs]) / (2 * probs.sum()))
        worst = max(worst, metric_transform_residual(pair, theta, p))
    return worst
