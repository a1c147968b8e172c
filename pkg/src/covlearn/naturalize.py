"""Naturalization: replace grad f terms of a rule with G^+ grad f, plus the
direct w* estimator and its two-timescale stochastic approximation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import MetricMatrix, pinv
from .core import JointMeasure, LearningRule, ParamFunction, SignedMeasure, StepDiagnostics
from .metric import MeasureGram, MetricSpec

__all__ = [
    "NaturalizedRule",
    "naturalize",
    "direct_w_star",
    "FlopCounter",
    "two_timescale_update",
    "two_timescale_w",
    "TwoTimescaleResult",
]

MODES = ("pinv", "wstar", "two-timescale")


def direct_w_star(f: ParamFunction, beta, mu: SignedMeasure, grads=None) -> np.ndarray:
    """Minimum-norm w* in argmin_w sum_atoms wt * (1 - w . grad f(x, beta))^2.

    Non-negative measures are solved as the sqrt-weighted least-squares
    problem. Signed measures have no minimizer in general; the minimum-norm
    critical point of the normal equations is returned instead.
    ``grads`` may carry precomputed ``f.grad(mu.points, beta)``.
    """
    if len(mu) == 0 or not np.any(mu.weights):
        raise ValueError("w* is undefined for an all-zero measure")
    g = f.grad(mu.points, beta) if grads is None else grads
    w = mu.weights
    if np.all(w >= 0):
        r = np.sqrt(w)
        sol, *_ = np.linalg.lstsq(g * r[:, None], r, rcond=None)
        return sol
    gram = (g * w[:, None]).T @ g
    sol, *_ = np.linalg.lstsq(gram, w @ g, rcond=None)
    return sol


@dataclass
class FlopCounter:
    """Counts floating-point multiplies and adds performed by an update."""

    flops: int = 0

    def dot(self, a, b) -> float:
        self.flops += 2 * a.size - 1
        return float(a @ b)

    def axpy(self, c, x, y) -> np.ndarray:
        self.flops += 2 * x.size
        return y + c * x

    def scalar(self, n: int = 1) -> None:
        self.flops += n


def two_timescale_update(w, grad, weight: float, alpha: float, counter: FlopCounter | None = None):
    """One stochastic-gradient step on weight * (1 - w . grad)^2 (factor 2 absorbed)."""
    counter = counter if counter is not None else FlopCounter()
    err = 1.0 - counter.dot(w, grad)
    counter.scalar(3)  # subtraction and the two products below
    return counter.axpy(alpha * weight * err, grad, w)


@dataclass
class TwoTimescaleResult:
    w: np.ndarray
    path: list = field(default_factory=list)
    diverged_at: int | None = None
    flops_per_update: float = 0.0


def two_timescale_w(
    f: ParamFunction,
    betas,
    measures,
    secondary_alpha: float,
    iterations: int,
    rng_seed: int = 0,
    w0=None,
) -> TwoTimescaleResult:
    """Track w* by stochastic gradient descent on a stream of (beta, measure).

    ``betas`` and ``measures`` are callables of the iteration index. Each
    iteration draws one atom with probability proportional to |weight| and
    applies one O(n) update using the atom's signed weight times the total
    absolute mass, which makes the expected update the full gradient.
    """
    if not secondary_alpha > 0:
        raise ValueError("secondary_alpha must be positive")
    rng = np.random.default_rng(rng_seed)
    w = np.zeros(f.param_dim) if w0 is None else np.array(w0, dtype=float)
    counter = FlopCounter()
    result = TwoTimescaleResult(w)
    updates = 0
    for i in range(1, iterations + 1):
        mu = measures(i)
        mass = float(np.abs(mu.weights).sum()) if len(mu) else 0.0
        if mass == 0.0:
            result.path.append(w)
            continue
        j = int(rng.choice(len(mu), p=np.abs(mu.weights) / mass))
        grad = f.grad(mu.points[j:j + 1], betas(i))[0]
        with np.errstate(over="ignore", invalid="ignore"):
            w = two_timescale_update(w, grad, np.sign(mu.weights[j]) * mass, secondary_alpha, counter)
        updates += 1
        if not np.all(np.isfinite(w)):
            result.diverged_at = i
            break
        result.path.append(w)
    result.w = w
    result.flops_per_update = counter.flops / updates if updates else 0.0
    return result


class NaturalizedRule(LearningRule):
    """l~_i = l'_i + sum over atoms of w * G(x)^+ grad f(x, beta_i).

    ``mode="pinv"`` forms G and its pseudoinverse. ``mode="wstar"`` requires a
    :class:`MeasureGram` metric and uses the direct least-squares solution
    instead. ``mode="two-timescale"`` keeps a running estimate of w* that is
    nudged once per step; it only approximates the naturalized rule.
    """

    def __init__(self, base: LearningRule, metric: MetricSpec, mode: str = "pinv",
                 secondary_alpha: float | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode != "pinv" and not isinstance(metric, MeasureGram):
            raise ValueError(f"mode {mode!r} needs the measure's own Gram matrix as metric")
        if mode == "two-timescale" and not (secondary_alpha and secondary_alpha > 0):
            raise ValueError("two-timescale mode needs a positive secondary_alpha")
        self.base = base
        self.metric = metric
        self.mode = mode
        self.secondary_alpha = secondary_alpha
        self.iota = base.iota

    def base_step(self, i, f, history, rand):
        return self.base.base_step(i, f, history, rand)

    def measure(self, i, f, history, beta, rand):
        return self.base.measure(i, f, history, beta, rand)

    def initial_state(self):
        return self.base.initial_state() if self.mode != "two-timescale" else None

    def direction(self, i, f, beta, mu, rand, state):
        W = mu.total_weight
        if len(mu) == 0:
            return np.zeros(f.param_dim), StepDiagnostics(measure_weight=0.0), state
        if self.mode == "wstar":
            grads = f.grad(mu.points, beta)
            scale = W if self.metric.normalize else 1.0
            # Gram for the diagnostics only; w* itself never forms it
            wts = mu.weights / W if self.metric.normalize else mu.weights
            G = MetricMatrix((grads * wts[:, None]).T @ grads)
            d = scale * direct_w_star(f, beta, mu, grads)
            return d, _diagnostics(W, G), state
        if self.mode == "two-timescale":
            return self._two_timescale(f, beta, mu, rand, state)
        if self.metric.per_atom:
            grads = f.grad(mu.points, beta)
            d = np.zeros(f.param_dim)
            worst = None
            for x, w, g in zip(mu.points, mu.weights, grads):
                G = self.metric.matrix(f, beta, rand=rand, mu=mu, x=x)
                d += w * (pinv(G) @ g)
                if worst is None or G.rank < worst.rank:
                    worst = G
            return d, _diagnostics(W, worst), state
        G = self.metric.matrix(f, beta, rand=rand, mu=mu)
        d = pinv(G) @ f.integrate_grad(mu, beta)
        return d, _diagnostics(W, G), state

    def _two_timescale(self, f, beta, mu, rand, w):
        if w is None:
            w = np.zeros(f.param_dim)
        if np.any(mu.weights < 0):
            raise ValueError("two-timescale mode needs a non-negative measure")
        W = mu.total_weight
        rng = rand.generator("rule.two-timescale")
        j = int(rng.choice(len(mu), p=mu.weights / W))
        grad = f.grad(mu.points[j:j + 1], beta)[0]
        w = two_timescale_update(w, grad, 1.0, self.secondary_alpha)
        scale = W if self.metric.normalize else 1.0
        return scale * w, StepDiagnostics(measure_weight=W), w


def _diagnostics(weight: float, G: MetricMatrix) -> StepDiagnostics:
    rank = G.rank
    return StepDiagnostics(
        measure_weight=weight,
        condition_number=G.condition_number,
        metric_rank=rank,
        full_rank=rank == G.dim,
    )


def naturalize(rule: LearningRule, spec: MetricSpec, mode: str = "pinv",
               secondary_alpha: float | None = None) -> NaturalizedRule:
    """Return the naturalized version of ``rule`` under metric ``spec``."""
    return NaturalizedRule(rule, spec, mode, secondary_alpha)
