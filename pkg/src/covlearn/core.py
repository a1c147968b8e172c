"""Domain types: parameterized functions, congruent reparameterizations,
discrete measures, and learning rules written as ``l' + integral of grad f``.

Inputs are always handled in batches: ``xs`` carries one input per entry of
its leading axis, so ``f.value(xs, theta)`` has shape ``(s,)`` and
``f.grad(xs, theta)`` has shape ``(s, n)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "as_param",
    "StepRandomness",
    "ParamFunction",
    "CallableParamFunction",
    "Submersion",
    "CongruentPair",
    "CongruenceReport",
    "SignedMeasure",
    "JointMeasure",
    "History",
    "StepDiagnostics",
    "RuleStep",
    "Trajectory",
    "LearningRule",
    "verify_congruence",
    "run_rule",
]


def as_param(values, dim: Optional[int] = None) -> np.ndarray:
    """Validate and copy a parameter vector as a 1-D float64 array."""
    theta = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and theta.shape[0] != dim:
        raise ValueError(f"parameter vector has length {theta.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"parameter vector has non-finite entries: {theta}")
    return theta


class StepRandomness:
    """Deterministic random substreams for one iteration of one run.

    The outcome ``omega`` is a 64-bit integer seed. Every (label, step) pair
    maps to an independent PCG64 generator seeded through
    ``SeedSequence(seed, spawn_key=(crc32(label), step))``. Asking twice for
    the same label returns two generators in the same state, which is what
    lets a run on ``f`` and a run on a congruent ``g`` consume identical
    random numbers.
    """

    def __init__(self, seed: int, step: int):
        self.seed = int(seed)
        self.step = int(step)

    def generator(self, label: str) -> np.random.Generator:
        key = (zlib.crc32(label.encode("utf-8")), self.step)
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))


class ParamFunction:
    """A real-valued function ``f(x, theta)`` with an analytic parameter gradient.

    Subclasses implement :meth:`value` and :meth:`grad`. The sampling hooks
    describe the input space and a reasonable region of parameter space; they
    are used by the property checkers, never by the learning rules.
    """

    param_dim: int
    output_dim: int = 1
    label: str = ""

    def value(self, xs, theta) -> np.ndarray:
        raise NotImplementedError

    def grad(self, xs, theta) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, theta) -> float:
        return float(self.value(np.asarray([x]), theta)[0])

    def integrate_grad(self, measure: "SignedMeasure", theta) -> np.ndarray:
        """Return the weighted sum of gradients over the measure's atoms."""
        if len(measure) == 0:
            return np.zeros(self.param_dim)
        return measure.weights @ self.grad(measure.points, theta)

    def in_domain(self, theta) -> bool:
        return bool(np.all(np.isfinite(theta)))

    def sample_inputs(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(size=size)

    def sample_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=self.param_dim)

    def __repr__(self):
        return f"{type(self).__name__}({self.label or self.param_dim})"


class CallableParamFunction(ParamFunction):
    """Wrap a pair of batched callables as a :class:`ParamFunction`."""

    def __init__(
        self,
        param_dim: int,
        value: Callable,
        grad: Callable,
        label: str = "",
        input_sampler: Optional[Callable] = None,
        param_sampler: Optional[Callable] = None,
        domain: Optional[Callable] = None,
    ):
        self.param_dim = int(param_dim)
        self._value = value
        self._grad = grad
        self.label = label
        self._input_sampler = input_sampler
        self._param_sampler = param_sampler
        self._domain = domain

    def value(self, xs, theta):
        return np.asarray(self._value(np.asarray(xs), np.asarray(theta, dtype=float)), dtype=float)

    def grad(self, xs, theta):
        xs = np.asarray(xs)
        g = np.asarray(self._grad(xs, np.asarray(theta, dtype=float)), dtype=float)
        return g.reshape(len(xs), self.param_dim)

    def in_domain(self, theta):
        ok = super().in_domain(theta)
        return ok and (self._domain is None or bool(self._domain(theta)))

    def sample_inputs(self, rng, size):
        if self._input_sampler is None:
            return super().sample_inputs(rng, size)
        return self._input_sampler(rng, size)

    def sample_params(self, rng):
        if self._param_sampler is None:
            return super().sample_params(rng)
        return as_param(self._param_sampler(rng), self.param_dim)


@dataclass(frozen=True, eq=False)
class Submersion:
    """Smooth map ``psi`` from f's parameters (dim n) to g's parameters (dim m)."""

    in_dim: int
    out_dim: int
    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    label: str = ""

    def __call__(self, theta) -> np.ndarray:
        return np.asarray(self.map(np.asarray(theta, dtype=float)), dtype=float).reshape(self.out_dim)

    def jac(self, theta) -> np.ndarray:
        J = np.asarray(self.jacobian(np.asarray(theta, dtype=float)), dtype=float)
        return J.reshape(self.out_dim, self.in_dim)

    def smallest_singular_value(self, theta) -> float:
        return float(np.linalg.svd(self.jac(theta), compute_uv=False).min())

    @classmethod
    def identity(cls, dim: int) -> "Submersion":
        return cls(dim, dim, lambda t: np.array(t, dtype=float), lambda t: np.eye(dim), "identity")


@dataclass(frozen=True, eq=False)
class CongruentPair:
    """``g`` is congruent to ``f`` through ``psi``: f(x, theta) = g(x, psi(theta))."""

    f: ParamFunction
    g: ParamFunction
    psi: Submersion
    label: str = ""

    def __post_init__(self):
        if self.psi.in_dim != self.f.param_dim or self.psi.out_dim != self.g.param_dim:
            raise ValueError(
                f"submersion maps R^{self.psi.in_dim} -> R^{self.psi.out_dim} but f has "
                f"{self.f.param_dim} parameters and g has {self.g.param_dim}"
            )

    def reversed(self, psi_inverse: Submersion) -> "CongruentPair":
        """The pair with roles swapped, for invertible submersions."""
        return CongruentPair(self.g, self.f, psi_inverse, f"{self.label} (reversed)")


@dataclass(frozen=True)
class CongruenceReport:
    passed: bool
    value_residual: float
    jacobian_residual: float
    min_singular_value: float
    message: str = ""


def verify_congruence(
    pair: CongruentPair,
    n_samples: int = 64,
    rng_seed: int = 0,
    value_tol: float = 1e-10,
    jacobian_tol: float = 1e-8,
    rank_tol: float = 1e-10,
) -> CongruenceReport:
    """Sample (x, theta) and check f(x,theta) = g(x,psi(theta)) plus the Jacobian property.

    The Jacobian residual is relative to ``max(1, |grad f|)``.
    """
    n, m = pair.f.param_dim, pair.g.param_dim
    if m > n:
        return CongruenceReport(
            False, np.inf, np.inf, 0.0,
            f"not congruent: g has {m} parameters but f only {n}; a submersion needs m <= n",
        )
    if pair.f.output_dim != 1 or pair.g.output_dim != 1:
        raise ValueError("only scalar-output functions are supported")
    rng = np.random.default_rng(rng_seed)
    value_res = jac_res = 0.0
    min_sv = np.inf
    for _ in range(n_samples):
        theta = pair.f.sample_params(rng)
        xs = pair.f.sample_inputs(rng, 8)
        phi = pair.psi(theta)
        J = pair.psi.jac(theta)
        min_sv = min(min_sv, float(np.linalg.svd(J, compute_uv=False).min()))
        value_res = max(value_res, float(np.max(np.abs(pair.f.value(xs, theta) - pair.g.value(xs, phi)))))
        gf = pair.f.grad(xs, theta)
        chained = pair.g.grad(xs, phi) @ J
        scale = np.maximum(1.0, np.abs(gf))
        jac_res = max(jac_res, float(np.max(np.abs(gf - chained) / scale)))
    passed = value_res <= value_tol and jac_res <= jacobian_tol and min_sv > rank_tol
    msg = "" if passed else (
        f"value residual {value_res:.3g}, Jacobian residual {jac_res:.3g}, "
        f"smallest singular value of dpsi {min_sv:.3g}"
    )
    return CongruenceReport(passed, value_res, jac_res, min_sv, msg)


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """Finitely many weighted atoms over the input space. Weights may be negative."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pts.shape[:1] != w.shape:
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        if not np.all(np.isfinite(w)):
            raise ValueError("measure weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points, weight: float) -> "SignedMeasure":
        pts = np.asarray(points)
        return cls(pts, np.full(len(pts), float(weight)))

    @classmethod
    def empty(cls, point_shape=()) -> "SignedMeasure":
        return cls(np.zeros((0,) + tuple(point_shape)), np.zeros(0))

    def __len__(self):
        return self.weights.shape[0]

    @cached_property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def scaled(self, c: float) -> "SignedMeasure":
        return SignedMeasure(self.points, c * self.weights)

    @cached_property
    def centered_moments(self):
        """(total weight, weighted mean, weighted sum of squared deviations) for scalar atoms."""
        x = np.asarray(self.points, dtype=float).reshape(-1)
        W = float(self.weights.sum())
        mean = float(self.weights @ x / W)
        dev = x - mean
        return W, mean, float(self.weights @ (dev * dev))

    def same_atoms(self, other: "SignedMeasure") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True, eq=False)
class JointMeasure:
    """Probability atoms over input pairs (x, y)."""

    xs: np.ndarray
    ys: np.ndarray
    probs: np.ndarray
    diagonal: bool = False

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if len(p) == 0:
            raise ValueError("joint measure has no atoms")
        if len(self.xs) != len(p) or len(self.ys) != len(p):
            raise ValueError("joint measure atom arrays have different lengths")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("joint measure probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint measure probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_diagonal(cls, points, probs=None) -> "JointMeasure":
        pts = np.asarray(points)
        if probs is None:
            probs = np.full(len(pts), 1.0 / max(len(pts), 1))
        return cls(pts, pts, probs, diagonal=True)

    @classmethod
    def normalized(cls, measure: SignedMeasure) -> "JointMeasure":
        """Diagonal probability measure proportional to a non-negative measure."""
        if np.any(measure.weights < 0):
            raise ValueError("cannot normalize a measure with negative weights")
        W = measure.total_weight
        if W <= 0:
            raise ValueError("cannot normalize a measure with zero total weight")
        return cls.from_diagonal(measure.points, measure.weights / W)

    def __len__(self):
        return self.probs.shape[0]


class History:
    """Parameter vectors l_1, l_2, ... of a run, with l_i = theta0[-i] for i <= 0."""

    def __init__(self, theta0: Sequence[np.ndarray], thetas: Optional[list] = None):
        self.theta0 = tuple(np.asarray(t, dtype=float) for t in theta0)
        self._thetas = list(thetas) if thetas is not None else []

    def __getitem__(self, i: int) -> np.ndarray:
        if i <= 0:
            return self.theta0[-i]
        return self._thetas[i - 1]

    def __len__(self):
        return len(self._thetas)

    @property
    def latest(self) -> np.ndarray:
        return self[len(self._thetas)]

    def append(self, theta: np.ndarray) -> None:
        self._thetas.append(theta)

    def mapped(self, psi: Callable) -> "History":
        """Read-only view with psi applied on access; stays in sync with self."""
        return _MappedHistory(self, psi)


class _MappedHistory(History):
    def __init__(self, base: History, psi: Callable):
        self._base = base
        self._psi = psi
        self.theta0 = tuple(psi(t) for t in base.theta0)

    def __getitem__(self, i: int) -> np.ndarray:
        if i <= 0:
            return self.theta0[-i]
        return self._psi(self._base[i])

    def __len__(self):
        return len(self._base)

    @property
    def latest(self) -> np.ndarray:
        return self[len(self._base)]

    def append(self, theta) -> None:
        raise TypeError("mapped histories are read-only")


@dataclass(frozen=True)
class StepDiagnostics:
    measure_weight: float
    condition_number: float = 1.0
    metric_rank: Optional[int] = None
    full_rank: bool = True


@dataclass(frozen=True, eq=False)
class RuleStep:
    theta_next: np.ndarray
    beta: np.ndarray
    base: np.ndarray
    update_direction: np.ndarray
    diagnostics: StepDiagnostics


@dataclass(eq=False)
class Trajectory:
    theta0: tuple
    steps: list = field(default_factory=list)
    diverged_at: Optional[int] = None
    divergence_reason: str = ""

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta_next for s in self.steps])

    @property
    def final(self) -> np.ndarray:
        return self.steps[-1].theta_next if self.steps else self.theta0[0]


class LearningRule:
    """A learning rule in the form l_i = l'_i + sum_atoms w * grad f(x, beta_i).

    Subclasses provide :meth:`base_step` returning ``(beta_i, l'_i)`` and
    :meth:`measure` returning the step's :class:`SignedMeasure`. The measure
    must be built from function values, never from raw parameter entries.
    :meth:`direction` turns the measure into the update; naturalized rules
    override only that method.
    """

    iota: int = 1

    def base_step(self, i: int, f: ParamFunction, history: History, rand: StepRandomness):
        beta = history[i - 1]
        return beta, beta

    def measure(self, i, f, history, beta, rand) -> SignedMeasure:
        raise NotImplementedError

    def initial_state(self):
        return None

    def direction(self, i, f, beta, mu, rand, state):
        d = f.integrate_grad(mu, beta)
        return d, StepDiagnostics(measure_weight=mu.total_weight), state

    def step(self, i: int, f: ParamFunction, history: History, seed: int, state=None):
        rand = StepRandomness(seed, i)
        beta, base = self.base_step(i, f, history, rand)
        mu = self.measure(i, f, history, beta, rand)
        d, diag, state = self.direction(i, f, beta, mu, rand, state)
        return RuleStep(base + d, beta, base, d, diag), state


def _initial_vectors(rule: LearningRule, f: ParamFunction, theta0) -> tuple:
    arr = np.asarray(theta0, dtype=float)
    if arr.ndim == 1:
        vecs = [arr]
    else:
        vecs = list(arr)
    if len(vecs) == 1 and rule.iota > 1:
        # accelerated rules: theta_0^1 = theta_0^2 when only one vector is given
        vecs = vecs * rule.iota
    if len(vecs) != rule.iota:
        raise ValueError(f"rule needs {rule.iota} initial vectors, got {len(vecs)}")
    return tuple(as_param(v, f.param_dim) for v in vecs)


def run_rule(
    rule: LearningRule,
    f: ParamFunction,
    theta0,
    iterations: int,
    rng_seed: int = 0,
) -> Trajectory:
    """Run ``iterations`` steps of ``rule`` on ``f``.

    A step producing a non-finite vector, or one outside ``f``'s domain, ends
    the run; the offending step is not recorded and ``diverged_at`` is set.
    A step whose own arithmetic fails (an overflowed density making the
    measure weights infinite, say) counts as divergence too, except on the
    first step, where it more likely signals a bad setup.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    vecs = _initial_vectors(rule, f, theta0)
    history = History(vecs)
    traj = Trajectory(vecs)
    state = rule.initial_state()
    for i in range(1, iterations + 1):
        try:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                step, state = rule.step(i, f, history, rng_seed, state)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
            if i == 1:
                raise
            traj.diverged_at = i
            traj.divergence_reason = str(err)
            break
        if not np.all(np.isfinite(step.theta_next)) or not f.in_domain(step.theta_next):
            traj.diverged_at = i
            traj.divergence_reason = "non-finite or out-of-domain parameters"
            break
        history.append(step.theta_next)
        traj.steps.append(step)
    return traj
