"""Shipped parameterized functions and the congruent pairs built from them."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

from .core import CongruentPair, ParamFunction, SignedMeasure, Submersion

__all__ = [
    "UnitGaussianMean",
    "GaussianModel",
    "ExpFunction",
    "IdentityFunction",
    "LinearFunction",
    "QuadraticLoss",
    "SquaredNorm",
    "ReparameterizedFunction",
    "power_submersion",
    "gaussian_pair",
    "exp_pair",
    "linear_pair",
    "theorem3_family",
    "shipped_pairs",
    "shipped_functions",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class GaussianModel(ParamFunction):
    """Normal distribution parameterized by ``theta = (mu, sigma**k)``.

    ``mode="log_density"`` evaluates ``log N(x; mu, sigma^2)``; ``"density"``
    evaluates the density itself.
    """

    param_dim = 2

    def __init__(self, k: int = 1, mode: str = "log_density"):
        if k <= 0:
            raise ValueError("k must be a positive integer")
        if mode not in ("log_density", "density"):
            raise ValueError(f"unknown mode {mode!r}")
        self.k = int(k)
        self.mode = mode
        self.label = f"gaussian-{mode}-k{self.k}"

    @property
    def is_density(self) -> bool:
        return self.mode == "density"

    def sigma(self, theta) -> float:
        return float(theta[1]) ** (1.0 / self.k)

    def variance(self, theta) -> float:
        return float(theta[1]) ** (2.0 / self.k)

    def in_domain(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[1] > 0)

    def _logpdf(self, xs, theta):
        mu, s = float(theta[0]), float(theta[1])
        var = s ** (2.0 / self.k)
        d = np.asarray(xs, dtype=float) - mu
        return -_LOG_SQRT_2PI - math.log(s) / self.k - d * d / (2.0 * var)

    def _score(self, xs, theta):
        mu, s = float(theta[0]), float(theta[1])
        k = self.k
        d = np.asarray(xs, dtype=float) - mu
        out = np.empty(d.shape + (2,))
        out[..., 0] = d / s ** (2.0 / k)
        out[..., 1] = -1.0 / (k * s) + d * d * s ** (-(k + 2.0) / k) / k
        return out

    def value(self, xs, theta):
        lp = self._logpdf(xs, theta)
        return np.exp(lp) if self.is_density else lp

    def grad(self, xs, theta):
        sc = self._score(xs, theta)
        if self.is_density:
            return sc * np.exp(self._logpdf(xs, theta))[..., None]
        return sc

    def integrate_grad(self, measure: SignedMeasure, theta):
        if self.is_density or len(measure) == 0 or np.asarray(measure.points).ndim != 1:
            return super().integrate_grad(measure, theta)
        # log-density scores are quadratic in x, so weighted moments suffice
        W, mean, m2 = measure.centered_moments
        mu, s = float(theta[0]), float(theta[1])
        k = self.k
        off = mean - mu
        return np.array([
            W * off / s ** (2.0 / k),
            -W / (k * s) + (m2 + W * off * off) * s ** (-(k + 2.0) / k) / k,
        ])

    def fisher(self, theta) -> np.ndarray:
        """Closed-form Fisher information diag(1/sigma^2, 2/(k^2 sigma^(2k)))."""
        s = float(theta[1])
        if s <= 0:
            raise ValueError("sigma**k must be positive")
        var = s ** (2.0 / self.k)
        return np.diag([1.0 / var, 2.0 / (self.k ** 2 * s * s)])

    def sample_model(self, theta, u) -> np.ndarray:
        """Inverse-CDF draws from N(mu, sigma^2) given uniforms ``u``."""
        return float(theta[0]) + self.sigma(theta) * ndtri(np.asarray(u, dtype=float))

    def uniform_support(self, theta, width: float = 5.0) -> tuple:
        sd = self.sigma(theta)
        return float(theta[0]) - width * sd, float(theta[0]) + width * sd

    def sample_inputs(self, rng, size):
        return rng.normal(3.0, 3.0, size=size)

    def sample_params(self, rng):
        return np.array([rng.uniform(-1.0, 5.0), rng.uniform(0.7, 3.5) ** self.k])


class ExpFunction(ParamFunction):
    """f(x, theta) = exp(theta), ignoring x."""

    param_dim = 1
    label = "exp"

    def value(self, xs, theta):
        return np.full(len(xs), math.exp(float(theta[0])))

    def grad(self, xs, theta):
        return np.full((len(xs), 1), math.exp(float(theta[0])))

    def sample_params(self, rng):
        return rng.uniform(-2.0, 2.0, size=1)


class IdentityFunction(ParamFunction):
    """g(x, theta) = theta, ignoring x."""

    param_dim = 1
    label = "identity"

    def value(self, xs, theta):
        return np.full(len(xs), float(theta[0]))

    def grad(self, xs, theta):
        return np.ones((len(xs), 1))

    def in_domain(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[0] > 0)

    def sample_params(self, rng):
        return rng.uniform(0.2, 5.0, size=1)


class LinearFunction(ParamFunction):
    """f(x, theta) = theta . phi(x).

    ``features`` is either ``None`` (x is already the feature vector) or a 2-D
    table indexed by integer inputs (one row per state).
    """

    def __init__(self, dim: int, features=None, label: str = "linear"):
        self.param_dim = int(dim)
        self.features = None if features is None else np.asarray(features, dtype=float)
        self.label = label

    def phi(self, xs) -> np.ndarray:
        if self.features is None:
            return np.asarray(xs, dtype=float).reshape(-1, self.param_dim)
        return self.features[np.asarray(xs, dtype=int)]

    def value(self, xs, theta):
        return self.phi(xs) @ np.asarray(theta, dtype=float)

    def grad(self, xs, theta):
        return self.phi(xs).copy()

    def sample_inputs(self, rng, size):
        if self.features is None:
            return rng.normal(size=(size, self.param_dim))
        return rng.integers(0, len(self.features), size=size)


class QuadraticLoss(ParamFunction):
    """f(x, theta) = 0.5 theta^T A theta - b^T theta, ignoring x."""

    def __init__(self, A, b, label: str = "quadratic"):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.param_dim = self.A.shape[0]
        self.label = label

    def value(self, xs, theta):
        t = np.asarray(theta, dtype=float)
        return np.full(len(xs), 0.5 * t @ self.A @ t - self.b @ t)

    def grad(self, xs, theta):
        t = np.asarray(theta, dtype=float)
        return np.tile(self.A @ t - self.b, (len(xs), 1))

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)


class SquaredNorm(ParamFunction):
    """f(x, theta) = theta . theta."""

    def __init__(self, dim: int = 3):
        self.param_dim = dim
        self.label = f"squared-norm-{dim}"

    def value(self, xs, theta):
        t = np.asarray(theta, dtype=float)
        return np.full(len(xs), float(t @ t))

    def grad(self, xs, theta):
        return np.tile(2.0 * np.asarray(theta, dtype=float), (len(xs), 1))


class ReparameterizedFunction(ParamFunction):
    """g(x, y) = f(x, psi^{-1}(y)) for an invertible submersion psi.

    Then f(x, theta) = g(x, psi(theta)) holds by construction.
    """

    def __init__(self, base: ParamFunction, psi: Submersion, psi_inverse, label: str = "",
                 param_sampler=None, domain=None):
        if psi.in_dim != psi.out_dim:
            raise ValueError("reparameterization requires a square submersion")
        self.base = base
        self.psi = psi
        self.psi_inverse = psi_inverse
        self.param_dim = psi.out_dim
        self.label = label or f"{base.label} reparameterized by {psi.label}"
        self._param_sampler = param_sampler
        self._domain = domain

    def value(self, xs, theta):
        return self.base.value(xs, self.psi_inverse(np.asarray(theta, dtype=float)))

    def grad(self, xs, theta):
        t = self.psi_inverse(np.asarray(theta, dtype=float))
        # d/dy f(x, psi^{-1}(y)) = J_psi(t)^{-T} grad f(x, t)
        J = self.psi.jac(t)
        return np.linalg.solve(J.T, self.base.grad(xs, t).T).T

    def in_domain(self, theta):
        if not np.all(np.isfinite(theta)):
            return False
        return True if self._domain is None else bool(self._domain(theta))

    def sample_inputs(self, rng, size):
        return self.base.sample_inputs(rng, size)

    def sample_params(self, rng):
        if self._param_sampler is not None:
            return self._param_sampler(rng)
        return self.psi(self.base.sample_params(rng))


def power_submersion(k_from: int, k_to: int) -> Submersion:
    """(mu, sigma**k_from) -> (mu, sigma**k_to)."""
    r = k_to / k_from

    def fwd(t):
        return np.array([t[0], t[1] ** r])

    def jac(t):
        return np.array([[1.0, 0.0], [0.0, r * t[1] ** (r - 1.0)]])

    return Submersion(2, 2, fwd, jac, f"sigma^{k_from}->sigma^{k_to}")


def gaussian_pair(k_f: int, k_g: int, mode: str = "log_density") -> CongruentPair:
    f = GaussianModel(k_f, mode)
    g = GaussianModel(k_g, mode)
    tag = "gaussian" if mode == "log_density" else "gaussian-density"
    return CongruentPair(f, g, power_submersion(k_f, k_g), f"{tag}-k{k_f}-k{k_g}")


def exp_pair() -> CongruentPair:
    """f = exp(theta), g = theta, psi = exp: g is congruent to f."""
    psi = Submersion(1, 1, lambda t: np.exp(t), lambda t: np.exp(t).reshape(1, 1), "exp")
    return CongruentPair(ExpFunction(), IdentityFunction(), psi, "exp-identity")


def linear_pair(base: ParamFunction, A, c=None, label: str = "linear-reparam") -> CongruentPair:
    """g(x, y) = base(x, A^{-1}(y - c)); psi(theta) = A theta + c."""
    A = np.asarray(A, dtype=float)
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
    psi = Submersion(A.shape[1], A.shape[0], lambda t: A @ t + c, lambda t: A, "affine")
    g = ReparameterizedFunction(base, psi, lambda y: np.linalg.solve(A, y - c), f"{base.label}-affine")
    return CongruentPair(base, g, psi, label)


def theorem3_family(f: ParamFunction):
    """For scalar-parameter ``f`` return the pairs (f, g) and (f, h) with
    g(x, t) = f(x, ln t) and h(x, t) = f(x, ln(t)/2)."""
    if f.param_dim != 1:
        raise ValueError("the family is defined for one-parameter functions")
    psi = Submersion(1, 1, lambda t: np.exp(t), lambda t: np.exp(t).reshape(1, 1), "exp")
    phi = Submersion(1, 1, lambda t: np.exp(2.0 * t), lambda t: (2.0 * np.exp(2.0 * t)).reshape(1, 1), "exp2")
    positive = lambda t: bool(t[0] > 0)  # noqa: E731
    g = ReparameterizedFunction(f, psi, lambda y: np.log(y), f"{f.label}(ln t)", domain=positive)
    h = ReparameterizedFunction(f, phi, lambda y: 0.5 * np.log(y), f"{f.label}(ln(t)/2)", domain=positive)
    return CongruentPair(f, g, psi, "log-reparam"), CongruentPair(f, h, phi, "half-log-reparam")


class UnitGaussianMean(ParamFunction):
    """f(x, theta) = log N(x; theta, 1)."""

    param_dim = 1
    label = "gaussian-mean"

    def value(self, xs, theta):
        d = np.asarray(xs, dtype=float) - float(theta[0])
        return -_LOG_SQRT_2PI - 0.5 * d * d

    def grad(self, xs, theta):
        return (np.asarray(xs, dtype=float) - float(theta[0])).reshape(-1, 1)

    def fisher(self, theta):
        return np.eye(1)

    def sample_inputs(self, rng, size):
        return rng.normal(1.0, 1.5, size=size)

    def sample_params(self, rng):
        return rng.uniform(-1.0, 1.0, size=1)


def shipped_functions() -> list:
    fns = [GaussianModel(k, m) for m in ("log_density", "density") for k in (1, 2, 3, 4)]
    fns += [ExpFunction(), IdentityFunction(), SquaredNorm(3), UnitGaussianMean(),
            LinearFunction(3, label="linear-3")]
    for pair in shipped_pairs():
        if isinstance(pair.g, ReparameterizedFunction):
            fns.append(pair.g)
    return fns


def shipped_pairs() -> list:
    pairs = [gaussian_pair(1, k) for k in (1, 2, 3, 4)]
    pairs += [gaussian_pair(2, 4), gaussian_pair(1, 4, "density"), gaussian_pair(1, 2, "density")]
    pairs.append(exp_pair())
    A = np.array([[2.0, 0.5, 0.0], [-0.3, 1.0, 0.4], [0.1, 0.0, 1.5]])
    pairs.append(linear_pair(LinearFunction(3, label="linear-3"), A, np.array([0.5, -1.0, 0.0])))
    pairs.extend(theorem3_family(UnitGaussianMean()))
    return pairs
