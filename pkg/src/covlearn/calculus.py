"""Numerical building blocks: Taylor approximants, finite differences,
symmetric pseudoinverse, minimum-norm least squares."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .core import ParamFunction, as_param

__all__ = [
    "PINV_RTOL",
    "MetricMatrix",
    "pinv",
    "sym_rank",
    "penrose_residuals",
    "fd_step",
    "fd_gradient",
    "fd_jacobian",
    "fd_hessian",
    "fd_gradient_check",
    "TaylorApprox",
    "taylor",
    "least_squares_min_norm",
]

PINV_RTOL = 1e-12


def _symmetric(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """Symmetric positive semidefinite metric tensor."""

    entries: np.ndarray
    pinv_tolerance: float = PINV_RTOL

    def __post_init__(self):
        object.__setattr__(self, "entries", _symmetric(self.entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def _eigh(self):
        return np.linalg.eigh(self.entries)

    def eigvals(self) -> np.ndarray:
        return self._eigh[0]

    def is_psd(self, rtol: float = 1e-10) -> bool:
        ev = self.eigvals()
        return bool(ev.min() >= -rtol * max(abs(ev).max(), 0.0))

    @property
    def rank(self) -> int:
        lam = np.abs(self.eigvals())
        top = lam.max() if lam.size else 0.0
        return int(np.sum(lam > self.pinv_tolerance * top)) if top > 0 else 0

    @property
    def full_rank(self) -> bool:
        return self.rank == self.dim

    @property
    def condition_number(self) -> float:
        ev = np.abs(self.eigvals())
        return float(ev.max() / ev.min()) if ev.min() > 0 else np.inf

    def pinv(self) -> np.ndarray:
        return _pinv_from_eigh(*self._eigh, self.pinv_tolerance)


def pinv(M, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric matrix.

    Uses the eigendecomposition ``M = V diag(lam) V^T`` and inverts only the
    eigenvalues with ``|lam| > rtol * max|lam|``.
    """
    if isinstance(M, MetricMatrix):
        return M.pinv()
    lam, V = np.linalg.eigh(_symmetric(M))
    return _pinv_from_eigh(lam, V, rtol)


def _pinv_from_eigh(lam, V, rtol) -> np.ndarray:
    top = np.abs(lam).max() if lam.size else 0.0
    if top == 0.0:
        return np.zeros((V.shape[0], V.shape[0]))
    keep = np.abs(lam) > rtol * top
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    return (V * inv) @ V.T


def sym_rank(M, rtol: float = PINV_RTOL) -> int:
    lam = np.linalg.eigvalsh(_symmetric(M))
    top = np.abs(lam).max() if lam.size else 0.0
    return int(np.sum(np.abs(lam) > rtol * top)) if top > 0 else 0


def penrose_residuals(M, Mp) -> tuple:
    """Frobenius-relative residuals of the four Penrose conditions."""
    M = np.asarray(M, dtype=float)
    Mp = np.asarray(Mp, dtype=float)

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

    MMp = M @ Mp
    MpM = Mp @ M
    return (
        rel(MMp @ M, M),
        rel(MpM @ Mp, Mp),
        rel(MMp.T, MMp),
        rel(MpM.T, MpM),
    )


def fd_step(theta: np.ndarray, rel: float = 1e-6) -> np.ndarray:
    return rel * (1.0 + np.abs(theta))


def fd_gradient(h: Callable[[np.ndarray], float], theta, rel: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    steps = fd_step(theta, rel)
    out = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        hi, lo = theta + e, theta - e
        # divide by the step actually taken, which is exact in floating point
        out[j] = (h(hi) - h(lo)) / (hi[j] - lo[j])
    return out


def fd_jacobian(F: Callable[[np.ndarray], np.ndarray], theta, rel: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, shape (m, n)."""
    theta = np.asarray(theta, dtype=float)
    steps = fd_step(theta, rel)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        hi, lo = theta + e, theta - e
        cols.append((np.asarray(F(hi)) - np.asarray(F(lo))) / (hi[j] - lo[j]))
    return np.stack(cols, axis=-1)


def fd_hessian(grad: Callable[[np.ndarray], np.ndarray], theta, rel: float = 1e-5) -> np.ndarray:
    """Hessian by central differences of an analytic gradient, symmetrized.

    ``grad`` may return a batch of gradients with shape (s, n); the result then
    has shape (s, n, n).
    """
    theta = np.asarray(theta, dtype=float)
    steps = fd_step(theta, rel)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        hi, lo = theta + e, theta - e
        cols.append((np.asarray(grad(hi)) - np.asarray(grad(lo))) / (hi[j] - lo[j]))
    H = np.stack(cols, axis=-1)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def fd_gradient_check(f: ParamFunction, trials: int = 20, rng_seed: int = 0) -> float:
    """Max relative error between ``f.grad`` and central differences of ``f.value``.

    The error of each component is scaled by ``max(1, |analytic|)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(trials):
        theta = f.sample_params(rng)
        xs = f.sample_inputs(rng, 4)
        analytic = f.grad(xs, theta)
        numeric = fd_jacobian(lambda t: f.value(xs, t), theta)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        worst = max(worst, float(err.max()))
    return worst


@dataclass(frozen=True, eq=False)
class TaylorApprox:
    order: int
    center: np.ndarray
    value_at_center: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None

    def __call__(self, y) -> float:
        return self.evaluate(y)

    def evaluate(self, y) -> float:
        d = np.asarray(y, dtype=float) - self.center
        out = self.value_at_center
        if self.order >= 1:
            out = out + float(self.gradient @ d)
        if self.order >= 2:
            out = out + 0.5 * float(d @ self.hessian @ d)
        return out


def taylor(h: Callable, grad: Optional[Callable], order: int, center) -> TaylorApprox:
    """j-order Taylor approximation of scalar ``h`` around ``center``.

    The gradient is analytic; for order 2 the Hessian is taken by central
    differences of that gradient.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    center = as_param(center)
    value = float(h(center))
    g = H = None
    if order >= 1:
        if grad is None:
            raise ValueError("an analytic gradient is required for order >= 1")
        g = np.asarray(grad(center), dtype=float).reshape(-1)
        _require_finite(g, "gradient")
    if order == 2:
        H = fd_hessian(grad, center)
        _require_finite(H, "Hessian")
    return TaylorApprox(order, center, value, g, H)


def _require_finite(a, what):
    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        raise ValueError(f"non-finite {what} at coordinate {tuple(int(i) for i in bad[0])}")


def least_squares_min_norm(A, b) -> np.ndarray:
    """Minimum-norm minimizer of ||A w - b||^2 (SVD-based LAPACK solve)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    return w
