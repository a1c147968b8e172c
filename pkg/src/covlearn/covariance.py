"""Checkers for j-order covariance and the second-order impossibility result."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calculus import fd_hessian
from .core import CongruentPair, History, LearningRule, ParamFunction, StepRandomness, _initial_vectors
from .models import UnitGaussianMean, theorem3_family

__all__ = [
    "CovarianceReport",
    "check_covariance",
    "check_covariance_many",
    "check_exact_covariance",
    "first_order_identity_residual",
    "Theorem3Report",
    "theorem3_verify",
    "SecondOrderDemo",
    "second_order_demo",
    "collinearity",
]


@dataclass
class CovarianceReport:
    order: int
    tolerance: float
    residuals: list = field(default_factory=list)
    identity_residuals: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    diverged_at: Optional[int] = None

    @property
    def max_residual(self) -> float:
        kept = [r for r, ex in zip(self.residuals, self.excluded) if not ex]
        return max(kept) if kept else 0.0

    @property
    def passed(self) -> bool:
        return self.diverged_at is None and all(
            r < self.tolerance for r, ex in zip(self.residuals, self.excluded) if not ex
        )

    def summary(self) -> str:
        n_ex = sum(self.excluded)
        state = "PASS" if self.passed else "FAIL"
        out = (f"{state}: order {self.order}, {len(self.residuals)} steps, "
               f"max residual {self.max_residual:.3e} (tolerance {self.tolerance:.1e})")
        if n_ex:
            out += f", {n_ex} steps excluded (rank-deficient metric for g)"
        if self.diverged_at is not None:
            out += f", diverged at step {self.diverged_at}"
        return out


def _taylor_values(fn: ParamFunction, xs, center, point, order: int) -> np.ndarray:
    d = np.asarray(point, dtype=float) - center
    out = fn.value(xs, center)
    if order >= 1:
        out = out + fn.grad(xs, center) @ d
    if order >= 2:
        H = fd_hessian(lambda t: fn.grad(xs, t), center)
        out = out + 0.5 * np.einsum("i,sij,j->s", d, H, d)
    return out


def first_order_identity_residual(pair: CongruentPair, xs, beta, l_f, l_g) -> np.ndarray:
    """|grad g^T dpsi (l_f - beta) - grad g^T (l_g - psi(beta))| per probe,
    scaled by max(1, |left side|)."""
    phi = pair.psi(beta)
    gg = pair.g.grad(xs, phi)
    lhs = gg @ (pair.psi.jac(beta) @ (l_f - beta))
    rhs = gg @ (l_g - phi)
    return np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))


def _probes(pair, probes, rng_seed, probe_points):
    if probe_points is not None:
        return np.asarray(probe_points)
    return pair.f.sample_inputs(StepRandomness(rng_seed, 0).generator("probes"), probes)


def check_covariance(
    rule: LearningRule,
    pair: CongruentPair,
    theta0,
    order: int = 1,
    steps: int = 100,
    probes: int = 16,
    rng_seed: int = 0,
    tolerance: float = 1e-7,
    probe_points=None,
    rule_g: Optional[LearningRule] = None,
) -> CovarianceReport:
    """Step-by-step j-order covariance check along the f-run.

    At step i the f-run produces beta_i and l_i(f). The g-step is computed from
    the f-run's history mapped through psi with the same seed, so both sides
    share the outcome omega and start from congruent parameters. The residual
    is |tau_j(f(x,.), beta_i, l_i(f)) - tau_j(g(x,.), psi(beta_i), l_i(g))|
    scaled by max(1, |tau_j(f)|), maximized over probe inputs.

    ``rule_g`` lets the g side use differently seeded internals (used to show
    what happens without shared randomness); it defaults to ``rule``.
    """
    return check_covariance_many(rule, [pair], theta0, order, steps, probes, rng_seed,
                                 tolerance, probe_points, rule_g)[0]


def check_covariance_many(rule, pairs, theta0, order=1, steps=100, probes=16, rng_seed=0,
                          tolerance=1e-7, probe_points=None, rule_g=None) -> list:
    """:func:`check_covariance` for several pairs sharing one f, using a single f-run."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not pairs:
        raise ValueError("no pairs given")
    f = pairs[0].f
    if any(p.f is not f for p in pairs):
        raise ValueError("all pairs must share the same f")
    rule_g = rule if rule_g is None else rule_g
    xs = _probes(pairs[0], probes, rng_seed, probe_points)
    history = History(_initial_vectors(rule, f, theta0))
    views = [history.mapped(p.psi) for p in pairs]
    reports = [CovarianceReport(order, tolerance) for _ in pairs]
    state_f = rule.initial_state()
    states_g = [rule_g.initial_state() for _ in pairs]
    for i in range(1, steps + 1):
        step_f, state_f = rule.step(i, f, history, rng_seed, state_f)
        beta = step_f.beta
        tf = _taylor_values(f, xs, beta, step_f.theta_next, order) if f.in_domain(step_f.theta_next) else None
        for j, (pair, report) in enumerate(zip(pairs, reports)):
            if report.diverged_at is not None:
                continue
            step_g, states_g[j] = rule_g.step(i, pair.g, views[j], rng_seed, states_g[j])
            if tf is None or not np.all(np.isfinite(step_g.theta_next)):
                report.diverged_at = i
                continue
            tg = _taylor_values(pair.g, xs, pair.psi(beta), step_g.theta_next, order)
            report.residuals.append(float(np.max(np.abs(tf - tg) / np.maximum(1.0, np.abs(tf)))))
            report.identity_residuals.append(float(np.max(
                first_order_identity_residual(pair, xs, beta, step_f.theta_next, step_g.theta_next))))
            report.excluded.append(not step_g.diagnostics.full_rank)
        if tf is None:
            break
        history.append(step_f.theta_next)
    return reports


def check_exact_covariance(rule, pair, theta0, steps=20, probes=16, rng_seed=0, tolerance=1e-7):
    """Compare f(x, l_i(f)) with g(x, l_i(g)) along two independent runs.

    Returns the per-step maxima of the scaled difference and whether all stay
    under ``tolerance``. No shipped rule is expected to pass.
    """
    from .core import run_rule

    xs = _probes(pair, probes, rng_seed, None)
    tf = run_rule(rule, pair.f, theta0, steps, rng_seed)
    vecs = _initial_vectors(rule, pair.f, theta0)
    tg = run_rule(rule, pair.g, [pair.psi(v) for v in vecs], steps, rng_seed)
    res = []
    for sf, sg in zip(tf.steps, tg.steps):
        a = pair.f.value(xs, sf.theta_next)
        b = pair.g.value(xs, sg.theta_next)
        res.append(float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))))
    return res, bool(res) and max(res) < tolerance


@dataclass
class Theorem3Report:
    beta: float
    b_branch_roots: list
    c_branch_roots: list
    intersection: list
    scan_b_roots: list
    scan_c_roots: list
    scan_simultaneous: list
    max_root_residual: float

    @property
    def agrees(self) -> bool:
        def same(xs, ys):
            return len(xs) == len(ys) and all(abs(x - y) < 1e-3 for x, y in zip(sorted(xs), sorted(ys)))
        return (same(self.b_branch_roots, self.scan_b_roots)
                and same(self.c_branch_roots, self.scan_c_roots)
                and same(self.intersection, self.scan_simultaneous))

    @property
    def only_trivial(self) -> bool:
        return self.intersection == [0.0] and self.agrees


def _theorem3_coeffs(beta: float):
    """Coefficients of the two linear/quadratic equation pairs in a.

    b = A1 a + A2 a^2 with b^2/2 = Cb a^2, and
    c = B1 a + B2 a^2 with c^2/2 = Cc a^2.
    """
    e1, e2 = math.exp(beta), math.exp(2.0 * beta)
    b_lin = (e1, 0.5 * e1, 0.5 * e2)
    c_lin = (2.0 * e2, 2.0 * e2, 2.0 * e2 * e2)
    return b_lin, c_lin


def _branch_solutions(lin1, lin2, quad) -> list:
    """Solutions (a, y) of  y = lin1 a + lin2 a^2  and  y^2 / 2 = quad a^2.

    The second equation splits into y = +sqrt(2 quad) a or y = -sqrt(2 quad) a;
    substituting each sign into the first leaves a (lin2 a + lin1 -+ r) = 0.
    """
    r = math.sqrt(2.0 * quad)
    sols = {0.0: 0.0}
    for sign in (1.0, -1.0):
        a = -(lin1 - sign * r) / lin2
        a = round(a, 12) + 0.0
        sols[a] = sign * r * a
    return sorted(sols.items())


def _equation_residuals(a, y, lin1, lin2, quad) -> float:
    return max(abs(y - (lin1 * a + lin2 * a * a)), abs(0.5 * y * y - quad * a * a))


def _eliminated_residual(a, lin1, lin2, quad):
    """|y^2/2 - quad a^2| after substituting y = lin1 a + lin2 a^2."""
    y = lin1 * a + lin2 * a * a
    return np.abs(0.5 * y * y - quad * a * a)


def _scan_roots(res, grid, thresh):
    """Cluster contiguous grid points with residual below ``thresh``; one root per cluster."""
    below = res < thresh
    roots = []
    i = 0
    n = len(grid)
    while i < n:
        if below[i]:
            j = i
            while j + 1 < n and below[j + 1]:
                j += 1
            k = i + int(np.argmin(res[i:j + 1]))
            roots.append(float(grid[k]))
            i = j + 1
        else:
            i += 1
    return roots


def theorem3_verify(beta: float, lo: float = -8.0, hi: float = 8.0, step: float = 1e-4,
                    scan_tol: float = 1e-8) -> Theorem3Report:
    """Solve the b- and c-branch equations in a and confirm with a dense scan.

    The b-branch is b = e^beta (a + a^2/2), b^2/2 = a^2 e^(2 beta) / 2.
    The c-branch is c = 2a e^(2 beta) + 2a^2 e^(2 beta), c^2/2 = 2 a^2 e^(4 beta).
    """
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")
    (b1, b2, bq), (c1, c2, cq) = _theorem3_coeffs(beta)
    b_sols = _branch_solutions(b1, b2, bq)
    c_sols = _branch_solutions(c1, c2, cq)
    b_roots = [a for a, _ in b_sols]
    c_roots = [a for a, _ in c_sols]
    inter = [a for a in b_roots if any(abs(a - c) < 1e-10 for c in c_roots)]

    worst = 0.0
    for sols, (l1, l2, q) in ((b_sols, (b1, b2, bq)), (c_sols, (c1, c2, cq))):
        scale = max(1.0, l1, l2, q)
        for a, y in sols:
            worst = max(worst, _equation_residuals(a, y, l1, l2, q) / (scale * max(1.0, a * a) ** 2))

    grid = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    # scaled so each eliminated polynomial in a has unit leading coefficient
    rb = _eliminated_residual(grid, b1, b2, bq) / (0.5 * b2 * b2)
    rc = _eliminated_residual(grid, c1, c2, cq) / (0.5 * c2 * c2)
    scan_b = _scan_roots(rb, grid, scan_tol)
    scan_c = _scan_roots(rc, grid, scan_tol)
    scan_both = _scan_roots(np.maximum(rb, rc), grid, scan_tol)
    return Theorem3Report(beta, b_roots, c_roots, inter, scan_b, scan_c, scan_both, worst)


def collinearity(rho, varrho) -> float:
    """|cosine| between two sampled functions; 1 means rho = gamma * varrho."""
    rho = np.asarray(rho, dtype=float)
    varrho = np.asarray(varrho, dtype=float)
    denom = np.linalg.norm(rho) * np.linalg.norm(varrho)
    return float(abs(rho @ varrho) / denom) if denom > 0 else 1.0


@dataclass
class SecondOrderDemo:
    ran: bool
    message: str
    collinearity_g: float = float("nan")
    collinearity_h: float = float("nan")
    alphas: list = field(default_factory=list)
    first_order: list = field(default_factory=list)
    second_order: list = field(default_factory=list)
    trivial_second_order: float = float("nan")

    @property
    def halving_ratios(self) -> list:
        return [a / b for a, b in zip(self.second_order, self.second_order[1:]) if b > 0]


def second_order_demo(
    f: Optional[ParamFunction] = None,
    beta: float = 0.0,
    data=None,
    alphas=(0.08, 0.04, 0.02, 0.01),
    probes: int = 256,
    collinearity_threshold: float = 0.999,
    rng_seed: int = 0,
) -> SecondOrderDemo:
    """Naturalized gradient ascent on f, g = f(., ln t), h = f(., ln(t)/2).

    For each step size the first- and second-order covariance residuals of one
    step from beta are measured for both pairs (worst of the two). The metric
    is the Gram matrix of the normalized data measure, so the rule is the
    naturalized rule with a shared, covariant joint measure.
    """
    from .metric import MeasureGram
    from .naturalize import naturalize
    from .rules import LogLikelihoodAscent

    f = UnitGaussianMean() if f is None else f
    if f.param_dim != 1:
        return SecondOrderDemo(False, "needs a one-parameter function")
    pair_g, pair_h = theorem3_family(f)
    rng = np.random.default_rng(rng_seed)
    xs = f.sample_inputs(rng, probes)
    theta = np.array([beta])
    col_g = collinearity(pair_g.g.grad(xs, pair_g.psi(theta))[:, 0],
                         fd_hessian(lambda t: pair_g.g.grad(xs, t), pair_g.psi(theta))[:, 0, 0])
    col_h = collinearity(pair_h.g.grad(xs, pair_h.psi(theta))[:, 0],
                         fd_hessian(lambda t: pair_h.g.grad(xs, t), pair_h.psi(theta))[:, 0, 0])
    if max(col_g, col_h) >= collinearity_threshold:
        return SecondOrderDemo(False, "collinearity hypothesis violated", col_g, col_h)

    data = f.sample_inputs(np.random.default_rng(rng_seed + 1), 32) if data is None else np.asarray(data)
    demo = SecondOrderDemo(True, "", col_g, col_h)
    for alpha in alphas:
        rule = naturalize(LogLikelihoodAscent(data, alpha), MeasureGram(normalize=True))
        r1 = r2 = 0.0
        for pair in (pair_g, pair_h):
            r1 = max(r1, check_covariance(rule, pair, theta, 1, 1, probe_points=xs, rng_seed=rng_seed).max_residual)
            r2 = max(r2, check_covariance(rule, pair, theta, 2, 1, probe_points=xs, rng_seed=rng_seed).max_residual)
        demo.alphas.append(alpha)
        demo.first_order.append(r1)
        demo.second_order.append(r2)

    from .rules import FixedMeasureRule

    trivial = FixedMeasureRule()
    demo.trivial_second_order = max(
        check_covariance(trivial, p, theta, 2, 1, probe_points=xs).max_residual for p in (pair_g, pair_h)
    )
    return demo
