"""Acceptance battery. Each test appends one PASS/FAIL line that is printed
in the terminal summary; run directly with ``python3 tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from covlearn.calculus import penrose_residuals, pinv, fd_gradient_check
from covlearn.core import History, SignedMeasure, StepRandomness, run_rule, verify_congruence
from covlearn.covariance import check_covariance, theorem3_verify
from covlearn.experiments import (
    default_config,
    endpoint_spread,
    figure1,
    figure2,
    figure2_covariance,
    make_dataset,
    write_csv,
)
from covlearn.metric import ClosedFormMetric, MeasureGram, check_metric_transform, steepest_direction
from covlearn.models import GaussianModel, LinearFunction, gaussian_pair, shipped_functions, shipped_pairs
from covlearn.naturalize import direct_w_star, naturalize
from covlearn.rules import LogLikelihoodAscent, gaussian_mle

from oracles import brute_force_steepest, cosine


def record(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    conftest.ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_1_plain_gradient_ascent():
    with Clock() as c:
        runs = figure1(default_config("fig1"))
    gaps = {k: r.final_gap for k, r in runs.items()}
    ok = gaps[4] > 0.01 and gaps[1] < 0.01 and gaps[2] < 0.01 and c.elapsed <= 120
    detail = ", ".join(f"k={k} gap {g:.3g}" for k, g in gaps.items()) + f" nats/sample; {c.elapsed:.1f}s"
    assert record(1, ok, detail)


def test_2_naturalized_covariance():
    with Clock() as c:
        closed = figure2_covariance(default_config("fig2a", fisher_samples=0))
        sampled = figure2_covariance(default_config("fig2a"))
        runs = figure2(default_config("fig2a"))
    res_closed = max(max(r.identity_residuals + r.residuals) for r in closed.values())
    res_sampled = max(max(r.identity_residuals + r.residuals) for r in sampled.values())
    clean = all(r.diverged_at is None and not any(r.excluded) for r in (*closed.values(), *sampled.values()))
    spread = endpoint_spread(runs)
    ok = clean and res_closed < 1e-6 and res_sampled < 1e-3 and spread < 1e-2 and c.elapsed <= 60
    detail = (f"closed-form residual {res_closed:.2e}, 1000-sample residual {res_sampled:.2e}, "
              f"endpoint spread {spread:.2e} after 5000 iterations; {c.elapsed:.1f}s")
    assert record(2, ok, detail)


def test_3_negative_control():
    data = make_dataset(default_config("fig2a").data_seed, 100_000, 3.0, 9.0)
    rule = LogLikelihoodAscent(data, 0.05 / data.size)
    rep = check_covariance(rule, gaussian_pair(1, 4), [2.0, 2.0], steps=100, tolerance=1e-6)
    ident = max(rep.identity_residuals)
    ok = ident > 1e-2 and not rep.passed
    assert record(3, ok, f"plain GD k=1 vs k=4 identity residual {ident:.3g}")


def test_4_direct_w_star_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    with Clock() as c:
        for _ in range(100):
            n = int(rng.integers(1, 7))
            atoms = int(rng.integers(n, 11))
            f = LinearFunction(n)
            mu = SignedMeasure(rng.normal(size=(atoms, n)), rng.uniform(0.1, 2.0, atoms))
            beta = np.zeros(n)
            G = MeasureGram(normalize=False).matrix(f, beta, mu=mu)
            assert G.rank == n
            explicit = pinv(G) @ f.integrate_grad(mu, beta)
            w = direct_w_star(f, beta, mu)
            worst = max(worst, float(np.max(np.abs(w - explicit)) / max(1.0, np.max(np.abs(explicit)))))
    ok = worst < 1e-8 and c.elapsed <= 5
    assert record(4, ok, f"max deviation {worst:.2e} over 100 instances; {c.elapsed:.2f}s")


def test_5_three_equation_system():
    with Clock() as c:
        rep = theorem3_verify(0.3)
    ok = (rep.b_branch_roots == [-4.0, 0.0] and rep.c_branch_roots == [-2.0, 0.0]
          and rep.intersection == [0.0] and rep.agrees and c.elapsed <= 1)
    detail = (f"b {rep.b_branch_roots}, c {rep.c_branch_roots}, intersection {rep.intersection}, "
              f"scan {rep.scan_simultaneous}; {c.elapsed:.2f}s")
    assert record(5, ok, detail)


def test_6_steepest_direction():
    rng = np.random.default_rng(77)
    worst = 1.0
    with Clock() as c:
        for t in range(50):
            n = 2 if t % 2 == 0 else 3
            B = rng.normal(size=(n, n))
            G = B @ B.T + 0.5 * np.eye(n)
            x = rng.normal(size=n)
            d = steepest_direction(LinearFunction(n), x, np.zeros(n), G)
            best = brute_force_steepest(x, G, n_dirs=20_000 if n == 2 else 200_000, rng=rng)
            worst = min(worst, cosine(d, best))
    ok = worst > 0.999 and c.elapsed <= 10
    assert record(6, ok, f"min cosine {worst:.6f} over 50 instances; {c.elapsed:.2f}s")


def _property_suites(small_data, tmp):
    out = {}
    rng = np.random.default_rng(9)
    pen = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 8))
        B = rng.normal(size=(n, int(rng.integers(1, n + 1))))
        M = B @ B.T
        pen = max(pen, max(penrose_residuals(M, pinv(M))))
    out["penrose"] = (pen, pen < 1e-8)

    jac = prop2 = 0.0
    for pair in shipped_pairs():
        rep = verify_congruence(pair)
        jac = max(jac, rep.jacobian_residual if rep.passed else np.inf)
        prop2 = max(prop2, check_metric_transform(pair))
    out["jacobian"] = (jac, jac < 1e-8)
    out["metric transform"] = (prop2, prop2 < 1e-8)

    fd = max(fd_gradient_check(f) for f in shipped_functions())
    out["finite differences"] = (fd, fd < 1e-4)

    mu, var = gaussian_mle(small_data)
    fixed = 0.0
    for k in (1, 2, 3, 4):
        theta = np.array([mu, var ** (k / 2)])
        for rule in (LogLikelihoodAscent(small_data, 1e-3),
                     naturalize(LogLikelihoodAscent(small_data, 1e-3), ClosedFormMetric())):
            step, _ = rule.step(1, GaussianModel(k), History([theta]), 0)
            fixed = max(fixed, float(np.max(np.abs(step.theta_next - theta) / np.maximum(1.0, np.abs(theta)))))
    out["MLE fixed point"] = (fixed, fixed < 1e-10)

    atoms = 0.0
    rule = LogLikelihoodAscent(small_data, 1e-3)
    for pair in (gaussian_pair(1, 2), gaussian_pair(1, 4), gaussian_pair(1, 3, "density")):
        traj = run_rule(rule, pair.f, [2.0, 2.0], 5)
        hist = History(list(traj.theta0))
        for i, step in enumerate(traj.steps, start=1):
            rand = StepRandomness(0, i)
            mf = rule.measure(i, pair.f, hist, step.beta, rand)
            mg = rule.measure(i, pair.g, hist.mapped(pair.psi), pair.psi(step.beta), rand)
            if not np.array_equal(mf.points, mg.points):
                atoms = np.inf
            atoms = max(atoms, float(np.max(np.abs(mf.weights - mg.weights) / np.abs(mf.weights))))
            hist.append(step.theta_next)
    out["measure covariance"] = (atoms, atoms < 1e-10)

    cfg = default_config("fig2d", n_data=300, iterations=60, subsample=5)
    data = make_dataset(4, 300, 3.0, 9.0)
    a = write_csv(tmp / "a.csv", "fig2d", figure2(cfg, data=data)).read_bytes()
    b = write_csv(tmp / "b.csv", "fig2d", figure2(cfg, data=data)).read_bytes()
    out["rerun determinism"] = (0.0 if a == b else 1.0, a == b)
    return out


def test_7_property_suites(small_data, tmp_path):
    out = _property_suites(small_data, Path(tmp_path))
    ok = all(passed for _, passed in out.values())
    detail = ", ".join(f"{name} {'ok' if passed else 'FAILED'} ({v:.1e})" for name, (v, passed) in out.items())
    assert record(7, ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
