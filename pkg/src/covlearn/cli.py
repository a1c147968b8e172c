"""Command-line entry point.

Subcommands: figure1, figure2, covariance, theorem3, selfcheck. Exit codes:
0 success, 1 failed check (or divergence under ``--strict``), 2 bad flags,
3 unwritable output.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import fd_gradient_check, penrose_residuals, pinv
from .core import verify_congruence
from .covariance import check_covariance, theorem3_verify
from .experiments import (
    ExperimentConfig,
    default_config,
    figure1,
    figure2,
    make_dataset,
    write_csv,
    write_metadata,
)
from .metric import ClosedFormMetric, MeasureGram, SampledFisher, check_metric_transform
from .models import GaussianModel, shipped_functions, shipped_pairs
from .naturalize import naturalize
from .rules import LogLikelihoodAscent

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_OUTPUT = 0, 1, 2, 3
RULES = ("plain-gd", "naturalized-gd", "naturalized-wstar")

_CONFIG_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


class UsageError(Exception):
    pass


def _k_list(text: str) -> tuple:
    try:
        ks = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers, got {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("--k needs positive integers")
    return ks


def _variant(text: str) -> str:
    v = text if text.startswith("fig") else f"fig2{text}"
    if v not in {f"fig2{c}" for c in "abcdef"}:
        raise argparse.ArgumentTypeError(f"--variant must be one of a..f, got {text!r}")
    return v


def _coerce(key: str, value: str):
    default = _CONFIG_FIELDS[key].default
    if key == "k_list":
        return _k_list(value)
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"{key} expects a boolean, got {value!r}")
    try:
        return type(default)(value)
    except ValueError:
        raise UsageError(f"{key} expects {type(default).__name__}, got {value!r}")


def read_config_file(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment. Keys are
    ExperimentConfig field names (dashes allowed; ``k`` means ``k_list``)."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}")
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        key = "k_list" if key == "k" else key
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value file; flags take precedence")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--run-seed", type=int)
    p.add_argument("--n-data", type=int)
    p.add_argument("--alpha", type=float, help="step size for the mean gradient (per-sample weight alpha/n)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--k", type=_k_list, dest="k_list", metavar="LIST", help="comma-separated powers, e.g. 1,2,3,4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"covlearn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p1 = sub.add_parser("figure1", help="plain gradient ascent for each k")
    _experiment_flags(p1)
    p1.add_argument("--out", default="results", metavar="PATH")
    p1.add_argument("--full-resolution", action="store_true", default=None)
    p1.add_argument("--strict", action="store_true", help="exit 1 if any run diverges")

    p2 = sub.add_parser("figure2", help="naturalized gradient ascent for each k")
    _experiment_flags(p2)
    p2.add_argument("--out", default="results", metavar="PATH")
    p2.add_argument("--variant", type=_variant, default="fig2a", help="a..f")
    p2.add_argument("--fisher-samples", type=int, help="0 selects the closed form")
    p2.add_argument("--fisher-source", choices=("model", "uniform"))
    p2.add_argument("--mode", choices=("pinv", "wstar", "two-timescale"), help="estimator for variant f")
    p2.add_argument("--full-resolution", action="store_true", default=None)
    p2.add_argument("--strict", action="store_true", help="exit 1 if any run diverges")

    p3 = sub.add_parser("covariance", help="per-step covariance check on a Gaussian pair")
    _experiment_flags(p3)
    p3.add_argument("--rule", choices=RULES, default="naturalized-gd")
    p3.add_argument("--pair", default="gaussian-k1-k4", help="gaussian[-density]-kA-kB")
    p3.add_argument("--order", type=int, choices=(1, 2), default=1)
    p3.add_argument("--tolerance", type=float, default=1e-6)
    p3.add_argument("--fisher-samples", type=int, help="0 selects the closed form")
    p3.add_argument("--fisher-source", choices=("model", "uniform"))

    p4 = sub.add_parser("theorem3", help="solve the branch equations and scan")
    p4.add_argument("--beta", type=float, default=0.3)

    sub.add_parser("selfcheck", help="gradient, pseudoinverse, congruence and branch-equation checks")
    return parser


def resolve_config(args, variant: str, **forced) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    values.pop("variant", None)
    for name in _CONFIG_FIELDS:
        if name == "variant":
            continue
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    values.update(forced)
    try:
        return default_config(variant, **values)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err))


def print_config(config: ExperimentConfig, out=None) -> None:
    out = sys.stdout if out is None else out
    print("resolved config:", file=out)
    for key, value in config.metadata().items():
        print(f"  {key} = {value}", file=out)


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryFile(dir=out):
            pass
    except OSError as err:
        raise PermissionError(f"output path {out} is not writable: {err}")
    return out


def cmd_figure1(args) -> int:
    config = resolve_config(args, "fig1")
    print_config(config)
    out = _prepare_out(args.out)
    t0 = time.perf_counter()
    runs = figure1(config)
    extra = {}
    for k, run in runs.items():
        write_csv(out / f"fig1_k{k}.csv", "fig1", {k: run})
        hit = "never" if run.first_within is None else run.first_within
        print(f"k={k}: final gap {run.final_gap:.4g} nats/sample, gap < 0.01 first at iteration {hit}"
              + (f", diverged at {run.diverged_at}" if run.diverged_at else ""))
        extra[f"k{k}_final_gap"] = run.final_gap
        extra[f"k{k}_first_within_0.01"] = hit
        extra[f"k{k}_diverged_at"] = run.diverged_at
    write_metadata(out / "fig1_metadata.txt", config, extra)
    print(f"wrote {len(runs)} curves to {out} in {time.perf_counter() - t0:.1f}s")
    diverged = any(r.diverged_at for r in runs.values())
    return EXIT_FAIL if diverged and args.strict else EXIT_OK


def cmd_figure2(args) -> int:
    config = resolve_config(args, args.variant)
    print_config(config)
    out = _prepare_out(args.out)
    t0 = time.perf_counter()
    runs = figure2(config)
    v = config.variant
    extra = {}
    for k, run in runs.items():
        write_csv(out / f"{v}_k{k}.csv", v, {k: run})
        fin = run.final
        status = f"diverged at {run.trajectory.diverged_at}" if run.trajectory.diverged else "ok"
        print(f"k={k}: final mu {fin.mu:.6f}, sigma^2 {fin.sigma_sq:.6f} ({status})")
        extra[f"k{k}_diverged_at"] = run.trajectory.diverged_at
    write_metadata(out / f"{v}_metadata.txt", config, extra)
    print(f"wrote {len(runs)} curves to {out} in {time.perf_counter() - t0:.1f}s")
    diverged = any(r.trajectory.diverged for r in runs.values())
    return EXIT_FAIL if diverged and args.strict else EXIT_OK


def _gaussian_pairs() -> dict:
    return {p.label: p for p in shipped_pairs() if isinstance(p.f, GaussianModel)}


def cmd_covariance(args) -> int:
    pairs = _gaussian_pairs()
    if args.pair not in pairs:
        raise UsageError(f"unknown pair {args.pair!r}; choose from {', '.join(sorted(pairs))}")
    pair = pairs[args.pair]
    density = pair.f.is_density
    forced = dict(f_mode=pair.f.mode)
    if args.iterations is None:
        forced["iterations"] = 100
    if args.fisher_samples is None:
        forced["fisher_samples"] = 1000 if density else 0
    if args.alpha is None:
        forced["alpha"] = 0.002 if density else 0.05
    if args.rule == "naturalized-wstar":
        config = resolve_config(args, "fig2f", **forced, mode="wstar")
    else:
        config = resolve_config(args, "fig2a", **forced)
    print_config(config)
    print(f"  rule = {args.rule}\n  pair = {pair.label}\n  order = {args.order}\n  tolerance = {args.tolerance}")
    data = make_dataset(config.data_seed, config.n_data, config.true_mu, config.true_var)
    base = LogLikelihoodAscent(data, config.alpha / len(data))
    if args.rule == "plain-gd":
        rule = base
    elif args.rule == "naturalized-wstar":
        rule = naturalize(base, MeasureGram(normalize=True), "wstar")
    elif config.fisher_samples == 0:
        rule = naturalize(base, ClosedFormMetric())
    else:
        rule = naturalize(base, SampledFisher(config.fisher_samples, config.fisher_source))
    theta0 = np.array([config.start_mu, config.start_var ** (pair.f.k / 2.0)])
    report = check_covariance(rule, pair, theta0, order=args.order, steps=config.iterations,
                              rng_seed=config.run_seed, tolerance=args.tolerance)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_theorem3(args) -> int:
    print(f"resolved config:\n  beta = {args.beta}")
    rep = theorem3_verify(args.beta)
    print(f"b-branch roots: {rep.b_branch_roots}")
    print(f"c-branch roots: {rep.c_branch_roots}")
    print(f"intersection: {rep.intersection}")
    print(f"dense scan: b {rep.scan_b_roots}, c {rep.scan_c_roots}, both {rep.scan_simultaneous}")
    print(f"max root residual: {rep.max_root_residual:.3g}")
    ok = rep.only_trivial
    print("PASS: only a = 0 satisfies both branches" if ok else "FAIL: scan and algebra disagree")
    return EXIT_OK if ok else EXIT_FAIL


def _penrose_suite(trials: int = 50, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        n = int(rng.integers(1, 7))
        r = int(rng.integers(0, n + 1)) if t % 2 else n
        B = rng.normal(size=(n, r))
        M = B @ B.T
        worst = max(worst, max(penrose_residuals(M, pinv(M))) if r else 0.0)
    return worst


def cmd_selfcheck(args) -> int:
    print("resolved config:\n  (selfcheck has no options)")
    t0 = time.perf_counter()
    results = []

    def record(name, value, tol):
        report(name, bool(value < tol), f"{value:.3g} (< {tol:g})")

    def report(name, ok, detail):
        results.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    for f in shipped_functions():
        record(f"gradient check {f.label}", fd_gradient_check(f), 1e-4)
    record("Penrose conditions on random PSD matrices", _penrose_suite(), 1e-8)
    for pair in shipped_pairs():
        rep = verify_congruence(pair)
        record(f"Jacobian property {pair.label}", max(rep.value_residual, rep.jacobian_residual), 1e-8)
        record(f"metric transform {pair.label}", check_metric_transform(pair), 1e-8)
    rep = theorem3_verify(0.3)
    report("branch equations admit only a = 0", rep.only_trivial,
           f"roots {rep.b_branch_roots} and {rep.c_branch_roots}, intersection {rep.intersection}")
    print(f"{sum(results)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all(results) else EXIT_FAIL


COMMANDS = {
    "figure1": cmd_figure1,
    "figure2": cmd_figure2,
    "covariance": cmd_covariance,
    "theorem3": cmd_theorem3,
    "selfcheck": cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"covlearn: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PermissionError as err:
        print(f"covlearn: error: {err}", file=sys.stderr)
        return EXIT_OUTPUT


if __name__ == "__main__":
    sys.exit(main())
