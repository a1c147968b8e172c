"""Gaussian reparameterization experiments: plain gradient ascent under
(mu, sigma**k) for several k, and naturalized variants of it."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import __version__
from .core import run_rule
from .core import CongruentPair
from .covariance import check_covariance_many
from .metric import ClosedFormMetric, MeasureGram, SampledFisher
from .models import GaussianModel, power_submersion
from .naturalize import naturalize
from .rules import DataSummary, LogLikelihoodAscent, gaussian_loglik_gd_step

__all__ = [
    "VARIANTS",
    "DEFAULT_DATA_SEED",
    "DEFAULT_RUN_SEED",
    "ExperimentConfig",
    "default_config",
    "TrajectoryRecord",
    "make_dataset",
    "loglik_per_sample",
    "figure1",
    "figure2",
    "figure2_rule",
    "figure2_covariance",
    "endpoint_spread",
    "write_csv",
    "write_metadata",
    "CSV_HEADER",
]

VARIANTS = ("fig1", "fig2a", "fig2b", "fig2c", "fig2d", "fig2e", "fig2f")
CSV_HEADER = ("variant", "k", "iteration", "mu", "sigma_sq", "loglik_per_sample", "diverged")

DEFAULT_DATA_SEED = 20160229
DEFAULT_RUN_SEED = 7


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one experiment.

    ``alpha`` is the step size for the mean gradient: every datum gets weight
    ``alpha / n_data`` in the rule's measure, so ``alpha = 0.001`` is the
    ``.001/n`` per-sample step of the plain experiment.
    ``fisher_samples = 0`` selects the closed-form Fisher information.
    """

    variant: str = "fig1"
    data_seed: int = DEFAULT_DATA_SEED
    run_seed: int = DEFAULT_RUN_SEED
    n_data: int = 100_000
    true_mu: float = 3.0
    true_var: float = 9.0
    start_mu: float = 2.0
    start_var: float = 4.0
    k_list: tuple = (1, 2, 3, 4)
    iterations: int = 200_000
    alpha: float = 0.001
    fisher_samples: int = 0
    fisher_source: str = "model"
    f_mode: str = "log_density"
    mode: str = "pinv"
    secondary_alpha: float = 0.01
    subsample: int = 100
    full_resolution: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n_data < 1:
            raise ValueError("n_data must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.fisher_source not in ("model", "uniform"):
            raise ValueError("fisher_source must be 'model' or 'uniform'")
        if self.f_mode not in ("log_density", "density"):
            raise ValueError("f_mode must be 'log_density' or 'density'")
        if self.mode not in ("pinv", "wstar", "two-timescale"):
            raise ValueError("mode must be pinv, wstar or two-timescale")
        if self.fisher_samples < 0:
            raise ValueError("fisher_samples must be >= 0")
        if self.mode != "pinv" and self.variant != "fig2f":
            raise ValueError(f"mode {self.mode!r} applies only to variant fig2f")
        if self.fisher_samples == 0 and self.f_mode == "density" and self.variant not in ("fig1", "fig2f"):
            raise ValueError("the closed-form metric exists only for the log-density")
        if self.start_var <= 0 or self.true_var <= 0:
            raise ValueError("variances must be positive")
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))

    def metadata(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["k_list"] = ",".join(str(k) for k in self.k_list)
        return out


_FIG2_DEFAULTS = {
    "fig2a": dict(f_mode="log_density", fisher_samples=1000, fisher_source="model", alpha=0.05),
    # the density metric is roughly E[p^2] times the Fisher information, so
    # the same alpha moves much further; these keep every k stable
    "fig2b": dict(f_mode="density", fisher_samples=1000, fisher_source="model", alpha=0.002),
    "fig2c": dict(f_mode="density", fisher_samples=100, fisher_source="model", alpha=0.002),
    "fig2d": dict(f_mode="density", fisher_samples=5, fisher_source="model", alpha=0.001),
    "fig2e": dict(f_mode="density", fisher_samples=1000, fisher_source="uniform", alpha=0.002),
    "fig2f": dict(f_mode="log_density", fisher_samples=0, mode="wstar", alpha=0.05),
}


def default_config(variant: str = "fig1", **overrides) -> ExperimentConfig:
    """Documented defaults for a variant, with keyword overrides applied last."""
    if variant == "fig1":
        base = dict(variant="fig1", iterations=200_000, alpha=0.001)
    elif variant in _FIG2_DEFAULTS:
        base = dict(variant=variant, iterations=5000, **_FIG2_DEFAULTS[variant])
    else:
        raise ValueError(f"unknown variant {variant!r}")
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass(frozen=True)
class TrajectoryRecord:
    iteration: int
    k: int
    mu: float
    sigma_sq: float
    loglik_per_sample: float
    diverged: bool = False


def make_dataset(seed: int, n: int, mu: float, var: float) -> np.ndarray:
    """n draws from N(mu, var) by inverse CDF.

    Uniforms are ``(j + 0.5) / 2**53`` for integers j from PCG64 seeded with
    ``seed``, so they never hit 0 or 1.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    u = (rng.integers(0, 2 ** 53, size=n, dtype=np.int64).astype(np.float64) + 0.5) / 2.0 ** 53
    return mu + math.sqrt(var) * ndtri(u)


def loglik_per_sample(summary: DataSummary, mu: float, sigma_sq: float) -> float:
    off = summary.mean - mu
    return -0.5 * math.log(2 * math.pi * sigma_sq) - (summary.m2 / summary.n + off * off) / (2 * sigma_sq)


def _record(summary, it, k, mu, s, diverged=False) -> TrajectoryRecord:
    if diverged or not (s > 0 and math.isfinite(s) and math.isfinite(mu)):
        return TrajectoryRecord(it, k, mu, float("nan"), float("nan"), True)
    var = s ** (2.0 / k)
    return TrajectoryRecord(it, k, mu, var, loglik_per_sample(summary, mu, var), False)


@dataclass
class Figure1Run:
    k: int
    records: list
    final_gap: float
    first_within: Optional[int]
    diverged_at: Optional[int] = None


def figure1(config: ExperimentConfig, gap_threshold: float = 0.01, data=None) -> dict:
    """Plain gradient ascent for each k. Returns ``{k: Figure1Run}``.

    ``first_within`` is the first iteration whose log-likelihood gap to the
    data MLE drops below ``gap_threshold`` nats per sample.
    """
    data = make_dataset(config.data_seed, config.n_data, config.true_mu, config.true_var) if data is None else data
    summary = DataSummary.of(data)
    best = loglik_per_sample(summary, summary.mean, summary.m2 / summary.n)
    alpha = config.alpha / summary.n
    every = 1 if config.full_resolution else config.subsample
    out = {}
    for k in config.k_list:
        theta = np.array([config.start_mu, math.sqrt(config.start_var) ** k])
        records = [_record(summary, 0, k, theta[0], theta[1])]
        first = None
        diverged_at = None
        for i in range(1, config.iterations + 1):
            theta = gaussian_loglik_gd_step(theta, summary, alpha, k)
            mu, s = float(theta[0]), float(theta[1])
            if not (s > 0 and math.isfinite(s) and math.isfinite(mu)):
                diverged_at = i
                records.append(_record(summary, i, k, mu, s, True))
                break
            if first is None:
                var = s ** (2.0 / k)
                if best - loglik_per_sample(summary, mu, var) < gap_threshold:
                    first = i
            if i % every == 0 or i == config.iterations:
                records.append(_record(summary, i, k, mu, s))
        last = records[-1]
        gap = best - last.loglik_per_sample if not last.diverged else float("inf")
        out[k] = Figure1Run(k, records, gap, first, diverged_at)
    return out


def figure2_rule(config: ExperimentConfig, data):
    """The naturalized rule of a Figure-2 variant.

    fig2f uses the normalized Gram matrix of the rule's own measure; its
    ``mode`` picks the estimator (explicit pinv, direct w*, two-timescale).
    The other variants use the Fisher information, closed-form when
    ``fisher_samples == 0``.
    """
    base = LogLikelihoodAscent(data, config.alpha / len(data))
    if config.variant == "fig2f":
        metric = MeasureGram(normalize=True)
    elif config.fisher_samples == 0:
        metric = ClosedFormMetric()
    else:
        metric = SampledFisher(config.fisher_samples, config.fisher_source)
    secondary = config.secondary_alpha if config.mode == "two-timescale" else None
    return naturalize(base, metric, config.mode, secondary)


def _start(config, k) -> np.ndarray:
    return np.array([config.start_mu, math.sqrt(config.start_var) ** k])


@dataclass
class Figure2Run:
    k: int
    records: list
    trajectory: object = field(repr=False, default=None)

    @property
    def final(self) -> TrajectoryRecord:
        return self.records[-1]


def figure2(config: ExperimentConfig, data=None) -> dict:
    """Naturalized gradient ascent for each k, all runs sharing ``run_seed``."""
    data = make_dataset(config.data_seed, config.n_data, config.true_mu, config.true_var) if data is None else data
    summary = DataSummary.of(data)
    rule = figure2_rule(config, data)
    every = 1 if config.full_resolution else config.subsample
    out = {}
    for k in config.k_list:
        f = GaussianModel(k, config.f_mode)
        theta0 = _start(config, k)
        traj = run_rule(rule, f, theta0, config.iterations, config.run_seed)
        records = [_record(summary, 0, k, theta0[0], theta0[1])]
        for i, step in enumerate(traj.steps, start=1):
            if i % every == 0 or i == config.iterations:
                records.append(_record(summary, i, k, step.theta_next[0], step.theta_next[1]))
        if traj.diverged:
            last = traj.steps[-1].theta_next if traj.steps else theta0
            records.append(_record(summary, traj.diverged_at, k, last[0], last[1], True))
        out[k] = Figure2Run(k, records, traj)
    return out


def endpoint_spread(runs: dict) -> float:
    """Largest across-k range of final mu or sigma^2."""
    finals = [r.final for r in runs.values()]
    if any(f.diverged for f in finals):
        return float("inf")
    mus = [f.mu for f in finals]
    vs = [f.sigma_sq for f in finals]
    return max(max(mus) - min(mus), max(vs) - min(vs))


def figure2_covariance(config: ExperimentConfig, steps: Optional[int] = None, probes: int = 16,
                       data=None, shared_randomness: bool = True) -> dict:
    """Per-step first-order covariance of the variant's rule, k=1 against each k.

    Returns ``{k: CovarianceReport}`` for every k other than the reference
    k = 1 (the self-pair is compared only without shared randomness). With
    ``shared_randomness=False`` the g side uses a different seed for its
    metric estimate.
    """
    data = make_dataset(config.data_seed, config.n_data, config.true_mu, config.true_var) if data is None else data
    rule = figure2_rule(config, data)
    steps = config.iterations if steps is None else steps
    f = GaussianModel(1, config.f_mode)
    ks = [k for k in config.k_list if k != 1 or not shared_randomness]
    pairs = [CongruentPair(f, GaussianModel(k, config.f_mode), power_submersion(1, k), f"gaussian-k1-k{k}")
             for k in ks]
    rule_g = None if shared_randomness else _ReseededRule(rule, config.run_seed + 1)
    reports = check_covariance_many(rule, pairs, _start(config, 1), order=1, steps=steps, probes=probes,
                                    rng_seed=config.run_seed, tolerance=1e-6, rule_g=rule_g) if pairs else []
    return dict(zip(ks, reports))


class _ReseededRule:
    """Delegates to a rule but feeds it a different seed."""

    def __init__(self, rule, seed):
        self.rule = rule
        self.seed = seed
        self.iota = rule.iota

    def initial_state(self):
        return self.rule.initial_state()

    def step(self, i, f, history, seed, state=None):
        return self.rule.step(i, f, history, self.seed, state)


def write_csv(path, variant: str, runs: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in sorted(runs):
            for r in runs[k].records:
                w.writerow([variant, r.k, r.iteration, repr(float(r.mu)), repr(float(r.sigma_sq)),
                            repr(float(r.loglik_per_sample)), int(r.diverged)])
    return path


def write_metadata(path, config: ExperimentConfig, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    items = dict(config.metadata())
    items["library_version"] = __version__
    if extra:
        items.update(extra)
    path.write_text("".join(f"{key}={value}\n" for key, value in items.items()))
    return path
