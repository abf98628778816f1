"""Command-line experiment runner.

Writes one JSON report (stdout or ``--out``) and a short summary on stderr.
Exit codes: 0 success, 1 bad configuration, 2 bad or insufficient data,
3 infeasible plan.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .binary import BinaryPlan, answer_binary_queries, plan_binary
from .core import (
    BOTTOM,
    EXHAUSTED,
    DataFormatError,
    Dataset,
    InsufficientDataError,
    NoiseSource,
    ParameterError,
    PlanInfeasibleError,
    PrivacyParams,
    child_seed,
)
from .label_private import transfer_from_labels, write_dataset_csv
from .learners import (
    DistributionSampler,
    SgdConfig,
    get_learner,
    logistic_sgd_learner,
    margin_conditional_sampler,
    margin_sampler,
    threshold_sampler,
)
from .oqr import oqr_open
from .softlabel import (
    SlcAux,
    a_prvlearn,
    a_slc,
    slc_k,
    snap_gamma,
    soft_accuracy_bound,
    soft_gamma_raw,
)
from .subsample import compute_k
from .stability_lab import concentration_check, estimate_on_avg_stability, quality_probe

SCHEMA = 1
PIPELINES = ("binary-queries", "label-transfer", "soft-label", "stability-probe")
GENERATORS = ("threshold", "margin", "margin-conditional")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PLAN = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ ingestion


def _parse_row(row: List[str], lineno: int) -> List[float]:
    try:
        return [float(v) for v in row]
    except ValueError:
        raise DataFormatError(f"line {lineno}: non-numeric value in {row!r}") from None


def _read_rows(path) -> List[tuple]:
    """(1-based line number, fields) for non-blank lines; a non-numeric first line is a header."""
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(v) for v in rows[0][1]]
        except ValueError:
            rows = rows[1:]
    return rows


def ingest_csv(path) -> Dataset:
    """Rows of comma-separated reals with a 0/1 label last; optional header line."""
    width = None
    X, y = [], []
    for lineno, row in _read_rows(path):
        vals = _parse_row(row, lineno)
        if len(vals) < 2:
            raise DataFormatError(f"line {lineno}: need at least one feature and a label")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataFormatError(f"line {lineno}: expected {width} columns, got {len(vals)}")
        if vals[-1] not in (0.0, 1.0):
            raise DataFormatError(f"line {lineno}: label must be 0 or 1, got {row[-1]!r}")
        if not all(math.isfinite(v) for v in vals[:-1]):
            raise DataFormatError(f"line {lineno}: features must be finite")
        X.append(vals[:-1])
        y.append(int(vals[-1]))
    if not X:
        return Dataset.empty()
    return Dataset(np.array(X), np.array(y, dtype=np.int64))


def ingest_queries(path) -> np.ndarray:
    """One feature vector per line, no label column."""
    width = None
    Q = []
    for lineno, row in _read_rows(path):
        vals = _parse_row(row, lineno)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataFormatError(f"line {lineno}: expected {width} columns, got {len(vals)}")
        Q.append(vals)
    if not Q:
        raise DataFormatError(f"{path}: no queries")
    return np.array(Q, dtype=float)


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    pipeline: str
    data: Optional[str] = None
    generator: Optional[str] = None
    n: int = 20_000
    theta_star: float = 0.5
    noise_rate: float = 0.0
    margin_c: float = 1.0
    x0: Optional[float] = None
    learner: str = "threshold-erm"
    sgd_step: float = 1.0
    epsilon: float = 1.0
    delta: float = 1e-5
    cutoff: Optional[int] = None
    alpha: Optional[float] = None
    gamma_opt: float = 0.0
    beta: float = 0.05
    gamma_disc: Optional[float] = None
    nu: float = 0.0
    queries: Optional[str] = None
    num_queries: int = 100
    probe_x: Optional[List[float]] = None
    trials: int = 1000
    pilot_models: int = 200
    export_csv: Optional[str] = None
    seed: int = 0
    threads: int = 1
    test_mode: bool = False
    override_k: Optional[int] = None
    override_lambda: Optional[float] = None
    override_w: Optional[float] = None
    zero_noise: bool = False
    out: Optional[str] = None

    def validate(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if (self.data is None) == (self.generator is None):
            raise ConfigError("give exactly one of --data or --generator")
        if self.generator is not None and self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.pipeline == "stability-probe" and self.generator is None:
            raise ConfigError("stability-probe needs a --generator")
        overrides = self.overrides()
        if overrides and not self.test_mode:
            raise ConfigError(f"{', '.join(sorted(overrides))} require --test-mode")
        if self.n < 1 or self.num_queries < 1 or self.threads < 1:
            raise ConfigError("n, num-queries and threads must be positive")

    def overrides(self) -> Dict[str, Any]:
        out = {}
        for name in ("override_k", "override_lambda", "override_w"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.zero_noise:
            out["zero_noise"] = True
        return out

    def learner_handle(self):
        if self.learner == "logistic-sgd":
            return logistic_sgd_learner(SgdConfig(step_c=self.sgd_step))
        return get_learner(self.learner)

    def sampler(self) -> Optional[DistributionSampler]:
        if self.generator == "threshold":
            return threshold_sampler(self.theta_star, self.noise_rate)
        if self.generator == "margin":
            return margin_sampler(self.margin_c)
        if self.generator == "margin-conditional":
            return margin_conditional_sampler(self.margin_c, self.margin_c if self.x0 is None else self.x0)
        return None

    def noise(self) -> NoiseSource:
        return NoiseSource.zero() if self.zero_noise else NoiseSource.seeded(child_seed(self.seed, 0x401))


@dataclass
class RunReport:
    config: Dict[str, Any]
    resolved: Dict[str, Any]
    answers: list
    counts: Dict[str, int]
    budget_trace: list
    metrics: Dict[str, Any]
    test_mode_overrides: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__
    schema: int = SCHEMA

    def to_dict(self, include_wall_time: bool = True) -> Dict[str, Any]:
        d = asdict(self)
        if not include_wall_time:
            d.pop("wall_time")
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), sort_keys=True, indent=2, allow_nan=False)


def _config_echo(cfg: ExperimentConfig) -> Dict[str, Any]:
    d = asdict(cfg)
    d.pop("out", None)
    return d


def _load(cfg: ExperimentConfig):
    sampler = cfg.sampler()
    if cfg.data is not None:
        try:
            data = ingest_csv(cfg.data)
        except OSError as exc:
            raise DataFormatError(f"cannot read {cfg.data}: {exc}") from None
    else:
        data = sampler(cfg.n, child_seed(cfg.seed, 1))
    return data, sampler


def _queries(cfg: ExperimentConfig, sampler) -> np.ndarray:
    if cfg.queries is not None:
        try:
            return ingest_queries(cfg.queries)
        except OSError as exc:
            raise DataFormatError(f"cannot read {cfg.queries}: {exc}") from None
    if sampler is None:
        raise ConfigError("--queries is required with --data")
    return sampler(cfg.num_queries, child_seed(cfg.seed, 2)).X


def _encode(a) -> Any:
    if a is BOTTOM:
        return "bottom"
    if a is EXHAUSTED:
        return "exhausted"
    return int(a)


def _bayes_labels(sampler: Optional[DistributionSampler], Q: np.ndarray) -> Optional[np.ndarray]:
    if sampler is None or sampler.label_conditional is None:
        return None
    return (np.asarray(sampler.label_conditional(Q[:, 0])) >= 0.5).astype(np.int64)


def _binary_plan(cfg: ExperimentConfig, m: int) -> BinaryPlan:
    if cfg.cutoff is not None:
        if not 1 <= cfg.cutoff < m:
            raise PlanInfeasibleError(f"cutoff {cfg.cutoff} must lie in [1, m={m})")
        k = compute_k(m, cfg.cutoff, cfg.epsilon, cfg.delta, cfg.beta / 2.0)
        plan = BinaryPlan(m, cfg.alpha or 0.0, cfg.gamma_opt, cfg.beta, cfg.cutoff, k, cfg.epsilon, cfg.delta)
    else:
        if cfg.alpha is None:
            raise ConfigError("binary pipelines need --alpha or --cutoff")
        plan = plan_binary(m, cfg.alpha, cfg.gamma_opt, cfg.beta, cfg.epsilon, cfg.delta)
    if cfg.override_k is not None:
        plan = plan.with_k(cfg.override_k)
    return plan


def _run_binary(cfg: ExperimentConfig, transfer: bool) -> RunReport:
    data, sampler = _load(cfg)
    Q = _queries(cfg, sampler)
    m = Q.shape[0]
    plan = _binary_plan(cfg, m)
    params = plan.privacy_params()
    noise = cfg.noise()
    session = oqr_open(params, noise, lambda_=cfg.override_lambda, threshold_w=cfg.override_w)
    if len(data) < plan.k:
        raise InsufficientDataError(f"n={len(data)} cannot feed k={plan.k} chunks")
    learner = cfg.learner_handle()
    answers = answer_binary_queries(
        data, learner, Q, plan, params, noise, seed=child_seed(cfg.seed, 3), threads=cfg.threads, session=session
    )
    trace, c = [], 0
    for i, a in enumerate(answers):
        if a is BOTTOM:
            c += 1
            trace.append({"query": i, "counter": c})
    counts = {
        "answered": sum(1 for a in answers if a in (0, 1)),
        "bottom": sum(1 for a in answers if a is BOTTOM),
        "exhausted": sum(1 for a in answers if a is EXHAUSTED),
    }
    metrics: Dict[str, Any] = {}
    truth = _bayes_labels(sampler, Q)
    if truth is not None:
        wrong = sum(1 for a, t in zip(answers, truth) if a in (0, 1) and a != t)
        metrics["wrong_answers"] = wrong
        metrics["answered_error_rate"] = wrong / counts["answered"] if counts["answered"] else 0.0
        metrics["misclassification_rate"] = (wrong + counts["bottom"] + counts["exhausted"]) / m
    if transfer:
        report = transfer_from_labels(
            Q,
            answers,
            learner,
            child_seed(cfg.seed, 4),
            holdout=sampler,
            holdout_seed=child_seed(cfg.seed, 5),
        )
        metrics["randomized_labels"] = report.randomized_count
        if report.holdout_error is not None:
            metrics["holdout_error"] = report.holdout_error
        if cfg.export_csv:
            write_dataset_csv(report.relabeled_set, cfg.export_csv)
    resolved = {
        "m": m,
        "T": plan.T,
        "k": plan.k,
        "chunk_size": len(data) // plan.k,
        "lambda": session.lambda_,
        "w": session.threshold_w,
        "epsilon": plan.epsilon,
        "delta": plan.delta,
        "n": len(data),
    }
    return RunReport(_config_echo(cfg), resolved, [_encode(a) for a in answers], counts, trace, metrics)


def _run_soft(cfg: ExperimentConfig) -> RunReport:
    data, sampler = _load(cfg)
    Q = _queries(cfg, sampler)
    m = Q.shape[0]
    T = cfg.cutoff if cfg.cutoff is not None else 1
    params = PrivacyParams(cfg.epsilon, cfg.delta, T, m)
    k = cfg.override_k if cfg.override_k is not None else slc_k(params, cfg.beta)
    if len(data) < k:
        raise InsufficientDataError(f"n={len(data)} cannot feed k={k} chunks")
    n_prime = len(data) // k
    learner = cfg.learner_handle()
    alpha = cfg.alpha
    probe = np.asarray(cfg.probe_x if cfg.probe_x is not None else Q[0], dtype=float)
    if alpha is None:
        if sampler is None:
            raise ConfigError("soft-label on --data needs --alpha")
        est = estimate_on_avg_stability(learner, sampler, n_prime, probe, cfg.trials, child_seed(cfg.seed, 6))
        alpha = est.alpha_hat
    if cfg.gamma_disc is not None:
        gamma = snap_gamma(cfg.gamma_disc)
    else:
        raw = soft_gamma_raw(alpha, n_prime, cfg.nu)
        if not 0 < raw <= 0.5:
            raise PlanInfeasibleError(f"16 alpha sqrt(2n') + nu = {raw:.4g} is outside (0, 1/2]")
        gamma = snap_gamma(raw)
    aux = SlcAux.from_params(params, gamma, lambda_=cfg.override_lambda, threshold_w=cfg.override_w)
    session = a_prvlearn(data, learner, k, aux, params, cfg.noise(), seed=child_seed(cfg.seed, 3), threads=cfg.threads)
    result = a_slc(session, Q)
    answers = []
    for a in result.answers:
        if a is EXHAUSTED:
            answers.append("exhausted")
        elif a.is_bottom:
            answers.append({"score": None, "stage": a.stage.value})
        else:
            answers.append({"score": a.score, "stage": a.stage.value})
    trace = [{"query": s.query_index, "stage": s.stage.value, "cost": s.cost, "counter": s.counter} for s in result.trace]
    counts = {"answered": result.released, "bottom": result.bottoms, "exhausted": result.exhausted}
    metrics: Dict[str, Any] = {"accuracy_bound": soft_accuracy_bound(alpha, n_prime, cfg.nu)}
    if sampler is not None and cfg.pilot_models > 0:
        expected = _pilot_mean(learner, sampler, n_prime, Q, cfg.pilot_models, child_seed(cfg.seed, 7))
        devs = [abs(s - e) for s, e in zip(result.scores(), expected) if s is not None]
        metrics["max_abs_deviation"] = max(devs) if devs else None
    resolved = {
        "m": m,
        "T": T,
        "k": k,
        "n_prime": n_prime,
        "alpha": alpha,
        "gamma": gamma,
        "lambda": aux.lambda_,
        "w": aux.threshold_w,
        "final_counter": session.cost,
        "n": len(data),
    }
    return RunReport(_config_echo(cfg), resolved, answers, counts, trace, metrics)


def _pilot_mean(learner, sampler, n_prime, Q, models, seed) -> List[float]:
    """Monte-Carlo E[h(x)] per query over fresh datasets of size n'."""
    total = np.zeros(Q.shape[0])
    for r in range(models):
        h = learner(sampler(n_prime, child_seed(seed, r, 0)), child_seed(seed, r, 1))
        total += np.asarray(h.predict_soft(Q), dtype=float).reshape(-1)
    return (total / models).tolist()


def _run_stability(cfg: ExperimentConfig) -> RunReport:
    sampler = cfg.sampler()
    learner = cfg.learner_handle()
    probe = np.asarray(cfg.probe_x if cfg.probe_x is not None else [cfg.margin_c], dtype=float)
    est = estimate_on_avg_stability(learner, sampler, cfg.n, probe, cfg.trials, child_seed(cfg.seed, 1))
    qual = quality_probe(learner, sampler, cfg.n, probe, cfg.trials, child_seed(cfg.seed, 2), strong_nu=cfg.nu or None)
    conc = concentration_check(learner, sampler, cfg.n, probe, est.alpha_hat, cfg.trials, child_seed(cfg.seed, 3))
    metrics = {
        "alpha_sq_hat": est.alpha_sq_hat,
        "alpha_sq_std_error": est.std_error,
        "mean_score": qual.mean_score,
        "nu_hat": qual.nu_hat,
        "strong_quality_beta_hat": qual.beta_hat,
        "concentration_fraction": conc.fraction,
        "concentration_radius": conc.radius,
    }
    resolved = {"n": cfg.n, "probe_x": probe.tolist(), "trials": cfg.trials}
    return RunReport(_config_echo(cfg), resolved, [], {}, [], metrics)


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    cfg.validate()
    start = time.perf_counter()
    if cfg.pipeline == "binary-queries":
        report = _run_binary(cfg, transfer=False)
    elif cfg.pipeline == "label-transfer":
        report = _run_binary(cfg, transfer=True)
    elif cfg.pipeline == "soft-label":
        report = _run_soft(cfg)
    else:
        report = _run_stability(cfg)
    report.test_mode_overrides = cfg.overrides()
    report.wall_time = time.perf_counter() - start
    return report


# ------------------------------------------------------------------ argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("data")
    g.add_argument("--data", help="CSV of features with a 0/1 label last")
    g.add_argument("--generator", choices=GENERATORS)
    g.add_argument("-n", type=int, default=20_000, help="generated sample size")
    g.add_argument("--theta-star", type=float, default=0.5)
    g.add_argument("--noise-rate", type=float, default=0.0)
    g.add_argument("--margin-c", type=float, default=1.0)
    g.add_argument("--x0", type=float, help="feature for margin-conditional data (default c)")
    g.add_argument("--queries", help="CSV of query feature vectors, no label")
    g.add_argument("--num-queries", type=int, default=100, help="generated query count")
    g.add_argument("--probe-x", type=_floats)
    p = common.add_argument_group("learning and privacy")
    p.add_argument("--learner", default="threshold-erm")
    p.add_argument("--sgd-step", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--cutoff", type=int, help="unstable-query cutoff T")
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma-opt", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--gamma-disc", type=float)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--pilot-models", type=int, default=200)
    r = common.add_argument_group("run")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--export-csv", help="write the relabeled set (label-transfer)")
    r.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    t = common.add_argument_group("test mode (not privacy-calibrated)")
    t.add_argument("--test-mode", action="store_true")
    t.add_argument("--override-k", type=int)
    t.add_argument("--override-lambda", type=float)
    t.add_argument("--override-w", type=float)
    t.add_argument("--zero-noise", action="store_true")

    parser = _Parser(prog="stablepriv", description="Private prediction via stability-based query release.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="pipeline", required=True, parser_class=_Parser)
    for name in PIPELINES:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(ns: argparse.Namespace, environ=os.environ) -> ExperimentConfig:
    seed = ns.seed
    if seed is None:
        env = environ.get("STABLEPRIV_SEED")
        try:
            seed = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"STABLEPRIV_SEED={env!r} is not an integer") from None
    return ExperimentConfig(
        pipeline=ns.pipeline,
        data=ns.data,
        generator=ns.generator,
        n=ns.n,
        theta_star=ns.theta_star,
        noise_rate=ns.noise_rate,
        margin_c=ns.margin_c,
        x0=ns.x0,
        learner=ns.learner,
        sgd_step=ns.sgd_step,
        epsilon=ns.epsilon,
        delta=ns.delta,
        cutoff=ns.cutoff,
        alpha=ns.alpha,
        gamma_opt=ns.gamma_opt,
        beta=ns.beta,
        gamma_disc=ns.gamma_disc,
        nu=ns.nu,
        queries=ns.queries,
        num_queries=ns.num_queries,
        probe_x=ns.probe_x,
        trials=ns.trials,
        pilot_models=ns.pilot_models,
        export_csv=ns.export_csv,
        seed=seed,
        threads=ns.threads,
        test_mode=ns.test_mode,
        override_k=ns.override_k,
        override_lambda=ns.override_lambda,
        override_w=ns.override_w,
        zero_noise=ns.zero_noise,
        out=ns.out,
    )


def _summary(report: RunReport) -> str:
    parts = [f"{report.config['pipeline']}:"]
    parts += [f"{k}={v}" for k, v in report.counts.items()]
    for key in ("answered_error_rate", "holdout_error", "max_abs_deviation", "alpha_sq_hat"):
        if report.metrics.get(key) is not None:
            parts.append(f"{key}={report.metrics[key]:.4g}")
    if report.test_mode_overrides:
        parts.append(f"TEST-MODE OVERRIDES {report.test_mode_overrides}")
    return " ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
        report = run_experiment(cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"stablepriv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, InsufficientDataError) as exc:
        print(f"stablepriv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PlanInfeasibleError as exc:
        print(f"stablepriv: plan infeasible: {exc}", file=sys.stderr)
        return EXIT_PLAN
    text = report.to_json() + "\n"
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(_summary(report), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
