"""Simulation harness: scenario generators, missingness mechanism, metrics,
baseline imputers, and the replication/coverage driver.

Replications are independent, run on child streams keyed by replication
index, and merged deterministically, so worker count never changes results.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cgmm import PriorConfig
from .data_model import Dataset, ImputationDraws, VariableKind
from .errors import ValidationError
from .gibbs import ChainConfig, run_chain
from .ilb import MeanLoss, SnapshotSource, ilb_run
from .rng import RngStream

__all__ = [
    "ScenarioSpec",
    "Population",
    "SimConfig",
    "MetricReport",
    "ReplicationReport",
    "generate_scenario",
    "apply_missingness",
    "metric_mae",
    "metric_mce",
    "metric_mape",
    "population_mean_estimate",
    "baseline_impute",
    "run_replications",
]


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    outcome_mode: str = "continuous"
    N: int = 10_000
    n: int = 1_000

    def __post_init__(self):
        if self.scenario_id not in (1, 2, 3, 4):
            raise ValidationError(f"scenario_id must be 1..4, got {self.scenario_id}")
        if self.outcome_mode not in ("continuous", "mixed"):
            raise ValidationError(f"unknown outcome mode {self.outcome_mode!r}")
        if not 1 <= self.n <= self.N:
            raise ValidationError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")

    @property
    def kinds(self) -> tuple:
        if self.outcome_mode == "continuous":
            return (VariableKind.continuous(), VariableKind.continuous())
        return (VariableKind.binary(), VariableKind.count())


@dataclass(frozen=True)
class Population:
    """A complete finite population, with the latent continuous responses
    retained alongside the (possibly discretized) observed-scale responses.
    For scenarios 2-4, `regimes` holds the two regime indicators I(U_k > c_k)."""

    x: np.ndarray
    ystar: np.ndarray
    y: np.ndarray
    kinds: tuple
    regimes: np.ndarray = None


_S1_LAMBDA = np.array([0.4, 0.6])
_S1_MU = np.array([[2.0, 4.0, 1.0, 0.0], [-2.0, 7.0, -3.0, 0.0]])
_S234_LAMBDA = np.array([0.2, 0.3, 0.2, 0.3])
_S234_MU = np.array([[-1.0, 0.5], [1.0, 1.0], [0.5, -1.0], [0.0, 0.0]])
_S234_COV = np.array([[0.5, 0.1], [0.1, 0.5]])


def _s1_sigma() -> np.ndarray:
    idx = np.arange(4)
    return 3.0 * np.power(-0.5, np.abs(np.subtract.outer(idx, idx)))


def generate_scenario(spec: ScenarioSpec, rng: RngStream) -> Population:
    """Complete finite population for one scenario."""
    gen = rng.gen
    N = spec.N
    regimes = None
    if spec.scenario_id == 1:
        z = gen.choice(2, size=N, p=_S1_LAMBDA)
        L = np.linalg.cholesky(_s1_sigma())
        raw = _S1_MU[z] + gen.standard_normal((N, 4)) @ L.T
        ystar = raw[:, :2].copy()
        x = raw[:, 2:].copy()
    else:
        z = gen.choice(4, size=N, p=_S234_LAMBDA)
        L = np.linalg.cholesky(_S234_COV)
        x = _S234_MU[z] + gen.standard_normal((N, 2)) @ L.T
        x1, x2 = x[:, 0], x[:, 1]
        u1 = gen.normal(1.0 + 2.0 * x1 + x2, 1.0)
        u2 = gen.normal(1.0 + x1 + 2.0 * x2, 1.0)
        # the regime switch point: 60% quantile of U_k over this population
        c1 = np.quantile(u1, 0.6)
        c2 = np.quantile(u2, 0.6)
        regimes = np.column_stack([u1 > c1, u2 > c2])
        if spec.scenario_id == 2:
            m1 = np.where(u1 > c1, 2.0 + x1 + x2, -2.0 + 0.5 * x1 - x2)
            m2 = np.where(u2 > c2, 10.0 - x1 - x2, 6.0 - 0.5 * x1 + 2.0 * x2)
        else:
            m1 = np.where(u1 > c1, 2.0 + x1**2 + x2**2, -2.0 + 0.5 * x1 - x2**2)
            m2 = np.where(u2 > c2, 10.0 - x1**2 - x2, 6.0 - 0.5 * x1 + 2.0 * x2**2)
        if spec.scenario_id == 4:
            eps1 = gen.standard_gamma(1.0, N)
            eps2 = gen.standard_gamma(1.0, N)
        else:
            eps1 = gen.standard_normal(N)
            eps2 = gen.standard_normal(N)
        ystar = np.column_stack([m1 + eps1, m2 + eps2])
    kinds = spec.kinds
    if spec.outcome_mode == "continuous":
        y = ystar.copy()
    else:
        y = np.column_stack(
            [kinds[0].to_response(ystar[:, 0]), kinds[1].to_response(ystar[:, 1])]
        )
    return Population(x=x, ystar=ystar, y=y, kinds=kinds, regimes=regimes)


def apply_missingness(x: np.ndarray, y: np.ndarray, kinds, rng: RngStream) -> Dataset:
    """Logistic response indicators: logit P(d1=1) = 1.5 - 0.5 x1,
    logit P(d2=1) = 1 - 0.5 x2.  Covariates are never masked."""
    gen = rng.gen
    n = y.shape[0]
    p1 = 1.0 / (1.0 + np.exp(-(1.5 - 0.5 * x[:, 0])))
    p2 = 1.0 / (1.0 + np.exp(-(1.0 - 0.5 * x[:, 1])))
    d1 = (gen.random(n) < p1).astype(np.uint8)
    d2 = (gen.random(n) < p2).astype(np.uint8)
    delta = np.column_stack([d1, d2])
    ymask = y.copy()
    ymask[delta == 0] = np.nan
    return Dataset(x=x, y=ymask, delta=delta, kinds=tuple(kinds))


def _missing_cells(mask: np.ndarray, column: int) -> np.ndarray:
    mis = np.flatnonzero(np.asarray(mask)[:, column] == 0)
    if mis.size == 0:
        raise ValidationError(f"column {column} has no missing cells")
    return mis


def metric_mae(truth, imputed, mask, column: int) -> float:
    """Mean absolute error over the missing cells of one column."""
    mis = _missing_cells(mask, column)
    t = np.asarray(truth)[mis, column]
    v = np.asarray(imputed)[mis, column]
    return float(np.mean(np.abs(v - t)))


def metric_mce(truth, imputed, mask, column: int) -> float:
    """Misclassification rate over the missing cells (binary columns)."""
    mis = _missing_cells(mask, column)
    t = np.asarray(truth)[mis, column]
    v = np.asarray(imputed)[mis, column]
    return float(np.mean(v != t))


def metric_mape(truth, imputed, mask, column: int) -> float:
    """Mean of |imputed - truth| / (1 + truth) over the missing cells."""
    mis = _missing_cells(mask, column)
    t = np.asarray(truth)[mis, column]
    v = np.asarray(imputed)[mis, column]
    return float(np.mean(np.abs(v - t) / (1.0 + t)))


def population_mean_estimate(data: Dataset, imputed, column: int) -> float:
    """n^-1 sum of observed values and imputed stand-ins for one column."""
    d = data.delta[:, column]
    yobs = np.where(d == 1, np.nan_to_num(data.y[:, column]), 0.0)
    v = np.asarray(imputed)[:, column]
    return float(np.mean(yobs * d + v * (1 - d)))


def column_metric(kind: VariableKind, truth, imputed, mask, column: int) -> float:
    if kind.kind == "binary":
        return metric_mce(truth, imputed, mask, column)
    if kind.kind == "count":
        return metric_mape(truth, imputed, mask, column)
    return metric_mae(truth, imputed, mask, column)


def baseline_impute(
    data: Dataset,
    method: str,
    rng: RngStream = None,
    priors: PriorConfig = None,
    config: ChainConfig = None,
) -> ImputationDraws:
    """In-repo baseline imputers.

    column_mean: observed column mean (mode for binary, rounded mean for
    count) in every missing cell; single dataset.
    single_gaussian: the engine with G = 1.
    """
    if method == "column_mean":
        y = data.y.copy()
        for k, kind in enumerate(data.kinds):
            obs = data.delta[:, k] == 1
            mis = ~obs
            if not np.any(mis):
                continue
            vals = data.y[obs, k]
            if vals.size == 0:
                raise ValidationError(f"column {data.y_names[k]!r} has no observed cells")
            if kind.kind == "binary":
                fill = 1.0 if vals.mean() >= 0.5 else 0.0
            elif kind.kind == "count":
                fill = max(0.0, math.floor(vals.mean() + 0.5))
            else:
                fill = float(vals.mean())
            y[mis, k] = fill
        return ImputationDraws(datasets=(data.completed(y),), source_iterations=(0,))
    if method == "single_gaussian":
        if rng is None:
            raise ValidationError("single_gaussian baseline needs an RngStream")
        priors = priors or PriorConfig.from_data(data, 1)
        config = config or ChainConfig()
        draws, _ = run_chain(data, 1, priors, config, rng)
        return draws
    raise ValidationError(f"unknown baseline method {method!r}")


@dataclass(frozen=True)
class SimConfig:
    """Desk-scale defaults; full-scale studies remain reachable by
    overriding R/n/B and the chain lengths."""

    G: int = 7
    chain: ChainConfig = field(
        default_factory=lambda: ChainConfig(burn_in=500, keep=1000, thin=1, m_imputations=10)
    )
    B: int = 500
    level: float = 0.95
    run_ilb: bool = True
    run_baselines: bool = True
    priors: PriorConfig = None  # None: scaled from each replication's data


@dataclass(frozen=True)
class MetricReport:
    """Per-replication record."""

    replication: int
    truth_means: np.ndarray
    mean_estimates: dict
    errors: dict
    coverage: np.ndarray
    intervals: np.ndarray
    non_null_avg: float


@dataclass(frozen=True)
class ReplicationReport:
    spec: ScenarioSpec
    records: tuple

    @property
    def R(self) -> int:
        return len(self.records)

    def coverage_rate(self) -> np.ndarray:
        cov = np.array([r.coverage for r in self.records], dtype=float)
        return cov.mean(axis=0)

    def error_summary(self, stat: str = "median") -> dict:
        """Per method, per column: median (or mean) error across replications."""
        f = np.median if stat == "median" else np.mean
        methods = self.records[0].errors.keys()
        return {
            m: f(np.array([r.errors[m] for r in self.records]), axis=0).tolist()
            for m in methods
        }

    def non_null_avg(self) -> float:
        return float(np.mean([r.non_null_avg for r in self.records]))

    def aggregate(self) -> dict:
        return {
            "scenario": self.spec.scenario_id,
            "outcome_mode": self.spec.outcome_mode,
            "replications": self.R,
            "coverage": self.coverage_rate().tolist(),
            "median_errors": self.error_summary("median"),
            "mean_errors": self.error_summary("mean"),
            "non_null_avg": self.non_null_avg(),
        }

    def write_csv(self, path) -> None:
        """Long-format per-replication rows (boxplot-ready)."""
        methods = list(self.records[0].errors.keys())
        p = self.records[0].truth_means.size
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replication", "method", "column", "error", "mean_estimate",
                        "truth_mean", "covered", "non_null_avg"])
            for r in self.records:
                for m in methods:
                    for k in range(p):
                        est = r.mean_estimates.get(m)
                        cov = ""
                        if m == "engine":
                            cov = int(r.coverage[k])
                        w.writerow([
                            r.replication, m, k + 1,
                            repr(float(r.errors[m][k])),
                            repr(float(est[k])) if est is not None else "",
                            repr(float(r.truth_means[k])),
                            cov,
                            repr(float(r.non_null_avg)) if m == "engine" else "",
                        ])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregate(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _avg_metric_over_draws(draws: ImputationDraws, truth, mask, kinds) -> np.ndarray:
    p = truth.shape[1]
    out = np.zeros(p)
    for ds in draws.datasets:
        for k in range(p):
            out[k] += column_metric(kinds[k], truth, ds.y, mask, k)
    return out / draws.m


def _avg_mean_estimates(draws: ImputationDraws, data: Dataset) -> np.ndarray:
    p = data.p
    out = np.zeros(p)
    for ds in draws.datasets:
        for k in range(p):
            out[k] += population_mean_estimate(data, ds.y, k)
    return out / draws.m


def one_replication(spec: ScenarioSpec, cfg: SimConfig, stream: RngStream, r: int) -> MetricReport:
    """population -> SRS sample -> missingness -> impute -> metrics/ILB."""
    pop = generate_scenario(spec, stream.child(0))
    idx = stream.child(1).gen.choice(spec.N, size=spec.n, replace=False)
    xs, ys = pop.x[idx], pop.y[idx]
    data = apply_missingness(xs, ys, pop.kinds, stream.child(2))
    truth_means = pop.y.mean(axis=0)

    priors = cfg.priors or PriorConfig.from_data(data, cfg.G)
    n_snaps = cfg.B if cfg.run_ilb else 0
    draws, diag, snaps = run_chain(
        data, cfg.G, priors, cfg.chain, stream.child(3),
        n_snapshots=n_snaps, return_snapshots=True,
    )

    errors = {"engine": _avg_metric_over_draws(draws, ys, data.delta, pop.kinds)}
    mean_estimates = {"engine": _avg_mean_estimates(draws, data)}

    p = data.p
    coverage = np.zeros(p, dtype=bool)
    intervals = np.zeros((p, 2))
    if cfg.run_ilb:
        source = SnapshotSource(snaps, data, cfg.B)
        for k in range(p):
            res = ilb_run(source, data, MeanLoss(k), cfg.B, stream.child(4, k))
            lo, hi = res.credible_interval(cfg.level)
            intervals[k] = (lo[0], hi[0])
            coverage[k] = lo[0] <= truth_means[k] <= hi[0]

    if cfg.run_baselines:
        cm = baseline_impute(data, "column_mean")
        errors["column_mean"] = _avg_metric_over_draws(cm, ys, data.delta, pop.kinds)
        mean_estimates["column_mean"] = _avg_mean_estimates(cm, data)
        g1 = baseline_impute(
            data, "single_gaussian", rng=stream.child(5),
            priors=PriorConfig.from_data(data, 1), config=cfg.chain,
        )
        errors["single_gaussian"] = _avg_metric_over_draws(g1, ys, data.delta, pop.kinds)
        mean_estimates["single_gaussian"] = _avg_mean_estimates(g1, data)

    return MetricReport(
        replication=r,
        truth_means=truth_means,
        mean_estimates=mean_estimates,
        errors=errors,
        coverage=coverage,
        intervals=intervals,
        non_null_avg=diag.non_null_avg,
    )


def _worker(args) -> MetricReport:
    spec, cfg, seed, key, r = args
    return one_replication(spec, cfg, RngStream(seed, key + (r,)), r)


def run_replications(
    spec: ScenarioSpec,
    R: int,
    cfg: SimConfig,
    rng: RngStream,
    threads: int = 1,
    progress=None,
) -> ReplicationReport:
    """R independent replications, merged by replication index."""
    if R < 1:
        raise ValidationError(f"need R >= 1, got {R}")
    jobs = [(spec, cfg, rng.seed, rng.stream_id, r) for r in range(R)]
    records = [None] * R
    if threads <= 1:
        for job in jobs:
            rec = _worker(job)
            records[rec.replication] = rec
            if progress:
                progress(rec)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(_worker, jobs):
                records[rec.replication] = rec
                if progress:
                    progress(rec)
    return ReplicationReport(spec=spec, records=tuple(records))
