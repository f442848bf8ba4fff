"""Loss-based bootstrap inference on imputed data.

Each replicate: draw one completed dataset from the posterior predictive,
draw i.i.d. Exp(1) weights, minimize the weighted loss; the replicate spread
approximates the sampling distribution of the loss minimizer.  Replicates
are independent given a supply of completed datasets and are driven by
per-replicate child streams, so execution order never matters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data_model import Dataset
from .errors import NumericalError, ValidationError
from .gibbs import _Tables, impute_from_snapshot
from .rng import RngStream

__all__ = [
    "MeanLoss",
    "QuantileLoss",
    "QuadraticRegressionLoss",
    "CustomLoss",
    "PriorWeight",
    "IlbResult",
    "SnapshotSource",
    "CompleteDataSource",
    "minimize_weighted_mean",
    "minimize_weighted_quantile",
    "minimize_weighted_quadratic_regression",
    "summarize",
    "ilb_run",
]


@dataclass(frozen=True)
class MeanLoss:
    """Quadratic loss sum w_i (y_ki - theta)^2; minimizer is the weighted mean."""

    column: int

    dim = 1

    def describe(self) -> dict:
        return {"loss": "mean", "column": self.column}


@dataclass(frozen=True)
class QuantileLoss:
    """Check loss; minimizer is the weighted tau-quantile."""

    column: int
    tau: float

    dim = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValidationError(f"tau must be inside (0, 1), got {self.tau}")

    def describe(self) -> dict:
        return {"loss": "quantile", "column": self.column, "tau": self.tau}


@dataclass(frozen=True)
class QuadraticRegressionLoss:
    """Least squares of y on (1, t, t^2) where t is the regressor column."""

    y_col: int
    x_col: int

    dim = 3

    def describe(self) -> dict:
        return {"loss": "quadratic_regression", "y_col": self.y_col, "x_col": self.x_col}


@dataclass(frozen=True)
class CustomLoss:
    """User-supplied loss with a minimizer contract.

    minimizer(y_completed, weights, prior_or_None, rng) -> theta vector;
    it must raise NumericalError on non-convergence.
    """

    minimizer: object
    dim: int = 1

    def describe(self) -> dict:
        return {"loss": "custom", "dim": self.dim}


@dataclass(frozen=True)
class PriorWeight:
    """Optional prior term: minimize omega * sum w_i L - w0 * log_prior(theta)."""

    log_prior: object
    omega: float = 1.0

    def __post_init__(self):
        if not self.omega > 0.0:
            raise ValidationError(f"omega must be positive, got {self.omega}")


def minimize_weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    tot = w.sum()
    if not tot > 0.0:
        raise ValidationError("weights must have positive sum")
    return float(np.dot(w, v) / tot)


def minimize_weighted_quantile(values: np.ndarray, weights: np.ndarray, tau: float) -> float:
    """Smallest data value whose cumulative normalized weight reaches tau;
    a minimizer of the weighted check loss."""
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"tau must be inside (0, 1), got {tau}")
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    tot = w.sum()
    if not tot > 0.0:
        raise ValidationError("weights must have positive sum")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    j = int(np.searchsorted(cum, tau * tot, side="left"))
    j = min(j, v.size - 1)
    return float(v[order[j]])


def minimize_weighted_quadratic_regression(
    y: np.ndarray, t: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Weighted least squares on the design (1, t, t^2), via normal equations."""
    w = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.unique(t[w > 0.0]).size < 3:
        raise ValidationError(
            "quadratic regression needs >= 3 distinct regressor values with positive weight"
        )
    X = np.column_stack([np.ones_like(t), t, t * t])
    Xw = X * w[:, None]
    A = Xw.T @ X
    rhs = Xw.T @ y
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("weighted design is rank deficient") from exc
    z = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, z)


@dataclass(frozen=True)
class IlbSummary:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def summarize(samples: np.ndarray, level: float) -> IlbSummary:
    """Per-coordinate mean, sd, and equal-tailed interval at the given level."""
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    if s.shape[0] < 2:
        raise ValidationError("need at least 2 bootstrap samples to summarize")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be inside (0, 1), got {level}")
    alpha = (1.0 - level) / 2.0
    return IlbSummary(
        mean=s.mean(axis=0),
        sd=s.std(axis=0, ddof=1),
        lower=np.quantile(s, alpha, axis=0),
        upper=np.quantile(s, 1.0 - alpha, axis=0),
        level=level,
    )


@dataclass(frozen=True)
class IlbResult:
    samples: np.ndarray  # (B, d)
    loss: object

    @property
    def B(self) -> int:
        return self.samples.shape[0]

    @property
    def point_estimate(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def credible_interval(self, level: float = 0.95) -> tuple:
        s = summarize(self.samples, level)
        return s.lower, s.upper

    def write_csv(self, path) -> None:
        d = self.samples.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate"] + [f"theta{j+1}" for j in range(d)])
            for b, row in enumerate(self.samples, start=1):
                w.writerow([b] + [repr(float(v)) for v in row])

    def summary_dict(self, level: float = 0.95) -> dict:
        s = summarize(self.samples, level)
        return {
            "B": self.B,
            "loss_spec": self.loss.describe(),
            "mean": s.mean.tolist(),
            "sd": s.sd.tolist(),
            "interval": {
                "level": level,
                "lower": s.lower.tolist(),
                "upper": s.upper.tolist(),
            },
        }

    def write_json(self, path, level: float = 0.95) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary_dict(level), fh, indent=2, sort_keys=True)
            fh.write("\n")


class SnapshotSource:
    """Posterior-predictive draw source backed by kept chain snapshots.

    Replicate b re-imputes y_mis from snapshot floor(b * S / B), so the
    replicates embed imputation-model parameter uncertainty.  Pass a single
    snapshot for the cheaper fixed-parameters mode.
    """

    def __init__(self, snapshots, data: Dataset, n_replicates: int):
        if not snapshots:
            raise ValidationError("need at least one snapshot")
        self.snapshots = list(snapshots)
        self.data = data
        self.n_replicates = int(n_replicates)
        self._tables = _Tables(data)

    def draw(self, replicate: int, rng: RngStream) -> np.ndarray:
        s = self.snapshots[(replicate * len(self.snapshots)) // self.n_replicates]
        return impute_from_snapshot(s, self.data, self._tables, rng)


class CompleteDataSource:
    """Trivial source for complete data: every replicate sees the data as-is."""

    def __init__(self, data: Dataset):
        if np.any(data.delta == 0):
            raise ValidationError("CompleteDataSource requires fully observed data")
        self.data = data

    def draw(self, replicate: int, rng: RngStream) -> np.ndarray:
        return self.data.y


def _minimize(loss, y: np.ndarray, w: np.ndarray, prior, rng: RngStream):
    if isinstance(loss, CustomLoss):
        theta = loss.minimizer(y, w, prior, rng)
        return np.atleast_1d(np.asarray(theta, dtype=float))
    if isinstance(loss, MeanLoss):
        start = np.array([minimize_weighted_mean(y[:, loss.column], w)])
        loss_fn = lambda th: float(np.dot(w, (y[:, loss.column] - th[0]) ** 2))
    elif isinstance(loss, QuantileLoss):
        v = y[:, loss.column]
        start = np.array([minimize_weighted_quantile(v, w, loss.tau)])
        loss_fn = lambda th: float(
            np.dot(w, (v - th[0]) * (loss.tau - (v - th[0] < 0.0)))
        )
    elif isinstance(loss, QuadraticRegressionLoss):
        start = minimize_weighted_quadratic_regression(
            y[:, loss.y_col], y[:, loss.x_col], w
        )
        t = y[:, loss.x_col]
        X = np.column_stack([np.ones_like(t), t, t * t])
        loss_fn = lambda th: float(np.dot(w, (y[:, loss.y_col] - X @ th) ** 2))
    else:
        raise ValidationError(f"unknown loss spec {loss!r}")
    if prior is None:
        return start
    # prior-weighted variant: add -w0 log pi(theta) and minimize numerically
    w0 = rng.gen.standard_exponential()
    from scipy.optimize import minimize as sp_minimize

    obj = lambda th: prior.omega * loss_fn(th) - w0 * float(prior.log_prior(th))
    res = sp_minimize(obj, start, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10})
    if not res.success:
        raise NumericalError(f"prior-weighted minimization failed: {res.message}")
    return np.atleast_1d(res.x)


def ilb_run(
    imputer,
    data: Dataset,
    loss,
    B: int,
    rng: RngStream,
    prior: PriorWeight = None,
) -> IlbResult:
    """B replicates of impute -> Exp(1) reweight -> minimize."""
    if B < 2:
        raise ValidationError(f"need B >= 2 replicates, got {B}")
    n = data.n
    samples = np.empty((B, getattr(loss, "dim", 1)))
    for b in range(B):
        rb = rng.child(b)
        y = imputer.draw(b, rb)
        w = rb.gen.standard_exponential(n)
        samples[b] = _minimize(loss, y, w, prior, rb)
    return IlbResult(samples=samples, loss=loss)
