"""Dataset representation: covariates, masked responses, variable kinds,
and CSV/JSON I/O for inputs and multiply-imputed outputs.

Datasets are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "VariableKind",
    "Dataset",
    "ImputationDraws",
    "CsvSchema",
    "split_pattern",
    "read_dataset",
    "write_dataset",
    "write_imputations",
]

_KINDS = ("continuous", "binary", "count")


@dataclass(frozen=True)
class VariableKind:
    """Scale of one response column.

    Count columns carry ordered cutpoints a_1 < a_2 < ... separating the
    latent scale into value cells; ``cutpoints=None`` means the default rule
    (cell for value j is (j-1, j], unbounded above).  The leading boundary
    is always -inf.
    """

    kind: str
    cutpoints: tuple = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown variable kind {self.kind!r}")
        if self.cutpoints is not None:
            if self.kind != "count":
                raise ValidationError("cutpoints only apply to count columns")
            cp = tuple(float(c) for c in self.cutpoints)
            if len(cp) < 1 or any(b <= a for a, b in zip(cp, cp[1:])):
                raise ValidationError("cutpoints must be strictly increasing")
            object.__setattr__(self, "cutpoints", cp)

    @classmethod
    def continuous(cls):
        return cls("continuous")

    @classmethod
    def binary(cls):
        return cls("binary")

    @classmethod
    def count(cls, cutpoints=None):
        return cls("count", None if cutpoints is None else tuple(cutpoints))

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous"

    def valid_value(self, v: float) -> bool:
        if not math.isfinite(v):
            return False
        if self.kind == "continuous":
            return True
        if self.kind == "binary":
            return v in (0.0, 1.0)
        if v < 0.0 or v != math.floor(v):
            return False
        if self.cutpoints is not None and v > len(self.cutpoints):
            return False
        return True

    def latent_interval(self, v: float) -> tuple:
        """(lo, hi) of the latent cell encoding observed value v."""
        if self.kind == "continuous":
            raise ValidationError("continuous columns have no latent interval")
        if self.kind == "binary":
            return (-np.inf, 0.0) if v == 0.0 else (0.0, np.inf)
        j = int(v)
        if self.cutpoints is None:
            lo = -np.inf if j == 0 else float(j - 1)
            return lo, float(j)
        cp = self.cutpoints
        lo = -np.inf if j == 0 else cp[j - 1]
        hi = np.inf if j == len(cp) else cp[j]
        return lo, hi

    def to_response(self, ystar):
        """Map latent values to the response scale (vectorized)."""
        ystar = np.asarray(ystar, dtype=float)
        if self.kind == "continuous":
            return ystar
        if self.kind == "binary":
            return (ystar > 0.0).astype(float)
        if self.cutpoints is None:
            return np.maximum(0.0, np.ceil(ystar))
        return np.searchsorted(np.asarray(self.cutpoints), ystar, side="left").astype(
            float
        )

    @classmethod
    def parse(cls, text: str, cutpoints=None):
        return cls(text.strip().lower(), None if cutpoints is None else tuple(cutpoints))


def split_pattern(delta_row: np.ndarray) -> tuple:
    """(observed indices, missing indices), each ascending; a partition of 0..p-1."""
    d = np.asarray(delta_row)
    return np.flatnonzero(d == 1), np.flatnonzero(d == 0)


@dataclass(frozen=True)
class Dataset:
    """n rows of q fully observed covariates and p possibly missing responses."""

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    kinds: tuple
    x_names: tuple = ()
    y_names: tuple = ()

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float, ndmin=2)
        delta = np.array(self.delta, ndmin=2)
        if x.shape[0] != y.shape[0] or delta.shape != y.shape:
            raise ValidationError(
                f"shape mismatch: x {x.shape}, y {y.shape}, delta {delta.shape}"
            )
        n, p = y.shape
        if n < 1 or p < 1:
            raise ValidationError("need n >= 1 and p >= 1")
        if not np.all(np.isin(delta, (0, 1))):
            raise ValidationError("delta must be 0/1")
        delta = delta.astype(np.uint8)
        if x.size and not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise ValidationError(f"covariate cell ({i}, {j}) is missing or non-finite")
        kinds = tuple(self.kinds)
        if len(kinds) != p:
            raise ValidationError(f"{len(kinds)} kinds for p={p} responses")
        x_names = tuple(self.x_names) or tuple(f"x{j+1}" for j in range(x.shape[1]))
        y_names = tuple(self.y_names) or tuple(f"y{k+1}" for k in range(p))
        if len(x_names) != x.shape[1] or len(y_names) != p:
            raise ValidationError("column name count mismatch")
        for k, kind in enumerate(kinds):
            obs = delta[:, k] == 1
            vals = y[obs, k]
            if vals.size and not np.all(np.isfinite(vals)):
                i = int(np.flatnonzero(obs)[np.argwhere(~np.isfinite(vals))[0][0]])
                raise ValidationError(
                    f"observed cell (row {i}, column {y_names[k]!r}) is non-finite"
                )
            if kind.is_discrete:
                for i in np.flatnonzero(obs):
                    if not kind.valid_value(y[i, k]):
                        raise ValidationError(
                            f"column {y_names[k]!r} is {kind.kind} but row {i} "
                            f"has value {y[i, k]!r}"
                        )
        x.flags.writeable = False
        y.flags.writeable = False
        delta.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "y_names", y_names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    def row_pattern(self, i: int) -> tuple:
        return split_pattern(self.delta[i])

    def completed(self, y_full: np.ndarray) -> "Dataset":
        """Same covariates/kinds with a fully observed response matrix."""
        return Dataset(
            x=self.x.copy(),
            y=np.asarray(y_full, dtype=float).copy(),
            delta=np.ones_like(self.delta),
            kinds=self.kinds,
            x_names=self.x_names,
            y_names=self.y_names,
        )


@dataclass(frozen=True)
class ImputationDraws:
    """m completed datasets drawn from the posterior predictive."""

    datasets: tuple
    source_iterations: tuple

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(
            self, "source_iterations", tuple(int(t) for t in self.source_iterations)
        )
        if len(self.datasets) < 1:
            raise ValidationError("need at least one completed dataset")
        if len(self.source_iterations) != len(self.datasets):
            raise ValidationError("one source iteration per dataset")
        for ds in self.datasets:
            if not np.all(ds.delta == 1):
                raise ValidationError("completed datasets must have delta all ones")

    @property
    def m(self) -> int:
        return len(self.datasets)

    def validate_against(self, source: Dataset) -> None:
        """Observed cells must match the input exactly; discrete cells their kind."""
        obs = source.delta == 1
        for ds in self.datasets:
            if not np.array_equal(ds.y[obs], source.y[obs]):
                raise ValidationError("observed cells differ from the input dataset")
            for k, kind in enumerate(ds.kinds):
                if kind.is_discrete:
                    bad = [v for v in ds.y[:, k] if not kind.valid_value(v)]
                    if bad:
                        raise ValidationError(
                            f"imputed {kind.kind} column {ds.y_names[k]!r} "
                            f"contains invalid value {bad[0]!r}"
                        )


@dataclass(frozen=True)
class CsvSchema:
    """Which header columns are responses (and their kinds); the rest are
    covariates unless an explicit covariate list is given."""

    response_kinds: dict
    missing_token: str = "NA"
    covariates: tuple = None


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(
            f"row {row}, column {col!r}: cannot parse {text!r} as a number"
        ) from None


def read_dataset(path, schema: CsvSchema) -> Dataset:
    """Load a headered CSV; missing responses marked by the schema token."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    y_names = [c for c in header if c in schema.response_kinds]
    missing_resp = set(schema.response_kinds) - set(y_names)
    if missing_resp:
        raise ValidationError(f"{path}: response columns not in header: {sorted(missing_resp)}")
    if schema.covariates is None:
        x_names = [c for c in header if c not in schema.response_kinds]
    else:
        x_names = list(schema.covariates)
        absent = set(x_names) - set(header)
        if absent:
            raise ValidationError(f"{path}: covariate columns not in header: {sorted(absent)}")
    col_of = {c: j for j, c in enumerate(header)}
    n = len(rows)
    x = np.empty((n, len(x_names)))
    y = np.full((n, len(y_names)), np.nan)
    delta = np.ones((n, len(y_names)), dtype=np.uint8)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, c in enumerate(x_names):
            cell = row[col_of[c]].strip()
            if cell == schema.missing_token:
                raise ValidationError(
                    f"row {i}, column {c!r}: covariates must be fully observed"
                )
            x[i, j] = _parse_cell(cell, i, c)
        for k, c in enumerate(y_names):
            cell = row[col_of[c]].strip()
            if cell == schema.missing_token:
                delta[i, k] = 0
            else:
                y[i, k] = _parse_cell(cell, i, c)
    kinds = tuple(schema.response_kinds[c] for c in y_names)
    return Dataset(x=x, y=y, delta=delta, kinds=kinds, x_names=tuple(x_names), y_names=tuple(y_names))


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_dataset(ds: Dataset, path, missing_token: str = "NA") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.x_names) + list(ds.y_names))
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.x[i]]
            for k in range(ds.p):
                row.append(_fmt(ds.y[i, k]) if ds.delta[i, k] else missing_token)
            writer.writerow(row)


def _config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _created_at() -> str:
    # honor SOURCE_DATE_EPOCH so reruns can be byte-identical
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def write_imputations(draws: ImputationDraws, out_dir, seed=None, config=None) -> list:
    """One CSV per completed dataset plus a manifest; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, ds in enumerate(draws.datasets, start=1):
        p = out_dir / f"imputed_{j:03d}.csv"
        write_dataset(ds, p)
        paths.append(p)
    manifest = {
        "seed": seed,
        "config": config,
        "config_hash": _config_hash(config),
        "iterations": list(draws.source_iterations),
        "created_at": _created_at(),
    }
    mpath = out_dir / "manifest.json"
    with mpath.open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(mpath)
    return paths
