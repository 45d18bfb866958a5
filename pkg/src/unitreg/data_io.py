"""Dataset ingestion, design matrices and separation detection."""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .kernels import CLS_INTERIOR, CLS_ONE, CLS_ZERO

log = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"


class DataError(ValueError):
    """Problems with the content of an input file or dataset."""


class MissingColumnError(DataError):
    """A requested column is absent from the input file."""


@dataclass(frozen=True)
class EndpointPartition:
    n0: int
    n1: int
    n_beta: int
    N: int
    idx0: np.ndarray
    idx1: np.ndarray
    idx_beta: np.ndarray

    @classmethod
    def from_y(cls, y):
        y = np.asarray(y, dtype=float)
        idx0 = np.flatnonzero(y == 0.0)
        idx1 = np.flatnonzero(y == 1.0)
        idxb = np.flatnonzero((y > 0.0) & (y < 1.0))
        return cls(len(idx0), len(idx1), len(idxb), len(y), idx0, idx1, idxb)

    def as_dict(self):
        return {"N": self.N, "n0": self.n0, "n1": self.n1, "n_beta": self.n_beta}


@dataclass(frozen=True)
class Dataset:
    """Outcome in [0, 1] with a predictor matrix whose first column is unity."""

    y: np.ndarray
    X_plus: np.ndarray
    columns: tuple
    unit_id: Optional[np.ndarray] = None
    time_id: Optional[np.ndarray] = None
    partition: EndpointPartition = field(init=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        X = np.array(self.X_plus, dtype=float)
        if y.ndim != 1:
            raise DataError("y must be one-dimensional")
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError("X_plus must have one row per observation")
        if not np.all((y >= 0.0) & (y <= 1.0)):
            bad = np.flatnonzero(~((y >= 0.0) & (y <= 1.0)))
            raise DataError(f"y outside [0, 1] at rows {bad.tolist()[:10]}")
        if X.shape[1] == 0 or not np.all(X[:, 0] == 1.0):
            raise DataError("first column of X_plus must be all ones")
        if len(self.columns) != X.shape[1]:
            raise DataError("column names do not match X_plus")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X_plus", X)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "partition", EndpointPartition.from_y(y))

    @classmethod
    def from_arrays(cls, y, X=None, names=None, unit_id=None, time_id=None):
        """Build a dataset from predictors *without* the unity column."""
        y = np.asarray(y, dtype=float)
        if X is None:
            X = np.empty((len(y), 0))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if names is None:
            names = [f"x{j + 1}" for j in range(X.shape[1])]
        Xp = np.column_stack([np.ones(len(y)), X])
        uid = None if unit_id is None else np.asarray(unit_id)
        tid = None if time_id is None else np.asarray(time_id)
        return cls(y, Xp, (INTERCEPT, *names), uid, tid)

    @property
    def N(self):
        return self.y.shape[0]

    @property
    def row_class(self):
        cls = np.full(self.N, CLS_INTERIOR, dtype=np.int64)
        cls[self.y == 0.0] = CLS_ZERO
        cls[self.y == 1.0] = CLS_ONE
        return cls

    def column_index(self, names: Sequence[str]):
        idx = []
        for name in names:
            if name not in self.columns:
                raise MissingColumnError(f"unknown predictor column '{name}'")
            idx.append(self.columns.index(name))
        return idx

    def design(self, names: Sequence[str]):
        """Intercept plus the named predictor columns."""
        return self.X_plus[:, [0] + self.column_index(names)]

    def subset(self, rows):
        rows = np.asarray(rows)
        uid = None if self.unit_id is None else self.unit_id[rows]
        tid = None if self.time_id is None else self.time_id[rows]
        return Dataset(self.y[rows], self.X_plus[rows], self.columns, uid, tid)

    def summary(self):
        ranges = {}
        for j, name in enumerate(self.columns[1:], start=1):
            col = self.X_plus[:, j]
            ranges[name] = [float(col.min()), float(col.max())]
        out = self.partition.as_dict()
        out["y_range"] = [float(self.y.min()), float(self.y.max())]
        out["columns"] = ranges
        if self.unit_id is not None:
            out["n_units"] = int(len(np.unique(self.unit_id)))
        return out


def load_csv(path, outcome_column, predictor_columns=(), id_columns=None,
             endpoint_epsilon=None):
    """Read a comma-separated file with a header row.

    ``id_columns`` may name a unit identifier and optionally a time
    identifier, in that order.  Endpoints are detected by exact equality
    with 0.0 and 1.0 unless ``endpoint_epsilon`` is given, in which case
    values within epsilon of an endpoint are snapped to it.
    """
    path = Path(path)
    id_columns = list(id_columns or [])
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")

    wanted = [outcome_column, *predictor_columns, *id_columns]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")
    pos = {name: header.index(name) for name in wanted}

    def numeric(col):
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            try:
                out[i] = float(r[pos[col]])
            except (ValueError, IndexError):
                cell = r[pos[col]] if pos[col] < len(r) else ""
                # +2: header line and 1-based numbering
                raise DataError(f"{path}: row {i + 2}, column '{col}': "
                                f"cannot parse {cell!r} as a number") from None
        return out

    y = numeric(outcome_column)
    if endpoint_epsilon:
        y = np.where(np.abs(y) < endpoint_epsilon, 0.0, y)
        y = np.where(np.abs(1.0 - y) < endpoint_epsilon, 1.0, y)
    bad = np.flatnonzero(~((y >= 0.0) & (y <= 1.0)))
    if len(bad):
        listed = ", ".join(f"row {i + 2} (y={y[i]!r})" for i in bad[:10])
        raise DataError(f"{path}: outcome outside [0, 1] at {listed}")
    X = np.column_stack([numeric(c) for c in predictor_columns]) if predictor_columns else None
    ids = [np.array([r[pos[c]].strip() for r in rows]) for c in id_columns]
    unit = ids[0] if ids else None
    time = ids[1] if len(ids) > 1 else None
    return Dataset.from_arrays(y, X, list(predictor_columns), unit, time)


def write_csv(dataset, path, outcome_name="y", extra=None):
    """Write a dataset in the schema read by :func:`load_csv`."""
    cols = [outcome_name, *dataset.columns[1:]]
    data = [dataset.y, *[dataset.X_plus[:, j] for j in range(1, dataset.X_plus.shape[1])]]
    if dataset.unit_id is not None:
        cols.append("unit")
        data.append(dataset.unit_id)
    if dataset.time_id is not None:
        cols.append("time")
        data.append(dataset.time_id)
    for name, values in (extra or {}).items():
        cols.append(name)
        data.append(values)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(dataset.N):
            w.writerow([_fmt(col[i]) for col in data])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_summary(dataset, path):
    Path(path).write_text(json.dumps(dataset.summary(), indent=2))


def endpoint_mask_matrix(dataset):
    """Return the diagonal mask U and ``X_beta = U @ X_plus``.

    Rows of X_beta belonging to endpoint observations are zero.
    """
    keep = ((dataset.y > 0.0) & (dataset.y < 1.0)).astype(float)
    U = np.diag(keep)
    return U, keep[:, None] * dataset.X_plus


@dataclass
class SeparationReport:
    status: str  # none | quasicomplete | complete | degenerate | inconclusive
    witness: Optional[np.ndarray] = None
    detail: str = ""

    def as_dict(self):
        return {"status": self.status,
                "witness": None if self.witness is None else self.witness.tolist(),
                "detail": self.detail}


def detect_separation(z, X, tol=1e-7):
    """Classify (quasi)complete separation of a binary response.

    Solves the linear program that maximises the total signed margin
    ``sum_i s_i x_i'w`` subject to ``s_i x_i'w >= 0`` with w in a box,
    where ``s_i = 2 z_i - 1``.  A positive optimum means a separating
    direction exists; a second LP asks whether every margin can be made
    strictly positive (complete separation).
    """
    z = np.asarray(z)
    X = np.asarray(X, dtype=float)
    if z.min() == z.max():
        return SeparationReport("degenerate", None, "response has a single class")
    s = np.where(z > 0, 1.0, -1.0)
    A = s[:, None] * X
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    As = A / scale
    p = X.shape[1]
    try:
        res = linprog(-As.sum(axis=0), A_ub=-As, b_ub=np.zeros(len(z)),
                      bounds=[(-1.0, 1.0)] * p, method="highs")
    except ValueError as exc:  # pragma: no cover - scipy raises on bad input only
        return _separation_fallback(z, X, f"LP failed: {exc}")
    if res.status != 0:
        return _separation_fallback(z, X, f"LP failed: {res.message}")
    margins = As @ res.x
    if -res.fun <= tol * len(z):
        return SeparationReport("none", None, "only the zero direction separates")
    res2 = linprog(np.zeros(p), A_ub=-As, b_ub=-np.ones(len(z)),
                   bounds=[(None, None)] * p, method="highs")
    if res2.status == 0:
        w = res2.x / scale
        return SeparationReport("complete", w / np.abs(w).max(),
                                "complete separation: every margin strictly positive")
    w = res.x / scale
    n_tied = int(np.sum(np.abs(margins) <= tol))
    return SeparationReport("quasicomplete", w / np.abs(w).max(),
                            f"quasicomplete separation: {n_tied} observation(s) on the boundary")


def _separation_fallback(z, X, why):
    # Divergence heuristic: coefficients of an unpenalised logit fit keep
    # growing as the iteration cap doubles.
    sizes = []
    for cap in (25, 50, 100, 200):
        sizes.append(np.abs(_newton_logit(z, X, cap)).max())
    diverging = sizes[-1] > 10 and sizes[-1] > 1.5 * sizes[0]
    status = "complete" if diverging else "none"
    return SeparationReport("inconclusive", None,
                            f"{why}; divergence heuristic suggests {status} "
                            f"(max|coef| {sizes[0]:.3g} -> {sizes[-1]:.3g})")


def _newton_logit(z, X, iters):
    w = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(X @ w, -700, 700)))
        g = X.T @ (z - p)
        H = X.T @ (X * (p * (1 - p))[:, None]) + 1e-10 * np.eye(X.shape[1])
        w = w + np.linalg.solve(H, g)
    return w
