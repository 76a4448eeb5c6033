"""Observational datasets: validation, CSV I/O, standardization and folds.

A dataset is a covariate matrix ``X`` (n x p), a binary treatment ``T`` and a
real outcome ``Y``. The CSV layout is fixed: header ``Y,T,<covariate names>``
followed by one numeric row per unit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .rng import make_rng

MAX_FOLD_RETRIES = 1000


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        T = np.asarray(self.T)
        Y = np.array(self.Y, dtype=float).ravel()
        if X.ndim != 2:
            raise DataError("X must be a 2-d array")
        n, p = X.shape
        if p < 1:
            raise DataError("need at least one covariate column")
        if T.shape != (n,) or Y.shape != (n,):
            raise DataError(f"X has {n} rows but T has shape {T.shape} and Y has shape {Y.shape}")
        if not np.all(np.isfinite(X)):
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite covariate at row {i + 1}, column {j + 1}")
        if not np.all(np.isfinite(Y)):
            i = int(np.flatnonzero(~np.isfinite(Y))[0])
            raise DataError(f"non-finite outcome at row {i + 1}")
        bad = ~np.isin(T, (0, 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"treatment must be 0 or 1, got {T[i]!r} at row {i + 1}")
        T = T.astype(float)
        if T.sum() == 0 or T.sum() == n:
            raise DataError("both treatment arms must be non-empty")
        names = tuple(self.column_names) if len(self.column_names) else tuple(f"X{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} covariates")
        for arr in (X, T, Y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_treated(self):
        return int(self.T.sum())

    @property
    def n_control(self):
        return self.n - self.n_treated

    def with_outcome(self, Y):
        return Dataset(self.X, self.T, Y, self.column_names)

    def with_treatment(self, T):
        return Dataset(self.X, T, self.Y, self.column_names)


@dataclass(frozen=True)
class ScalingRecord:
    """Column means/scales used by :func:`standardize_columns`.

    ``kept`` indexes the retained columns of the original matrix and ``dropped``
    names the constant columns that were removed.
    """

    kept: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    dropped: tuple = field(default=())

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        return (X[:, self.kept] - self.mean) / self.scale

    def unscale(self, intercept, coefficients):
        """Map (intercept, coefficients) fit on the standardized scale back to raw columns.

        Returns coefficients for every original column; dropped columns get 0.
        """
        coefficients = np.asarray(coefficients, dtype=float)
        raw = coefficients / self.scale
        b0 = float(intercept - raw @ self.mean)
        full = np.zeros(len(self.kept) + len(self.dropped))
        full[self.kept] = raw
        return b0, full


def standardize_columns(d: Dataset):
    """Center and scale every covariate to mean 0 and sd 1 (n - 1 denominator).

    Constant columns are dropped with a warning. Y and T are left untouched.
    """
    X = d.X
    constant = np.ptp(X, axis=0) == 0
    if constant.all():
        raise DataError("all covariate columns are constant")
    dropped = tuple(name for name, c in zip(d.column_names, constant) if c)
    if dropped:
        warnings.warn(f"dropping constant covariate columns: {', '.join(dropped)}", stacklevel=2)
    kept = np.flatnonzero(~constant)
    mean = X[:, kept].mean(axis=0)
    scale = X[:, kept].std(axis=0, ddof=1)
    record = ScalingRecord(kept=kept, mean=mean, scale=scale, dropped=dropped)
    names = tuple(d.column_names[j] for j in kept)
    return Dataset(record.transform(X), d.T, d.Y, names), record


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    K: int

    def train_test(self, k):
        """Boolean masks (train, test) for fold ``k`` in 1..K."""
        test = self.fold_of == k
        return ~test, test


def balanced_folds(T, K, rng):
    """Random folds of near-equal size, each containing both classes of ``T``.

    Units are shuffled and dealt round-robin; the shuffle is redrawn until every
    fold holds at least one unit of each class. Returns fold labels in 1..K.
    """
    T = np.asarray(T)
    n = len(T)
    if not 2 <= K <= n:
        raise DataError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    smaller = int(min(T.sum(), n - T.sum()))
    if smaller < K:
        raise DataError(
            f"smaller arm has {smaller} units, cannot place one in each of {K} folds; use K <= {smaller}"
        )
    for _ in range(MAX_FOLD_RETRIES):
        perm = rng.permutation(n)
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[perm] = np.arange(n) % K + 1
        treated_per_fold = np.bincount(fold_of, weights=T, minlength=K + 1)[1:]
        sizes = np.bincount(fold_of, minlength=K + 1)[1:]
        if np.all(treated_per_fold >= 1) and np.all(sizes - treated_per_fold >= 1):
            return fold_of
    raise DataError(f"could not find a fold split with both arms in all {K} folds; use a smaller K")


def random_folds(n, K, rng):
    """Random folds of near-equal size, ignoring any labels."""
    if not 2 <= K <= n:
        raise DataError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % K + 1
    return fold_of


def assign_folds(d: Dataset, K: int, seed: int) -> FoldAssignment:
    rng = make_rng(seed)
    return FoldAssignment(fold_of=balanced_folds(d.T, K, rng), K=K)


def _parse_float(cell, row, col):
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} at row {row}, column {col!r}") from None


def load_csv(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "Y" or header[1] != "T":
            raise DataError(f"{path}: header must be Y,T,X1,...,Xp; got {','.join(header)}")
        names = header[2:]
        if any(not h for h in names) or len(set(names)) != len(names):
            raise DataError(f"{path}: covariate names must be non-empty and unique")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            rows.append([_parse_float(c, lineno, h) for c, h in zip(rec, header)])
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows)
    T = data[:, 1]
    bad = ~np.isin(T, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{path}: treatment value {T[i]:g} at row {i + 2}, column 'T' is not 0 or 1")
    try:
        return Dataset(data[:, 2:], T, data[:, 0], tuple(names))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_csv(d: Dataset, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Y", "T", *d.column_names])
        for y, t, x in zip(d.Y, d.T, d.X):
            w.writerow([f"{y:.17g}", str(int(t)), *(f"{v:.17g}" for v in x)])
