"""Synthetic generators, CSV ingestion, splitting and standardization."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray               # (n, d), d = 1 for scalar targets
    names: tuple = field(default=())
    target_names: tuple = field(default=())
    split: str = "all"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different sample counts")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains NaN or Inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def y(self):
        """Targets as a vector when d = 1."""
        return self.Y[:, 0] if self.Y.shape[1] == 1 else self.Y

    def subset(self, idx, split=None):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], Y=self.Y[idx], split=split or self.split)


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def friedman(X):
    """0.1 e^{4 x1} + 4 / (1 + e^{-20 (x2 - 0.5)}) + 3 x3 + 2 x4 + x5."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return (0.1 * np.exp(4 * X[:, 0]) + 4.0 / (1.0 + np.exp(-20.0 * (X[:, 1] - 0.5)))
            + 3 * X[:, 2] + 2 * X[:, 3] + X[:, 4])


def gen_friedman_robust(n_clean=9900, n_outlier=100, noise_sd=1.0, seed=0, dim=10) -> Dataset:
    """Uniform [0, 1]^10 inputs plus N(1.5, 0.25 I) outlying inputs; y = f*(x) + N(0, noise_sd^2)."""
    if n_clean < 0 or n_outlier < 0:
        raise ValueError("sizes must be >= 0")
    rng = _rng(seed)
    Xc = rng.random((n_clean, dim))
    Xo = 1.5 + 0.5 * rng.standard_normal((n_outlier, dim))
    X = np.vstack([Xc, Xo])
    y = friedman(X) + noise_sd * rng.standard_normal(X.shape[0])
    return Dataset(X, y, names=tuple(f"x{i + 1}" for i in range(dim)),
                   target_names=("y",))


def gen_heteroscedastic(n=1000, seed=0) -> Dataset:
    """1-D inputs on [0, 1], y = sin(2 pi x) + (0.1 + 0.4 x) eps."""
    rng = _rng(seed)
    x = rng.random(n)
    y = np.sin(2 * np.pi * x) + (0.1 + 0.4 * x) * rng.standard_normal(n)
    return Dataset(x[:, None], y, names=("x",), target_names=("y",))


def gen_multioutput(n=500, d=3, dim=5, noise_sd=0.1, seed=0) -> Dataset:
    """Correlated smooth targets: shared latent signal plus task-specific parts."""
    rng = _rng(seed)
    X = rng.random((n, dim))
    shared = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    Y = np.stack([shared + (j + 1) * 0.3 * np.cos(2 * X[:, (j + 2) % dim])
                  for j in range(d)], axis=1)
    Y = Y + noise_sd * rng.standard_normal(Y.shape)
    return Dataset(X, Y, names=tuple(f"x{i + 1}" for i in range(dim)),
                   target_names=tuple(f"y{j + 1}" for j in range(d)))


# ---------------------------------------------------------------- CSV

class DataFormatError(ValueError):
    pass


def load_csv(path, target_columns=1) -> Dataset:
    """Read a numeric CSV with a header row.

    ``target_columns`` is either a count of trailing columns or a list of
    column names.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: column {col!r} is not numeric: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}:{lineno}: column {col!r} is {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    if isinstance(target_columns, int):
        if not 1 <= target_columns < len(header):
            raise DataFormatError("target column count out of range")
        tcols = list(range(len(header) - target_columns, len(header)))
    else:
        missing = [t for t in target_columns if t not in header]
        if missing:
            raise DataFormatError(f"unknown target columns {missing}")
        tcols = [header.index(t) for t in target_columns]
    xcols = [i for i in range(len(header)) if i not in tcols]
    return Dataset(data[:, xcols], data[:, tcols],
                   names=tuple(header[i] for i in xcols),
                   target_names=tuple(header[i] for i in tcols))


def write_csv(ds: Dataset, path):
    names = list(ds.names) or [f"x{i + 1}" for i in range(ds.X.shape[1])]
    tnames = list(ds.target_names) or [f"y{j + 1}" for j in range(ds.Y.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + tnames)
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def load_manifest(path) -> tuple[Dataset, dict]:
    """Read a dataset manifest ``{"path", "target_columns", "name"}``; relative
    paths resolve against the manifest's directory."""
    path = Path(path)
    man = json.loads(path.read_text())
    csv_path = Path(man["path"])
    if not csv_path.is_absolute():
        csv_path = path.parent / csv_path
    ds = load_csv(csv_path, man.get("target_columns", 1))
    return ds, man


# ---------------------------------------------------------------- splitting

def split(ds: Dataset, test_fraction=0.3, seed=0):
    """Random train/test partition; the test part has round(test_fraction * n) rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(test_fraction * ds.n))
    if not 0 < n_test < ds.n:
        raise ValueError("split leaves an empty side")
    perm = _rng(seed).permutation(ds.n)
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return ds.subset(train_idx, "train"), ds.subset(test_idx, "test")


def kfold_indices(n, k, seed=0):
    """List of (train_idx, val_idx) pairs for k folds."""
    if not 2 <= k <= n:
        raise ValueError("need 2 <= k <= n folds")
    perm = _rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    return [(np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i])),
             np.sort(folds[i])) for i in range(k)]


@dataclass(frozen=True, eq=False)
class Scaler:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None

    def transform(self, ds: Dataset) -> Dataset:
        X = (ds.X - self.x_mean) / self.x_scale
        Y = ds.Y if self.y_mean is None else (ds.Y - self.y_mean) / self.y_scale
        return replace(ds, X=X, Y=Y)

    def inverse_y(self, Y):
        if self.y_mean is None:
            return Y
        return np.asarray(Y) * self.y_scale + self.y_mean


def _fit_scale(A, what):
    mean = A.mean(axis=0)
    sd = A.std(axis=0)
    zero = sd <= 1e-12
    if np.any(zero):
        log.warning("zero-variance %s column(s) %s; scale clamped to 1",
                    what, np.flatnonzero(zero).tolist())
        sd = np.where(zero, 1.0, sd)
    return mean, sd


def standardize(train: Dataset, test: Dataset | None = None, targets=False):
    """Center/scale by training statistics; returns (train', test', scaler)."""
    xm, xs = _fit_scale(train.X, "feature")
    ym = ys = None
    if targets:
        ym, ys = _fit_scale(train.Y, "target")
    sc = Scaler(xm, xs, ym, ys)
    return sc.transform(train), (sc.transform(test) if test is not None else None), sc
