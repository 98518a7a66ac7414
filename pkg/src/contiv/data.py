"""Observation container, fold assignment, and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyFile, MissingColumn, NonBinaryTreatment, NonNumericCell

__all__ = ["Dataset", "three_fold_labels", "two_fold_labels", "rescale_unit", "ingest_csv"]


@dataclass(frozen=True)
class Dataset:
    """Immutable sample of observations (X, Z, A, Y) with fold labels.

    ``fold`` holds integer labels (-1 means unassigned).
    """

    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    y: np.ndarray
    fold: np.ndarray

    def __post_init__(self):
        n = self.z.shape[0]
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise ValueError("x must be (n, d)")
        for name in ("a", "y", "fold"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape (n,)")

    @classmethod
    def from_arrays(cls, x, z, a, y, fold=None) -> "Dataset":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and np.asarray(z).shape[0] != 1:
            x = x.T
        z = np.asarray(z, dtype=float)
        a = np.asarray(a, dtype=float)
        y = np.asarray(y, dtype=float)
        if fold is None:
            fold = np.full(z.shape[0], -1, dtype=int)
        return cls(x=x, z=z, a=a, y=y, fold=np.asarray(fold, dtype=int))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def outcome(self, target: str) -> np.ndarray:
        if target == "outcome":
            return self.y
        if target == "treatment":
            return self.a
        raise ValueError(f"unknown target {target!r}")

    def subset(self, idx) -> "Dataset":
        return Dataset(
            x=self.x[idx], z=self.z[idx], a=self.a[idx], y=self.y[idx], fold=self.fold[idx]
        )

    def with_folds(self, k: int, rng: np.random.Generator) -> "Dataset":
        if k == 3:
            labels = three_fold_labels(self.n, rng)
        elif k == 2:
            labels = two_fold_labels(self.n, rng)
        else:
            raise ValueError("only 2- or 3-way folds are used")
        return replace(self, fold=labels)

    def fold_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.fold == label)


def three_fold_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous thirds after a seeded shuffle.

    Sizes are (n//3, n//3, n//3 + n%3); the remainder sits in fold 2,
    which is the regression fold in the unrotated scheme.
    """
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=int)
    m = n // 3
    labels[perm[:m]] = 0
    labels[perm[m : 2 * m]] = 1
    labels[perm[2 * m :]] = 2
    return labels


def two_fold_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=int)
    m = n // 2
    labels[perm[:m]] = 0
    labels[perm[m:]] = 1
    return labels


def rescale_unit(z: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    """Affinely map z onto [0, 1]; returns the mapped values and (lo, hi)."""
    z = np.asarray(z, dtype=float)
    lo, hi = float(np.min(z)), float(np.max(z))
    if hi <= lo:
        raise ValueError("z has no spread; cannot rescale")
    return (z - lo) / (hi - lo), (lo, hi)


def ingest_csv(path, require_binary: bool = True) -> Dataset:
    """Read a dataset from CSV with columns z, a, y, x1..xd.

    Column order is free and extra columns are ignored.  The treatment
    column must contain only 0/1 unless ``require_binary`` is False.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        rows = list(reader)

    for col in ("z", "a", "y"):
        if col not in header:
            raise MissingColumn(col)
    d = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    for j in range(1, d + 1):
        if f"x{j}" not in header:
            raise MissingColumn(f"x{j}")

    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFile(f"{path}: no data rows")

    col_of = {name: header.index(name) for name in ("z", "a", "y")}
    xcols = [header.index(f"x{j}") for j in range(1, d + 1)]

    def parse(row_i: int, col_i: int) -> float:
        cell = rows[row_i][col_i].strip() if col_i < len(rows[row_i]) else ""
        try:
            return float(cell)
        except ValueError:
            raise NonNumericCell(
                f"row {row_i + 2}, column {header[col_i]!r}: {cell!r}"
            ) from None

    n = len(rows)
    z = np.empty(n)
    a = np.empty(n)
    y = np.empty(n)
    x = np.empty((n, d))
    for i in range(n):
        z[i] = parse(i, col_of["z"])
        a[i] = parse(i, col_of["a"])
        y[i] = parse(i, col_of["y"])
        for j, ci in enumerate(xcols):
            x[i, j] = parse(i, ci)

    if require_binary:
        bad = np.flatnonzero(~np.isin(a, (0.0, 1.0)))
        if bad.size:
            raise NonBinaryTreatment(f"row {bad[0] + 2}: a = {a[bad[0]]!r}")

    return Dataset.from_arrays(x=x, z=z, a=a, y=y)
