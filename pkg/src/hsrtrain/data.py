"""Unit-norm datasets: synthetic separated samples and CSV round-trips.

CSV layout: a single header ``f0,...,f{d-1},label`` followed by one row per
sample, floats written with 17 significant digits so a write/read cycle is
lossless.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DegenerateDataError, InputError, PackingInfeasibleError, ZeroNormError
from .model import UNIT_NORM_TOL
from .ntk import separability
from .numerics import Rng, row_dots

ATTEMPTS_PER_POINT = 1000


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    delta: float | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim != 2 or len(self.X) == 0:
            raise InputError("dataset needs at least one row")
        if len(self.y) != len(self.X):
            raise InputError("one label per row required")
        norms = np.sqrt(row_dots(self.X, self.X))
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise InputError("dataset rows must have unit Euclidean norm")
        if self.delta is None and len(self.X) >= 2:
            self.delta = separability(self.X).delta

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)


def normalize_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt(row_dots(X, X))
    if np.any(norms == 0):
        raise ZeroNormError("cannot normalize a zero row")
    out = X / norms[:, None]
    # rows already unit to within rounding are left untouched, so normalizing is idempotent
    unit = np.abs(norms - 1.0) <= 4 * np.finfo(float).eps
    out[unit] = X[unit]
    return out


def _labels(rng: Rng, n: int, mode: str) -> np.ndarray:
    if mode == "pm-one":
        return rng.signs(n)
    if mode == "uniform":
        return 2.0 * rng.uniform(n) - 1.0
    raise ValueError(f"unknown label mode {mode!r}")


def gen_separated(rng: Rng, n: int, d: int, delta_target: float, label_mode: str = "pm-one") -> Dataset:
    """Rejection-sample ``n`` unit vectors whose pairwise separation is >= ``delta_target``.

    The budget is ``ATTEMPTS_PER_POINT * n`` candidates. When it runs out and
    ``n <= d``, signed standard basis vectors (separation exactly sqrt(2)) are
    used instead; otherwise the target is reported infeasible.
    """
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    if not 0 < delta_target < math.sqrt(2):
        raise ValueError("delta_target must lie in (0, sqrt(2))")
    accepted = np.empty((n, d))
    k = 0
    budget = ATTEMPTS_PER_POINT * n
    thresh = delta_target * delta_target
    while k < n and budget > 0:
        batch = min(budget, 256)
        cand = rng.normal((batch, d))
        budget -= batch
        cand /= np.sqrt(row_dots(cand, cand))[:, None]
        for c in cand:
            if k:
                g = accepted[:k] @ c
                # min(|x-c|^2, |x+c|^2) = 2 - 2|<x, c>| for unit vectors
                if np.min(2.0 - 2.0 * np.abs(g)) < thresh:
                    continue
            accepted[k] = c
            k += 1
            if k == n:
                break
    if k < n:
        if n > d:
            raise PackingInfeasibleError(
                f"could not place {n} points in R^{d} with separation {delta_target} "
                f"within {ATTEMPTS_PER_POINT * n} attempts"
            )
        accepted = np.zeros((n, d))
        cols = rng.permutation(d)[:n]
        accepted[np.arange(n), cols] = rng.signs(n)
    ds = Dataset(accepted, _labels(rng, n, label_mode))
    if ds.delta < delta_target:
        # guards the 2 - 2|g| shortcut against rounding at the boundary
        return gen_separated(rng, n, d, delta_target, label_mode)
    return ds


def ingest_csv(path, normalize: bool = True) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError("empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2 or header[-1] != "label" or header[:-1] != [f"f{j}" for j in range(len(header) - 1)]:
        raise DatasetFormatError("header must be f0,...,f{d-1},label")
    width = len(header)
    if not body:
        raise DatasetFormatError("no data rows")
    data = np.empty((len(body), width))
    for ln, row in enumerate(body, start=2):
        if len(row) != width:
            raise DatasetFormatError(f"line {ln}: expected {width} fields, got {len(row)}")
        try:
            data[ln - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise DatasetFormatError(f"line {ln}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise DatasetFormatError("non-finite value in file")
    X, y = data[:, :-1], data[:, -1]
    if normalize:
        X = normalize_rows(X)
    ds = Dataset(X, y)
    if len(X) >= 2 and ds.delta == 0:
        raise DegenerateDataError("dataset has coincident or antipodal rows")
    return ds


def export_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(dataset.d)] + ["label"])
        for x, label in zip(dataset.X, dataset.y):
            w.writerow([format(v, ".17g") for v in x] + [format(label, ".17g")])
