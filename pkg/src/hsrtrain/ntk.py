"""Shifted neural tangent kernels and their spectral gap.

``H_ij = <x_i, x_j> * P[<w, x_i> > b and <w, x_j> > b]``

The discrete kernel takes the probability over the rows of a weight matrix;
the continuous kernel takes it over ``w ~ N(0, I_d)`` and is estimated by
Monte Carlo. Both go through :func:`_cofire_counts`, which counts joint
firings as exact integers, so the estimate does not depend on how samples
are chunked and a width-``m`` network reproduces an ``m``-sample estimate
drawn from the same stream exactly.

Monte-Carlo uncertainty is reported by batch means: samples are split into
``MC_BATCHES`` contiguous batches, and the standard error of ``lambda_min``
is that of the linear functional ``v^T H_batch v`` with ``v`` the bottom
eigenvector of the pooled estimate (first-order perturbation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, UnreliableLambdaError
from .model import NetworkState
from .numerics import Rng, SymMatrix, frobenius_distance, row_dots, sym_eig_min

MC_BATCHES = 32
_CHUNK = 1 << 16


@dataclass
class KernelReport:
    H: SymMatrix
    lambda_min: float
    kind: str  # continuous-mc | discrete-at-init | discrete-at-step-t
    b: float
    mc_samples: int = 0
    lambda_se: float = 0.0
    entry_se: np.ndarray | None = None
    eigvec: np.ndarray | None = field(default=None, repr=False)


@dataclass
class SeparabilityReport:
    delta: float
    pair: tuple[int, int]
    mode: str  # "minus" (||x_i - x_j||) or "plus" (||x_i + x_j||)


def separability(X) -> SeparabilityReport:
    """``min_{i != j} min(||x_i - x_j||, ||x_i + x_j||)`` with its pair."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    n = len(X)
    if n < 2:
        raise ValueError("separability needs at least two points")
    G = X @ X.T
    sq = np.diag(G)
    minus = sq[:, None] + sq[None, :] - 2 * G
    plus = sq[:, None] + sq[None, :] + 2 * G
    iu = np.triu_indices(n, 1)
    # recompute candidates exactly from differences to avoid Gram cancellation
    both = np.minimum(minus[iu], plus[iu])
    cand = np.argsort(both, kind="stable")[: min(len(both), 8)]
    best = (math.inf, (0, 1), "minus")
    for c in cand:
        i, j = int(iu[0][c]), int(iu[1][c])
        dm = float(np.linalg.norm(X[i] - X[j]))
        dp = float(np.linalg.norm(X[i] + X[j]))
        for val, mode in ((dm, "minus"), (dp, "plus")):
            if val < best[0]:
                best = (val, (i, j), mode)
    if best[0] == 0.0:
        raise DegenerateDataError(f"points {best[1]} coincide or are antipodal")
    return SeparabilityReport(best[0], best[1], best[2])


def _cofire_counts(W: np.ndarray, X: np.ndarray, b: float) -> np.ndarray:
    """Integer matrix ``C_ij = #{r : <w_r, x_i> > b and <w_r, x_j> > b}``."""
    F = np.stack([row_dots(W, x) > b for x in X], axis=1).astype(np.float64)
    return F.T @ F


def _kernel(counts: np.ndarray, X: np.ndarray, total: int) -> np.ndarray:
    return (counts / total) * (X @ X.T)


def h_discrete(net: NetworkState, dataset, kind: str = "discrete-at-step-t") -> KernelReport:
    X = np.asarray(dataset.X)
    counts = np.zeros((len(X), len(X)))
    for c0 in range(0, net.m, _CHUNK):
        counts += _cofire_counts(net.W[c0 : c0 + _CHUNK], X, net.b)
    H = SymMatrix(_kernel(counts, X, net.m))
    lam, v = sym_eig_min(H)
    return KernelReport(H, lam, kind, net.b, eigvec=v)


def h_continuous_mc(rng: Rng, dataset, b: float, samples: int) -> KernelReport:
    """Monte-Carlo estimate of the continuous kernel from ``samples`` Gaussian draws."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X = np.asarray(dataset.X)
    n, d = X.shape
    nb = min(MC_BATCHES, samples)
    edges = np.linspace(0, samples, nb + 1).astype(np.int64)
    batch_counts = np.zeros((nb, n, n))
    for k in range(nb):
        left = int(edges[k + 1] - edges[k])
        while left:
            take = min(left, _CHUNK)
            batch_counts[k] += _cofire_counts(rng.normal((take, d)), X, b)
            left -= take
    counts = batch_counts.sum(axis=0)
    H = SymMatrix(_kernel(counts, X, samples))
    lam, v = sym_eig_min(H)
    gram = X @ X.T
    p = counts / samples
    entry_se = np.abs(gram) * np.sqrt(p * (1 - p) / samples)
    if nb > 1:
        sizes = np.diff(edges).astype(np.float64)
        per = np.array([v @ (batch_counts[k] / sizes[k] * gram) @ v for k in range(nb)])
        # weighted batch means; batches differ in size by at most one sample
        mean = np.average(per, weights=sizes)
        var = np.average((per - mean) ** 2, weights=sizes) * nb / (nb - 1)
        lam_se = math.sqrt(var / nb)
    else:
        lam_se = math.inf
    return KernelReport(H, lam, "continuous-mc", float(b), samples, lam_se, entry_se, v)


@dataclass
class GapCheck:
    lower_bound: float
    upper_bound: float
    lambda_min: float
    lambda_se: float
    lower_ok: bool
    upper_ok: bool
    lower_margin: float
    upper_margin: float
    reliable: bool  # 3 standard errors fit inside the lower margin

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok


def gap_bounds(delta: float, n: int, b: float) -> tuple[float, float]:
    tail = math.exp(-b * b / 2)
    return tail * delta / (100 * n * n), tail


def check_spectral_gap(report: KernelReport, delta: float, n: int, b: float) -> GapCheck:
    """Compare ``lambda_min`` with ``exp(-b^2/2) delta / (100 n^2) <= lam <= exp(-b^2/2)``."""
    lo, hi = gap_bounds(delta, n, b)
    lam = report.lambda_min
    return GapCheck(
        lower_bound=lo,
        upper_bound=hi,
        lambda_min=lam,
        lambda_se=report.lambda_se,
        lower_ok=lo <= lam,
        upper_ok=lam <= hi,
        lower_margin=lam - lo,
        upper_margin=hi - lam,
        reliable=3 * report.lambda_se < lam - lo,
    )


def estimate_lambda(rng: Rng, dataset, b: float, samples: int) -> KernelReport:
    """Continuous-kernel estimate that refuses to return a gap inside its noise."""
    rep = h_continuous_mc(rng, dataset, b, samples)
    if not rep.lambda_min > 3 * rep.lambda_se:
        raise UnreliableLambdaError(
            f"lambda_min={rep.lambda_min:.3e} is within 3 standard errors ({rep.lambda_se:.3e}); "
            "increase the Monte-Carlo sample count"
        )
    return rep


@dataclass
class ConcentrationRow:
    m: int
    median_distance: float
    distances: list[float]
    lambda_mins: list[float]
    frac_above: float  # share of trials with lambda_min(H_dis) >= 0.75 * lambda_hat


def kernel_concentration(rng: Rng, dataset, b: float, m_grid, trials: int, reference: KernelReport | None = None, ref_samples: int = 10**6):
    """Distance of width-``m`` kernels to a high-sample continuous estimate.

    Each (width, trial) pair draws its weights from its own stream, derived
    from ``rng.seed``; the reference estimate uses ``rng`` itself.
    """
    m_grid = list(m_grid)
    if m_grid != sorted(m_grid):
        raise ValueError("m_grid must be ascending")
    X = np.asarray(dataset.X)
    if reference is None:
        reference = h_continuous_mc(rng, dataset, b, ref_samples)
    lam_hat = reference.lambda_min
    rows = []
    for gi, m in enumerate(m_grid):
        dists, lams = [], []
        for t in range(trials):
            sub = Rng(rng.seed, 1_000_000 + gi * 10_000 + t)
            W = sub.normal((m, X.shape[1]))
            H = _kernel(_cofire_counts(W, X, b), X, m)
            dists.append(frobenius_distance(H, reference.H))
            lams.append(sym_eig_min(SymMatrix(H))[0])
        frac = float(np.mean(np.asarray(lams) >= 0.75 * lam_hat))
        rows.append(ConcentrationRow(m, float(np.median(dists)), dists, lams, frac))
    return rows, reference
