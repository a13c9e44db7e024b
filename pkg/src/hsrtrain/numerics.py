"""Seeded randomness, Gaussian helpers and small dense linear algebra.

Random streams come from the Philox4x64 counter-based generator keyed by
``(seed, stream)``. Uniforms take the top 53 bits of each 64-bit word and
are centred in their bucket, ``u = (k + 0.5) * 2**-53``, so they lie in the
open interval (0, 1). Gaussians are produced by the inverse normal CDF
(``scipy.special.ndtri``) applied to those uniforms, one word per variate.
Both choices are fixed so traces are bit-reproducible for a given seed.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import DimensionMismatchError, InvalidDimensionError, NumericInputError

_TWO_M53 = 2.0**-53
_MASK64 = (1 << 64) - 1


class Rng:
    """Deterministic random stream identified by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def spawn(self, stream: int) -> "Rng":
        """Fresh generator with the same seed on another stream."""
        return Rng(self.seed, stream)

    def raw(self, size: int) -> np.ndarray:
        return self._bits.random_raw(size)

    def uniform(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        count = int(np.prod(shape, dtype=np.int64))
        words = self.raw(count) >> np.uint64(11)
        return ((words.astype(np.float64) + 0.5) * _TWO_M53).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        return special.ndtri(self.uniform(shape))

    def signs(self, size: int) -> np.ndarray:
        top = self.raw(size) >> np.uint64(63)
        return np.where(top == 1, 1.0, -1.0)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers in ``[0, high)`` (multiply-shift on the uniform)."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniforms; ties have probability ~2**-53
        return np.argsort(self.uniform(n), kind="stable")


def gaussian_vector(rng: Rng, d: int) -> np.ndarray:
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    return rng.normal(d)


def rademacher(rng: Rng) -> int:
    return int(rng.signs(1)[0])


def gaussian_upper_tail(b: float) -> float:
    """P[Z > b] for standard normal Z, via the complementary error function."""
    return float(0.5 * special.erfc(b / math.sqrt(2.0)))


def row_dots(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise inner products, with broadcasting.

    Every firing decision in the package goes through this one routine so
    that the naive scan, the tree leaves and the trainer agree bit for bit.
    """
    A, B = np.broadcast_arrays(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))
    return np.multiply(A, B).sum(axis=-1)


class SymMatrix:
    """Square matrix whose storage is exactly symmetric.

    The upper triangle is authoritative; the lower triangle is mirrored from
    it on construction. Inputs that are visibly asymmetric are rejected.
    """

    __slots__ = ("_a",)

    def __init__(self, entries, tol: float = 1e-12):
        a = np.array(entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidDimensionError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericInputError("matrix has non-finite entries")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.T).max() > tol * scale:
            raise NumericInputError("matrix is not symmetric")
        upper = np.triu(a)
        a = upper + np.triu(a, 1).T
        a.flags.writeable = False
        self._a = a

    @property
    def order(self) -> int:
        return self._a.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        return self._a if dtype is None else self._a.astype(dtype)

    def __getitem__(self, idx):
        return self._a[idx]

    def __repr__(self):
        return f"SymMatrix(order={self.order})"


def sym_eig(M: SymMatrix):
    """All eigenpairs, ascending. Backed by LAPACK ``dsyevd``."""
    a = M.entries
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix has non-finite entries")
    vals, vecs = np.linalg.eigh(a)
    # sign convention: largest-magnitude component of each vector is positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def sym_eig_min(M: SymMatrix, tol: float = 1e-10):
    """Smallest eigenvalue and a unit eigenvector of ``M``.

    Raises if the returned pair fails ``||Mv - lam v|| <= tol * ||M||_F``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    vals, vecs = sym_eig(M)
    lam, v = float(vals[0]), vecs[:, 0].copy()
    a = M.entries
    fro = float(np.linalg.norm(a))
    resid = float(np.linalg.norm(a @ v - lam * v))
    if resid > tol * max(fro, np.finfo(float).tiny):
        raise NumericInputError(f"eigen residual {resid:.3e} exceeds tolerance")
    return lam, v


def frobenius_distance(A, B) -> float:
    a = np.asarray(A, dtype=np.float64)
    b = np.asarray(B, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"order mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
