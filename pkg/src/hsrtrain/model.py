"""Two-layer shifted-ReLU network with fixed output signs.

``f(W, x) = m**-0.5 * sum_r a_r * max(<w_r, x> - b, 0)``

A neuron fires for ``x`` iff ``<w_r, x> > b`` (strict), for both the value
and the gradient indicator. Every firing decision uses
:func:`hsrtrain.numerics.row_dots`, and every prediction sums fired terms in
ascending neuron order, so dense and sparse paths agree bit for bit whenever
they see the same fire sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DimensionMismatchError, EngineMismatchError, InputError
from .geometry import HsrIndex
from .numerics import Rng, row_dots

UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class ShiftPolicy:
    """How the shift ``b`` is chosen at initialization.

    ``kind="alpha"`` gives ``b = sqrt(0.5 * (1 - alpha) * ln m)`` so that
    ``exp(-b**2 / 2) = m**-((1 - alpha) / 4)``; alpha = 0.2 is the default.
    ``kind="fixed"`` uses ``value`` as ``b`` directly.
    """

    kind: str = "alpha"
    value: float = 0.2

    def resolve(self, m: int) -> float:
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "alpha":
            if not 0 <= self.value <= 1:
                raise ValueError("alpha must lie in [0, 1]")
            return math.sqrt(0.5 * (1.0 - self.value) * math.log(m))
        raise ValueError(f"unknown shift policy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "ShiftPolicy":
        """``"default"``, ``"alpha:0.3"`` or ``"fixed:1.5"``."""
        if text in ("default", "alpha"):
            return cls()
        kind, _, val = text.partition(":")
        if kind not in ("alpha", "fixed") or not val:
            raise ValueError(f"bad shift policy {text!r}")
        return cls(kind, float(val))


class NetworkState:
    """Weights ``W`` (one row per neuron), signs ``a`` and shift ``b``.

    ``a`` and ``b`` are frozen after construction; only ``W`` and ``step``
    change during training.
    """

    def __init__(self, W, a, b: float, step: int = 0):
        W = np.array(W, dtype=np.float64)
        a = np.array(a, dtype=np.float64)
        if W.ndim != 2 or a.shape != (W.shape[0],):
            raise DimensionMismatchError("W must be (m, d) and a must have length m")
        if not np.all(np.abs(a) == 1):
            raise ValueError("output signs must be +-1")
        a.flags.writeable = False
        self.W = W
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", float(b))
        self.step = step

    def __setattr__(self, name, value):
        if name in ("a", "b", "_a", "_b"):
            raise AttributeError(f"{name} is fixed after initialization")
        object.__setattr__(self, name, value)

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def b(self) -> float:
        return self._b

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "NetworkState":
        return NetworkState(self.W.copy(), self._a, self._b, self.step)


def init_network(rng: Rng, d: int, m: int, shift: ShiftPolicy | float = ShiftPolicy()) -> NetworkState:
    """Gaussian ``W`` (drawn first, row by row) then Rademacher ``a``."""
    if d < 1 or m < 1:
        raise ValueError(f"invalid sizes d={d}, m={m}")
    if not isinstance(shift, ShiftPolicy):
        shift = ShiftPolicy("fixed", float(shift))
    W = rng.normal((m, d))
    a = rng.signs(m)
    return NetworkState(W, a, shift.resolve(m))


def shifted_relu(z, b):
    return np.maximum(np.asarray(z) - b, 0.0) if np.ndim(z) else max(z - b, 0.0)


def _check_unit(X: np.ndarray):
    norms = np.sqrt(row_dots(X, X))
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise InputError("inputs must have unit Euclidean norm")


def forward(net: NetworkState, x, active=None) -> float:
    """Prediction for a single unit-norm input.

    ``active`` restricts the sum to a superset of the fire set.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d,):
        raise DimensionMismatchError(f"expected input of dimension {net.d}")
    _check_unit(x[None])
    r = np.arange(net.m) if active is None else np.unique(np.asarray(list(active), dtype=np.int64))
    z = row_dots(net.W[r], x)
    fired = z > net.b
    terms = net.a[r[fired]] * (z[fired] - net.b)
    # reduceat sums sequentially, the same order predict() uses
    total = float(np.add.reduceat(terms, [0])[0]) if len(terms) else 0.0
    return total / math.sqrt(net.m)


class FireLedger:
    """Fire sets of an ``n``-sample, ``m``-neuron network.

    Stored once as the set of firing pairs ``(i, r)`` sorted sample-major;
    ``fire_set(i)`` and ``samples_of(r)`` are the two views of that set.
    """

    def __init__(self, n: int, m: int, samples=(), neurons=()):
        self.n, self.m = int(n), int(m)
        s = np.asarray(samples, dtype=np.int64).reshape(-1)
        r = np.asarray(neurons, dtype=np.int64).reshape(-1)
        if s.shape != r.shape:
            raise ConsistencyError("pair arrays differ in length")
        if len(s) and (s.min() < 0 or s.max() >= n or r.min() < 0 or r.max() >= m):
            raise ConsistencyError("pair index out of range")
        keys = np.unique(s * self.m + r)
        self._keys = keys

    @classmethod
    def from_keys(cls, n, m, keys) -> "FireLedger":
        led = cls(n, m)
        led._keys = np.asarray(keys, dtype=np.int64)
        return led

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def samples(self) -> np.ndarray:
        return self._keys // self.m

    @property
    def neurons(self) -> np.ndarray:
        return self._keys % self.m

    def __len__(self):
        return len(self._keys)

    def __eq__(self, other):
        if not isinstance(other, FireLedger):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and np.array_equal(self._keys, other._keys)

    def sample_counts(self) -> np.ndarray:
        """``k_i``: number of neurons firing for each sample."""
        return np.bincount(self.samples, minlength=self.n)

    def neuron_counts(self) -> np.ndarray:
        """Number of samples each neuron fires for."""
        return np.bincount(self.neurons, minlength=self.m)

    def fire_set(self, i: int) -> np.ndarray:
        lo, hi = np.searchsorted(self._keys, [i * self.m, (i + 1) * self.m])
        return self._keys[lo:hi] - i * self.m

    def neuron_major(self):
        """Pairs sorted by neuron then sample: ``(neurons, samples)``."""
        r, s = self.neurons, self.samples
        order = np.lexsort((s, r))
        return r[order], s[order]

    def samples_of(self, r: int) -> np.ndarray:
        return np.sort(self.samples[self.neurons == r])

    def active_neurons(self) -> np.ndarray:
        return np.unique(self.neurons)

    def check(self) -> None:
        """Verify the two views describe the same pair set."""
        if len(self._keys) and (np.any(np.diff(self._keys) <= 0)):
            raise ConsistencyError("ledger keys not strictly increasing")
        r, s = self.neuron_major()
        if not np.array_equal(np.sort(s * self.m + r), self._keys):
            raise ConsistencyError("sample and neuron views disagree")
        if self.sample_counts().sum() != self.neuron_counts().sum():
            raise ConsistencyError("fire count totals disagree")

    def replace_neurons(self, neurons, new_samples, new_neurons) -> "FireLedger":
        """Drop every pair of ``neurons`` and add the given pairs."""
        drop = np.isin(self.neurons, np.asarray(neurons, dtype=np.int64))
        add = np.asarray(new_samples, dtype=np.int64) * self.m + np.asarray(new_neurons, dtype=np.int64)
        keys = np.union1d(self._keys[~drop], add)
        return FireLedger.from_keys(self.n, self.m, keys)


@dataclass
class FlipRecord:
    """Per-sample counts of neurons whose fire indicator changed at step ``t``."""

    t: int
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def between(cls, prev: FireLedger, cur: FireLedger, t: int) -> "FlipRecord":
        changed = np.setxor1d(prev.keys, cur.keys, assume_unique=True)
        return cls(t, np.bincount(changed // cur.m, minlength=cur.n))


@dataclass
class LossResult:
    value: float
    err: np.ndarray  # y - u
    u: np.ndarray


def dense_ledger(net: NetworkState, X: np.ndarray) -> FireLedger:
    """Fire sets by scanning every (sample, neuron) pair."""
    keys = []
    for i, x in enumerate(X):
        r = np.flatnonzero(row_dots(net.W, x) > net.b)
        keys.append(i * net.m + r)
    return FireLedger.from_keys(len(X), net.m, np.concatenate(keys) if keys else [])


def predict(net: NetworkState, X: np.ndarray, ledger: FireLedger, verify: bool = True) -> np.ndarray:
    """Predictions for every row of ``X`` using only the ledger's pairs."""
    if ledger.m != net.m or ledger.n != len(X):
        raise ConsistencyError("ledger shape does not match network and data")
    s, r = ledger.samples, ledger.neurons
    z = row_dots(net.W[r], X[s])
    if verify and np.any(z <= net.b):
        raise ConsistencyError("ledger lists a neuron that does not fire")
    terms = net.a[r] * (z - net.b)
    u = np.zeros(len(X))
    if len(terms):
        starts = np.searchsorted(s, np.arange(len(X)))
        nonempty = starts < np.append(starts[1:], len(s))
        u[nonempty] = np.add.reduceat(terms, starts[nonempty])
    return u / math.sqrt(net.m)


def loss(net: NetworkState, dataset, ledger: FireLedger | None = None) -> LossResult:
    X, y = dataset.X, dataset.y
    if len(X) == 0:
        raise ValueError("dataset is empty")
    if ledger is None:
        ledger = dense_ledger(net, X)
    u = predict(net, X, ledger)
    err = y - u
    return LossResult(0.5 * float(err @ err), err, u)


@dataclass
class Gradient:
    """Per-neuron gradient rows; neurons not listed have zero gradient."""

    neurons: np.ndarray
    rows: np.ndarray
    m: int

    def dense(self) -> np.ndarray:
        G = np.zeros((self.m, self.rows.shape[1] if self.rows.ndim == 2 else 0))
        G[self.neurons] = self.rows
        return G


def gradient_from_residual(net: NetworkState, X: np.ndarray, ledger: FireLedger, residual: np.ndarray) -> Gradient:
    """``dL/dw_r = m**-0.5 * a_r * sum_{i: r fires on i} (f_i - y_i) x_i``.

    Contributions are accumulated per neuron in ascending sample order.
    """
    r, s = ledger.neuron_major()
    if len(r) == 0:
        return Gradient(np.empty(0, np.int64), np.zeros((0, net.d)), net.m)
    contrib = residual[s, None] * X[s]
    starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
    neurons = r[starts]
    rows = np.add.reduceat(contrib, starts, axis=0)
    rows *= (net.a[neurons] / math.sqrt(net.m))[:, None]
    return Gradient(neurons, rows, net.m)


def gradient(net: NetworkState, dataset, ledger: FireLedger) -> Gradient:
    res = loss(net, dataset, ledger)
    return gradient_from_residual(net, dataset.X, ledger, -res.err)


def apply_update(net: NetworkState, grads: Gradient, eta: float) -> np.ndarray:
    """``w_r <- w_r - eta * grad_r``; returns the neurons whose weights changed."""
    if not eta > 0:
        raise ValueError("learning rate must be positive")
    net.step += 1
    if len(grads.neurons) == 0:
        return np.empty(0, np.int64)
    old = net.W[grads.neurons]
    new = old - eta * grads.rows
    net.W[grads.neurons] = new
    moved = np.any(new != old, axis=1)
    return grads.neurons[moved]


def weight_displacement(net: NetworkState, W0) -> float:
    """``max_r ||w_r(t) - w_r(0)||_2``."""
    W0 = np.asarray(W0)
    if W0.shape != net.W.shape:
        raise DimensionMismatchError("weight snapshot has a different shape")
    diff = net.W - W0
    return float(np.sqrt(row_dots(diff, diff).max())) if len(diff) else 0.0


def rebuild_ledger(net: NetworkState, X, engine: str = "dense", index: HsrIndex | None = None, point_ids=None) -> FireLedger:
    """Fire ledger from scratch using one of three query engines.

    * ``"dense"``: scan all pairs.
    * ``"weight-index"``: ``index`` holds the weights; ``point_ids[r]`` is the
      id of neuron ``r``'s point (``r`` itself when omitted). One query per sample.
    * ``"data-index"``: ``index`` holds the samples, with ids equal to sample
      positions. One query per neuron.
    """
    X = np.asarray(X, dtype=np.float64)
    n, m = len(X), net.m
    if engine == "dense":
        return dense_ledger(net, X)
    if index is None:
        raise EngineMismatchError(f"engine {engine!r} needs an index")
    if index.dim != net.d:
        raise EngineMismatchError("index dimension differs from network input dimension")
    if engine == "weight-index":
        if index.live_count != m:
            raise EngineMismatchError("weight index does not hold one point per neuron")
        qi, pid = index.query_many(X, net.b)
        if point_ids is None:
            return FireLedger(n, m, qi, pid)
        point_ids = np.asarray(point_ids, dtype=np.int64)
        order = np.argsort(point_ids)
        pos = np.minimum(np.searchsorted(point_ids[order], pid), m - 1)
        if np.any(point_ids[order][pos] != pid):
            raise EngineMismatchError("index reported a point owned by no neuron")
        return FireLedger(n, m, qi, order[pos])
    if engine == "data-index":
        if index.live_count != n:
            raise EngineMismatchError("data index does not hold one point per sample")
        qr, sid = index.query_many(net.W, net.b)
        return FireLedger(n, m, sid, qr)
    raise EngineMismatchError(f"unknown engine {engine!r}")
