"""Full-batch gradient descent in three modes that differ only in how fire sets are found.

* ``dense``: evaluate all ``n * m`` inner products each step.
* ``weight-index``: keep the weights in an :class:`HsrIndex`, query it with
  every sample each step, and delete/re-insert the weights that moved.
* ``data-index``: keep the samples in a static :class:`HsrIndex`, query it
  once per neuron at start-up, and after each step re-query only the neurons
  that moved, patching both views of the fire ledger.

The modes share every numeric kernel, so for a given seed they produce the
same iterates up to summation order. Cost is counted in inner products (one
per scanned point or per node bound in an index query, one per evaluated
``<w_r, x_i>`` in the forward pass); dense mode costs exactly ``n * m``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, ConsistencyError, DivergenceError, UnreliableLambdaError
from .geometry import HsrStats, hsr_init
from .model import (
    FireLedger,
    FlipRecord,
    NetworkState,
    ShiftPolicy,
    apply_update,
    dense_ledger,
    gradient_from_residual,
    init_network,
    predict,
)
from .ntk import h_continuous_mc
from .numerics import Rng, row_dots

MODES = ("dense", "weight-index", "data-index")
PHASES = ("query", "forward", "backward", "update", "maintain")
MAINTENANCE = ("requery", "certified")

# stream ids under TrainConfig.seed
STREAM_INIT = 0
STREAM_LAMBDA = 1


@dataclass
class TrainConfig:
    mode: str = "dense"
    m: int = 1024
    T: int = 1000
    eta: float | None = None  # None: eta = lambda_hat / (4 n^2)
    shift: ShiftPolicy = field(default_factory=ShiftPolicy)
    seed: int = 0
    stop_threshold: float = 1e-3  # stop once ||err||^2 <= this * ||err(0)||^2
    leaf_capacity: int = 16
    rebuild_fraction: float = 0.25
    mc_samples: int = 100_000
    maintenance: str = "requery"
    check_ledger: bool = False
    divergence_factor: float = 10.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0 < self.stop_threshold <= 1:
            raise ConfigError("stop_threshold must lie in (0, 1]")
        if self.maintenance not in MAINTENANCE:
            raise ConfigError(f"maintenance must be one of {MAINTENANCE}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["shift"] = f"{self.shift.kind}:{self.shift.value}"
        return out


@dataclass
class IterRecord:
    t: int
    err2: float
    kmin: int
    kmedian: float
    kmax: int
    kargmax: int
    ksum: int
    flips: int
    ops: dict
    ops_total: int
    hsr: dict
    displacement: float
    millis: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainTrace:
    mode: str
    n: int
    m: int
    b: float
    eta: float
    lambda_hat: float | None
    lambda_se: float | None
    init_ops: int = 0
    records: list[IterRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def err2(self) -> np.ndarray:
        return np.array([r.err2 for r in self.records])

    def displacement_bound(self) -> float:
        """``4 / lambda * m**-0.5 * sqrt(n) * ||err(0)||`` for the run's lambda_hat."""
        if not self.lambda_hat:
            raise ValueError("trace has no lambda estimate")
        return 4.0 / self.lambda_hat / math.sqrt(self.m) * math.sqrt(self.n) * math.sqrt(self.records[0].err2)

    def header(self) -> dict:
        return {k: getattr(self, k) for k in ("mode", "n", "m", "b", "eta", "lambda_hat", "lambda_se", "init_ops")}


@dataclass
class AutoEta:
    eta: float
    lambda_hat: float
    lambda_se: float


def auto_eta(dataset, b: float, mc_samples: int = 100_000, rng: Rng | None = None) -> AutoEta:
    """``eta = lambda_hat / (4 n^2)`` with ``lambda_hat`` from the continuous kernel."""
    rng = rng or Rng(0, STREAM_LAMBDA)
    rep = h_continuous_mc(rng, dataset, b, mc_samples)
    if not rep.lambda_min > 3 * rep.lambda_se:
        raise UnreliableLambdaError(
            f"lambda_hat={rep.lambda_min:.3e} is within 3 standard errors ({rep.lambda_se:.3e}); "
            f"raise mc_samples above {mc_samples}"
        )
    n = len(dataset.X)
    return AutoEta(rep.lambda_min / (4 * n * n), rep.lambda_min, rep.lambda_se)


# --------------------------------------------------------------------- engines
class _DenseEngine:
    def __init__(self, net, X, cfg):
        self.X = X
        self.init_ops = 0

    def ledger(self, net, cost) -> FireLedger:
        cost["forward"] += len(self.X) * net.m
        return dense_ledger(net, self.X)

    def after_update(self, net, changed, cost):
        pass

    def hsr(self) -> dict:
        return {}


class _WeightIndexEngine:
    def __init__(self, net, X, cfg):
        self.X = X
        self.index = hsr_init(net.W, "tree", leaf_capacity=cfg.leaf_capacity, rebuild_fraction=cfg.rebuild_fraction)
        self.pid = np.arange(net.m, dtype=np.int64)  # point id of each neuron
        self._sort()
        self.init_ops = 0
        self.index.stats = HsrStats()  # trace counters cover training only

    def _sort(self):
        self._order = np.argsort(self.pid)
        self._sorted = self.pid[self._order]

    def neuron_of(self, ids) -> np.ndarray:
        pos = np.searchsorted(self._sorted, ids)
        if len(ids) and (np.any(pos >= len(self._sorted)) or np.any(self._sorted[np.minimum(pos, len(self._sorted) - 1)] != ids)):
            raise ConsistencyError("index reported a point that belongs to no neuron")
        return self._order[pos]

    def ledger(self, net, cost) -> FireLedger:
        before = self.index.stats.ops()
        qi, ids = self.index.query_many(self.X, net.b)
        cost["query"] += self.index.stats.ops() - before
        led = FireLedger(len(self.X), net.m, qi, self.neuron_of(ids))
        cost["forward"] += len(led)
        return led

    def after_update(self, net, changed, cost):
        if len(changed) == 0:
            return
        self.index.delete_many(self.pid[changed])
        self.pid[changed] = self.index.insert_many(net.W[changed])
        self._sort()

    def hsr(self) -> dict:
        return self.index.stats.snapshot()


class _DataIndexEngine:
    def __init__(self, net, X, cfg):
        self.X = X
        self.index = hsr_init(X, "tree", leaf_capacity=cfg.leaf_capacity, rebuild_fraction=cfg.rebuild_fraction)
        self.certified = cfg.maintenance == "certified"
        # a unit-norm sample moves <w, x> by at most ||dw|| * max ||x||
        self.xscale = float(np.sqrt(row_dots(X, X)).max()) * (1 + 1e-12)
        self.xmax = float(np.abs(X).max())
        before = self.index.stats.ops()
        qr, sid, gap = self.index.query_many(net.W, net.b, certify=True)
        self.init_ops = self.index.stats.ops() - before
        self._ledger = FireLedger(len(X), net.m, sid, qr)
        self.index.stats = HsrStats()  # the index is static from here on
        if self.certified:
            self.anchor = net.W.copy()
            self.gap = gap

    def ledger(self, net, cost) -> FireLedger:
        cost["forward"] += len(self._ledger)
        return self._ledger

    def after_update(self, net, changed, cost):
        if len(changed) == 0:
            return
        if self.certified:
            diff = net.W[changed] - self.anchor[changed]
            cost["maintain"] += len(changed)
            drift = np.sqrt(row_dots(diff, diff)) * self.xscale
            # rounding in the two computed inner products being compared
            l1 = np.abs(net.W[changed]).sum(axis=1) + np.abs(self.anchor[changed]).sum(axis=1)
            rounding = 8 * (net.d + 2) * np.finfo(float).eps * l1 * self.xmax
            # requery unless the drift provably cannot cross any sample's threshold
            stale = ~(drift * (1 + 1e-9) + rounding < self.gap[changed])
            changed = changed[stale]
            if len(changed) == 0:
                return
        before = self.index.stats.ops()
        if self.certified:
            qr, sid, gap = self.index.query_many(net.W[changed], net.b, certify=True)
            self.anchor[changed] = net.W[changed]
            self.gap[changed] = gap
        else:
            qr, sid = self.index.query_many(net.W[changed], net.b)
        cost["maintain"] += self.index.stats.ops() - before
        self._ledger = self._ledger.replace_neurons(changed, sid, changed[qr])

    def hsr(self) -> dict:
        return self.index.stats.snapshot()


_ENGINES = {"dense": _DenseEngine, "weight-index": _WeightIndexEngine, "data-index": _DataIndexEngine}


# ------------------------------------------------------------------ training
def resolve_eta(cfg: TrainConfig, dataset, b: float):
    if cfg.eta is not None:
        return cfg.eta, None, None
    est = auto_eta(dataset, b, cfg.mc_samples, Rng(cfg.seed, STREAM_LAMBDA))
    return est.eta, est.lambda_hat, est.lambda_se


def train(cfg: TrainConfig, dataset, net: NetworkState | None = None, eta_info=None):
    """Run gradient descent; returns ``(net, trace)``.

    ``net`` defaults to a fresh network from ``cfg.seed``. ``eta_info`` may
    carry a precomputed ``(eta, lambda_hat, lambda_se)`` to skip estimation.
    """
    cfg.validate()
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    n = len(X)
    if net is None:
        net = init_network(Rng(cfg.seed, STREAM_INIT), X.shape[1], cfg.m, cfg.shift)
    eta, lam, lam_se = eta_info if eta_info is not None else resolve_eta(cfg, dataset, net.b)
    if not eta > 0:
        raise ConfigError("resolved learning rate is not positive")

    engine = _ENGINES[cfg.mode](net, X, cfg)
    trace = TrainTrace(cfg.mode, n, net.m, net.b, eta, lam, lam_se, init_ops=engine.init_ops)
    W0 = net.W.copy()
    disp = np.zeros(net.m)
    prev = None
    err2_0 = None
    for t in range(cfg.T + 1):
        tic = time.perf_counter()
        cost = dict.fromkeys(PHASES, 0)
        led = engine.ledger(net, cost)
        if cfg.check_ledger and led != dense_ledger(net, X):
            raise ConsistencyError(f"{cfg.mode} ledger differs from a fresh scan at t={t}")
        u = predict(net, X, led, verify=cfg.check_ledger)
        residual = u - y
        err2 = float(residual @ residual)
        if err2_0 is None:
            err2_0 = err2
        k = led.sample_counts()
        flips = FlipRecord.between(prev, led, t).total if prev is not None else 0
        prev = led
        displacement = float(disp.max())

        diverged = err2 > cfg.divergence_factor * err2_0
        done = diverged or t == cfg.T or (t >= 1 and err2 <= cfg.stop_threshold * err2_0)
        if not done:
            g = gradient_from_residual(net, X, led, residual)
            changed = apply_update(net, g, eta)
            if len(changed):
                dW = net.W[changed] - W0[changed]
                disp[changed] = np.sqrt(row_dots(dW, dW))
            engine.after_update(net, changed, cost)
        trace.records.append(
            IterRecord(
                t=t,
                err2=err2,
                kmin=int(k.min()),
                kmedian=float(np.median(k)),
                kmax=int(k.max()),
                kargmax=int(k.argmax()),
                ksum=int(k.sum()),
                flips=flips,
                ops=cost,
                ops_total=int(sum(cost.values())),
                hsr=engine.hsr(),
                displacement=displacement,
                millis=(time.perf_counter() - tic) * 1e3,
            )
        )
        if diverged:
            exc = DivergenceError(f"||err||^2 grew from {err2_0:.4g} to {err2:.4g} at t={t}")
            exc.trace = trace
            raise exc
        if done:
            break
    trace.converged = trace.records[-1].err2 <= cfg.stop_threshold * err2_0
    return net, trace


def train_dense(cfg: TrainConfig, dataset, **kw):
    return train(_with_mode(cfg, "dense"), dataset, **kw)


def train_weight_indexed(cfg: TrainConfig, dataset, **kw):
    return train(_with_mode(cfg, "weight-index"), dataset, **kw)


def train_data_indexed(cfg: TrainConfig, dataset, **kw):
    return train(_with_mode(cfg, "data-index"), dataset, **kw)


def _with_mode(cfg: TrainConfig, mode: str) -> TrainConfig:
    vals = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    vals["mode"] = mode
    return TrainConfig(**vals)


# ------------------------------------------------------------------ analysis
def convergence_fit(trace) -> tuple[float, float]:
    """Geometric rate and r^2 of a least-squares line through ``log ||err(t)||^2``."""
    e = trace.err2 if isinstance(trace, TrainTrace) else np.asarray(trace, dtype=np.float64)
    if len(e) < 10:
        raise ValueError("need at least 10 points to fit a rate")
    if np.any(e <= 0):
        raise ValueError("error values must be positive")
    t = np.arange(len(e), dtype=np.float64)
    le = np.log(e)
    tc = t - t.mean()
    slope = float(tc @ (le - le.mean()) / (tc @ tc))
    fit = le.mean() + slope * tc
    ss_res = float(np.sum((le - fit) ** 2))
    ss_tot = float(np.sum((le - le.mean()) ** 2))
    # a flat trace is fitted perfectly; guard against rounding in the mean
    flat = ss_tot <= len(le) * (8 * np.finfo(float).eps * max(1.0, float(np.abs(le).max()))) ** 2
    r2 = 1.0 if flat else 1.0 - ss_res / ss_tot
    return math.exp(slope), r2


@dataclass
class SparsityAudit:
    max_k: int
    t: int
    i: int
    bound: float
    ok: bool


def sparsity_audit(trace: TrainTrace, m: int, b: float, C: float = 4.0) -> SparsityAudit:
    """Check ``max_{i,t} k_{i,t} <= C * m * exp(-b^2 / 2)``."""
    best = max(trace.records, key=lambda r: r.kmax)
    bound = C * m * math.exp(-b * b / 2)
    return SparsityAudit(best.kmax, best.t, best.kargmax, bound, best.kmax <= bound)
