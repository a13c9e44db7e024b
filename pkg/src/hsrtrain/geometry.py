"""Exact half-space reporting over a mutable point set.

A query ``(a, b)`` reports every live point ``x`` with ``<a, x> - b > 0``.
Two backends share one storage layout:

* ``naive``: a linear scan of live points (the oracle).
* ``tree``: a balanced binary partition built by median splits on the
  coordinate of widest extent, each node carrying the tight axis-aligned box
  of its points. A node is pruned when the maximum of ``<a, .>`` over its box
  is at most ``b`` and bulk-reported when the minimum exceeds ``b``. Only the
  leaves that straddle the hyperplane are scanned point by point.

Deletions tombstone points in place; insertions go to a pending list that is
scanned linearly. When tombstones plus pending points exceed
``rebuild_fraction`` of the live count, the tree is rebuilt from scratch.

Point ids are 64-bit handles ``(generation << 32) | slot``. Storage slots of
deleted points are recycled after the next rebuild with a bumped generation,
so memory tracks the live count while ids are never reused.

Queries are evaluated for a whole batch at once, walking the tree level by
level with numpy over (query, node) pairs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidDimensionError, StaleIdError
from .numerics import row_dots

BACKENDS = ("naive", "tree")

_SLOT_BITS = 32
_SLOT_MASK = (1 << _SLOT_BITS) - 1

# float64 rounding slack for the box bounds, in units of eps * sum |a_j| max|x_j|
_SLACK_UNITS = 4.0


@dataclass
class HsrStats:
    nodes_visited: int = 0
    points_scanned: int = 0
    points_reported: int = 0
    queries: int = 0
    inserts: int = 0
    deletes: int = 0
    rebuilds: int = 0

    def snapshot(self) -> dict:
        return asdict(self)

    def ops(self) -> int:
        """Query cost in inner-product units: one per box bound, one per scanned point."""
        return self.nodes_visited + self.points_scanned


def _expand_ranges(starts: np.ndarray, lengths: np.ndarray):
    """Positions covered by ``[s, s + L)`` ranges plus the owning range index."""
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    owner = np.repeat(np.arange(len(starts)), lengths)
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    pos = np.arange(total) - offsets + np.repeat(starts, lengths)
    return pos, owner


class HsrIndex:
    """Half-space reporting index; see module docstring."""

    def __init__(
        self,
        dim: int,
        backend: str = "tree",
        leaf_capacity: int = 16,
        rebuild_fraction: float = 0.25,
        _fault: bool = False,
    ):
        if dim < 1:
            raise InvalidDimensionError(f"dimension must be >= 1, got {dim}")
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        if leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        if not rebuild_fraction > 0:
            raise ValueError("rebuild_fraction must be positive")
        self.dim = int(dim)
        self.backend = backend
        self.leaf_capacity = int(leaf_capacity)
        self.rebuild_fraction = float(rebuild_fraction)
        self._fault = _fault  # flips the bulk-report comparison; self-test only
        self.stats = HsrStats()

        self._pts = np.zeros((16, self.dim))
        self._alive = np.zeros(16, dtype=bool)
        self._in_tree = np.zeros(16, dtype=bool)
        self._gen = np.zeros(16, dtype=np.int64)
        self._n = 0  # slots ever handed out
        self._free: list[int] = []
        self._live = 0
        self._maxabs = np.zeros(self.dim)

        self._tombstones = 0
        self._pending: list[int] = []
        self._pending_live = 0
        self._depth = -1
        self._perm = np.empty(0, np.int64)

    # ------------------------------------------------------------------ state
    @property
    def live_count(self) -> int:
        return self._live

    @property
    def tombstone_count(self) -> int:
        return self._tombstones

    @property
    def pending_count(self) -> int:
        return self._pending_live

    def __len__(self):
        return self._live

    def _ids_of(self, slots: np.ndarray) -> np.ndarray:
        return (self._gen[slots] << _SLOT_BITS) | slots

    def _slots_of(self, ids) -> np.ndarray:
        """Slots of live ids; raises on any stale or unknown id."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        slots = ids & _SLOT_MASK
        ok = (ids >= 0) & (slots < self._n)
        ok[ok] &= self._alive[slots[ok]] & (self._gen[slots[ok]] == (ids[ok] >> _SLOT_BITS))
        if not ok.all():
            raise StaleIdError(f"point id {int(ids[~ok][0])} is not live")
        return slots

    def ids(self) -> np.ndarray:
        """Sorted ids of all live points."""
        return np.sort(self._ids_of(self._live_slots()))

    def _live_slots(self) -> np.ndarray:
        return np.flatnonzero(self._alive[: self._n])

    def point(self, pid: int) -> np.ndarray:
        return self._pts[self._slots_of([pid])[0]].copy()

    def is_live(self, pid: int) -> bool:
        try:
            self._slots_of([pid])
        except StaleIdError:
            return False
        return True

    def _as_points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size else X.reshape(0, self.dim)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected points of dimension {self.dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("points must be finite")
        return X

    # -------------------------------------------------------------- mutation
    def _take_slots(self, k: int) -> np.ndarray:
        reuse = min(k, len(self._free))
        slots = [self._free.pop() for _ in range(reuse)]
        fresh = k - reuse
        if fresh:
            need = self._n + fresh
            cap = len(self._alive)
            if need > cap:
                while cap < need:
                    cap *= 2
                grow = cap - len(self._alive)
                self._pts = np.concatenate([self._pts, np.zeros((grow, self.dim))])
                self._alive = np.concatenate([self._alive, np.zeros(grow, dtype=bool)])
                self._in_tree = np.concatenate([self._in_tree, np.zeros(grow, dtype=bool)])
                self._gen = np.concatenate([self._gen, np.zeros(grow, dtype=np.int64)])
            slots.extend(range(self._n, need))
            self._n = need
        return np.asarray(slots, dtype=np.int64)

    def insert(self, x) -> int:
        X = self._as_points(x)
        if len(X) != 1:
            raise DimensionMismatchError("insert takes a single point")
        return int(self.insert_many(X)[0])

    def insert_many(self, X) -> np.ndarray:
        """Insert rows of ``X``; returns their new ids in order."""
        X = self._as_points(X)
        k = len(X)
        if k == 0:
            return np.empty(0, np.int64)
        slots = self._take_slots(k)
        self._pts[slots] = X
        self._alive[slots] = True
        self._in_tree[slots] = False
        self._live += k
        self._maxabs = np.maximum(self._maxabs, np.abs(X).max(axis=0))
        self.stats.inserts += k
        ids = self._ids_of(slots)
        self._pending.extend(slots.tolist())
        self._pending_live += k
        self._maybe_rebuild()
        return ids

    def delete(self, pid: int) -> None:
        self.delete_many([pid])

    def delete_many(self, pids) -> None:
        pids = np.asarray(pids, dtype=np.int64).reshape(-1)
        if len(pids) == 0:
            return
        if len(np.unique(pids)) != len(pids):
            raise StaleIdError("duplicate ids in one delete batch")
        slots = self._slots_of(pids)
        self._alive[slots] = False
        self._live -= len(slots)
        self.stats.deletes += len(slots)
        in_tree = int(self._in_tree[slots].sum())
        self._tombstones += in_tree
        self._pending_live -= len(slots) - in_tree
        self._maybe_rebuild()

    def _release(self, slots):
        self._gen[slots] += 1
        self._free.extend(np.asarray(slots).tolist())

    def _maybe_rebuild(self):
        debt = self._tombstones + self._pending_live
        if debt > self.rebuild_fraction * max(self._live, 1):
            self.rebuild()

    # ----------------------------------------------------------------- build
    def rebuild(self) -> None:
        """Rebuild the partition tree over the live points.

        Both backends recycle dead slots here, so a given sequence of
        operations yields the same ids whichever backend runs it.
        """
        self.stats.rebuilds += 1
        ids = self._live_slots()
        N = len(ids)
        held = self._in_tree[: self._n].copy()
        held[np.asarray(self._pending, dtype=np.int64)] = True
        self._release(np.flatnonzero(held & ~self._alive[: self._n]))
        self._in_tree[: self._n] = False
        self._in_tree[ids] = True
        self._pending = []
        self._pending_live = 0
        self._tombstones = 0
        if N == 0 or self.backend == "naive":
            self._depth = -1
            self._perm = ids
            return
        depth = 0 if N <= self.leaf_capacity else math.ceil(math.log2(N / self.leaf_capacity))
        n_nodes = 2 ** (depth + 1) - 1
        start = np.zeros(n_nodes, np.int64)
        end = np.zeros(n_nodes, np.int64)
        lo = np.full((n_nodes, self.dim), np.inf)
        hi = np.full((n_nodes, self.dim), -np.inf)
        end[0] = N
        perm = ids.copy()
        for level in range(depth + 1):
            first, cnt = 2**level - 1, 2**level
            sl = slice(first, first + cnt)
            s, e = start[sl], end[sl]
            sizes = e - s
            full = sizes > 0
            P = self._pts[perm]
            if full.any():
                lo[sl][full] = np.minimum.reduceat(P, s[full], axis=0)
                hi[sl][full] = np.maximum.reduceat(P, s[full], axis=0)
            if level == depth:
                break
            extent = np.where(full[:, None], hi[sl] - lo[sl], 0.0)
            split_dim = np.argmax(extent, axis=1)
            seg = np.repeat(np.arange(cnt), sizes)
            key = P[np.arange(N), split_dim[seg]]
            perm = perm[np.lexsort((key, seg))]
            mid = (s + e) // 2
            children = 2 * np.arange(first, first + cnt) + 1
            start[children], end[children] = s, mid
            start[children + 1], end[children + 1] = mid, e
        self._depth = depth
        self._perm = perm
        self._start, self._end = start, end
        empty = ~np.isfinite(lo)  # nodes holding no points
        lo[empty], hi[empty] = 0.0, 0.0
        self._center = (lo + hi) / 2
        self._half = (hi - lo) / 2

    # ----------------------------------------------------------------- query
    def query(self, a, b: float) -> np.ndarray:
        """Sorted ids of live points with ``<a, x> > b``."""
        _, ids = self.query_many(np.asarray(a, dtype=np.float64).reshape(1, -1), b)
        return ids

    def query_many(self, A, b, certify: bool = False):
        """Answer one half-space query per row of ``A``.

        ``b`` is a scalar or one threshold per query. Returns ``(qidx, ids)``
        sorted by query then id. With ``certify=True`` a third array holds,
        per query, a lower bound on ``|<a, x> - b|`` over all live points.
        """
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[1] != self.dim:
            raise DimensionMismatchError(f"expected queries of dimension {self.dim}, got shape {A.shape}")
        q = len(A)
        bq = np.broadcast_to(np.asarray(b, dtype=np.float64), (q,))
        self.stats.queries += q
        gap = np.full(q, np.inf) if certify else None
        if self.backend == "naive":
            out_q, out_id = self._scan(A, bq, self._live_slots(), gap)
            out_id = self._ids_of(out_id)
            order = np.lexsort((out_id, out_q))
            out_q, out_id = out_q[order], out_id[order]
        else:
            out_q, out_id = self._tree_query(A, bq, gap)
            if self._pending_live:
                pend = np.asarray(self._pending, dtype=np.int64)
                pend = pend[self._alive[pend]]
                pq, pid = self._scan(A, bq, pend, gap)
                out_q = np.concatenate([out_q, pq])
                out_id = np.concatenate([out_id, pid])
            out_id = self._ids_of(out_id)
            order = np.lexsort((out_id, out_q))
            out_q, out_id = out_q[order], out_id[order]
        self.stats.points_reported += len(out_id)
        if certify:
            return out_q, out_id, gap
        return out_q, out_id

    def _scan(self, A, bq, ids, gap):
        """Linear scan of ``ids`` for every query."""
        q, k = len(A), len(ids)
        self.stats.points_scanned += q * k
        if q == 0 or k == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        P = self._pts[ids]
        chunk = max(1, (1 << 22) // max(1, k * self.dim))
        qs, hits = [], []
        for c0 in range(0, q, chunk):
            Ac = A[c0 : c0 + chunk]
            Z = row_dots(Ac[:, None, :], P[None, :, :])
            mask = Z > bq[c0 : c0 + chunk, None]
            if gap is not None:
                gap[c0 : c0 + chunk] = np.minimum(
                    gap[c0 : c0 + chunk], np.abs(Z - bq[c0 : c0 + chunk, None]).min(axis=1)
                )
            qq, jj = np.nonzero(mask)
            qs.append(qq + c0)
            hits.append(ids[jj])
        return np.concatenate(qs), np.concatenate(hits)

    def _tree_query(self, A, bq, gap):
        empty = (np.empty(0, np.int64), np.empty(0, np.int64))
        if self._depth < 0 or len(A) == 0:
            return empty
        absA = np.abs(A)
        eps = np.finfo(np.float64).eps
        slack = _SLACK_UNITS * (self.dim + 2) * eps * (absA @ self._maxabs)
        fq = np.arange(len(A))
        fk = np.zeros(len(A), np.int64)
        rep_q, rep_id = [], []
        for level in range(self._depth + 1):
            size = self._end[fk] - self._start[fk]
            keep = size > 0
            fq, fk, size = fq[keep], fk[keep], size[keep]
            if len(fq) == 0:
                break
            self.stats.nodes_visited += len(fq)
            ac = row_dots(A[fq], self._center[fk])
            ah = row_dots(absA[fq], self._half[fk])
            ub, lb = ac + ah, ac - ah
            thr, sl = bq[fq], slack[fq]
            prune = ub + sl <= thr
            if self._fault:
                bulk = (ub - sl > thr) & ~prune
            else:
                bulk = (lb - sl > thr) & ~prune
            if gap is not None:
                np.minimum.at(gap, fq[prune], thr[prune] - ub[prune] - sl[prune])
                np.minimum.at(gap, fq[bulk], lb[bulk] - sl[bulk] - thr[bulk])
            if bulk.any():
                pos, own = _expand_ranges(self._start[fk[bulk]], size[bulk])
                ids = self._perm[pos]
                live = self._alive[ids]
                rep_q.append(fq[bulk][own][live])
                rep_id.append(ids[live])
            descend = ~prune & ~bulk
            if level == self._depth:
                pos, own = _expand_ranges(self._start[fk[descend]], size[descend])
                ids = self._perm[pos]
                live = self._alive[ids]
                ids, qq = ids[live], fq[descend][own][live]
                self.stats.points_scanned += len(ids)
                z = row_dots(A[qq], self._pts[ids])
                hit = z > bq[qq]
                if gap is not None:
                    np.minimum.at(gap, qq, np.abs(z - bq[qq]))
                rep_q.append(qq[hit])
                rep_id.append(ids[hit])
            else:
                fq = np.repeat(fq[descend], 2)
                kids = 2 * fk[descend] + 1
                fk = np.stack([kids, kids + 1], axis=1).reshape(-1)
        if not rep_q:
            return empty
        return np.concatenate(rep_q), np.concatenate(rep_id)


def hsr_init(points, backend: str = "tree", dim: int | None = None, **knobs) -> HsrIndex:
    """Build an index over ``points``; the first batch gets ids ``0..len(points)-1``."""
    pts = list(points) if not isinstance(points, np.ndarray) else points
    if len(pts) == 0:
        if dim is None:
            raise InvalidDimensionError("dimension required for an empty point set")
        return HsrIndex(dim, backend, **knobs)
    if not isinstance(pts, np.ndarray):
        dims = {len(np.atleast_1d(p)) for p in pts}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed dimensions {sorted(dims)}")
        pts = np.array(pts, dtype=np.float64)
    if pts.ndim != 2:
        raise DimensionMismatchError("points must form an (n, d) array")
    if dim is not None and pts.shape[1] != dim:
        raise DimensionMismatchError(f"points have dimension {pts.shape[1]}, expected {dim}")
    idx = HsrIndex(pts.shape[1], backend, **knobs)
    idx.insert_many(pts)
    idx.rebuild()
    return idx


def hsr_query(idx: HsrIndex, a, b: float) -> set[int]:
    return set(idx.query(a, b).tolist())


def hsr_insert(idx: HsrIndex, x) -> int:
    return idx.insert(x)


def hsr_delete(idx: HsrIndex, pid: int) -> None:
    idx.delete(pid)
