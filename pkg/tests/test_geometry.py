import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsrtrain.errors import DimensionMismatchError, InvalidDimensionError, StaleIdError
from hsrtrain.geometry import HsrIndex, hsr_delete, hsr_init, hsr_insert, hsr_query
from hsrtrain.numerics import Rng, row_dots


class ScanOracle:
    """Dictionary of live points answered by a plain Python loop."""

    def __init__(self):
        self.pts = {}

    def query(self, a, b, guard=1e-12):
        """(certain hits, ambiguous ids) — points within ``guard`` of the plane are ambiguous."""
        hits, near = set(), set()
        for pid, x in self.pts.items():
            z = sum(float(ai) * float(xi) for ai, xi in zip(a, x))
            if abs(z - b) <= guard:
                near.add(pid)
            elif z > b:
                hits.add(pid)
        return hits, near


def assert_matches(got, oracle, a, b):
    hits, near = oracle.query(a, b)
    got = set(got)
    assert hits <= got
    assert got - hits <= near


def unit_rows(rng, n, d):
    X = rng.normal((n, d))
    return X / np.linalg.norm(X, axis=1)[:, None]


# ------------------------------------------------------------------ small cases
@pytest.mark.parametrize("backend", ["tree", "naive"])
def test_empty_index(backend):
    idx = hsr_init([], backend, dim=3)
    assert idx.live_count == 0
    assert hsr_query(idx, [1.0, 0.0, 0.0], -10.0) == set()


def test_empty_needs_dimension():
    with pytest.raises(InvalidDimensionError):
        hsr_init([], "tree")


def test_mixed_dimensions_rejected():
    with pytest.raises(DimensionMismatchError):
        hsr_init([[1.0, 0.0], [1.0, 0.0, 0.0]])


@pytest.mark.parametrize("backend", ["tree", "naive"])
def test_three_points(backend):
    idx = hsr_init([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)], backend)
    assert hsr_query(idx, (1.0, 0.0), 0.5) == {0}
    assert hsr_query(idx, (1.0, 0.0), 2.0) == set()
    # strict threshold: (0, 1) has product exactly 0
    assert hsr_query(idx, (1.0, 0.0), 0.0) == {0}
    assert hsr_query(idx, (1.0, 0.0), -0.5) == {0, 1}


@pytest.mark.parametrize("backend", ["tree", "naive"])
def test_insert_then_query(backend):
    idx = hsr_init([], backend, dim=2)
    pid = hsr_insert(idx, (0.6, 0.8))
    assert hsr_query(idx, (0.6, 0.8), 0.5) == {pid}


@pytest.mark.parametrize("backend", ["tree", "naive"])
def test_duplicate_coordinates_get_distinct_ids(backend):
    idx = hsr_init([], backend, dim=2)
    p1 = hsr_insert(idx, (1.0, 0.0))
    p2 = hsr_insert(idx, (1.0, 0.0))
    assert p1 != p2
    assert hsr_query(idx, (1.0, 0.0), 0.5) == {p1, p2}


@pytest.mark.parametrize("backend", ["tree", "naive"])
def test_delete_and_stale_id(backend):
    idx = hsr_init([(0.0, 1.0)], backend)
    pid = hsr_insert(idx, (1.0, 0.0))
    assert pid in hsr_query(idx, (1.0, 0.0), 0.5)
    hsr_delete(idx, pid)
    assert hsr_query(idx, (1.0, 0.0), 0.5) == set()
    with pytest.raises(StaleIdError):
        hsr_delete(idx, pid)
    with pytest.raises(StaleIdError):
        idx.delete(123456)


def test_ids_never_reused():
    idx = hsr_init(unit_rows(Rng(0), 64, 3), "tree", rebuild_fraction=0.1)
    seen = set(idx.ids().tolist())
    rng = Rng(1)
    for _ in range(50):
        live = idx.ids()
        victims = live[rng.permutation(len(live))[:10]]
        idx.delete_many(victims)
        new = idx.insert_many(unit_rows(rng, 10, 3))
        assert not (set(new.tolist()) & seen)
        seen |= set(new.tolist())
    assert idx.stats.rebuilds > 5
    # storage stays proportional to the live count
    assert idx._n <= 2 * 64


def test_point_roundtrip_and_wrong_dimension():
    idx = hsr_init([(0.25, 0.5, 1.0)], "tree")
    assert idx.point(0).tolist() == [0.25, 0.5, 1.0]
    with pytest.raises(DimensionMismatchError):
        idx.insert((1.0, 2.0))
    with pytest.raises(DimensionMismatchError):
        idx.query((1.0, 2.0), 0.0)


def test_duplicate_ids_in_batch_delete():
    idx = hsr_init([(1.0, 0.0), (0.0, 1.0)], "tree")
    with pytest.raises(StaleIdError):
        idx.delete_many([0, 0])
    assert idx.live_count == 2


# -------------------------------------------------------------- oracle replays
def test_static_queries_match_naive():
    rng = Rng(5, 0)
    X = unit_rows(rng, 10_000, 8)
    tree, naive = hsr_init(X, "tree"), hsr_init(X, "naive")
    A = rng.normal((1000, 8))
    b = rng.normal(1000) * 0.7
    assert all(np.array_equal(x, y) for x, y in zip(tree.query_many(A, b), naive.query_many(A, b)))


def test_queries_match_brute_force_scan():
    rng = Rng(6, 0)
    X = rng.normal((4096, 6))
    tree = hsr_init(X, "tree")
    oracle = ScanOracle()
    oracle.pts = {i: X[i] for i in range(len(X))}
    for _ in range(500):
        a = rng.normal(6)
        b = float(rng.normal(1)[0]) * 2
        assert_matches(hsr_query(tree, a, b), oracle, a, b)


def replay(seed, n0, d, steps, leaf_capacity=16, rebuild_fraction=0.25, check_every=1):
    rng = Rng(seed, d)
    X = rng.normal((n0, d))
    tree = hsr_init(X, "tree", dim=d, leaf_capacity=leaf_capacity, rebuild_fraction=rebuild_fraction)
    naive = hsr_init(X, "naive", dim=d, rebuild_fraction=rebuild_fraction)
    oracle = ScanOracle()
    oracle.pts = {i: X[i] for i in range(n0)}
    for step in range(steps):
        op = int(rng.integers(3, 1)[0])
        if op == 0:
            x = rng.normal(d)
            pid = tree.insert(x)
            assert naive.insert(x) == pid
            oracle.pts[pid] = x
        elif op == 1 and oracle.pts:
            keys = sorted(oracle.pts)
            pid = keys[int(rng.integers(len(keys), 1)[0])]
            tree.delete(pid)
            naive.delete(pid)
            del oracle.pts[pid]
        else:
            a = rng.normal(d)
            b = float(rng.normal(1)[0])
            got = tree.query(a, b)
            assert np.array_equal(got, naive.query(a, b))
            if step % check_every == 0:
                assert_matches(got.tolist(), oracle, a, b)
        assert tree.tombstone_count <= tree.rebuild_fraction * max(tree.live_count, 1)
        assert set(tree.ids().tolist()) == set(oracle.pts)
    return tree


def test_long_trace_matches_oracle():
    tree = replay(0, 300, 4, 10_000, check_every=25)
    assert tree.stats.rebuilds > 0


def test_interleaved_inserts_and_queries():
    rng = Rng(3, 3)
    tree = hsr_init([], "tree", dim=5)
    oracle = ScanOracle()
    for _ in range(1000):
        x = rng.normal(5)
        oracle.pts[tree.insert(x)] = x
        a = rng.normal(5)
        assert_matches(hsr_query(tree, a, 0.3), oracle, a, 0.3)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n0=st.integers(0, 400),
    d=st.sampled_from([1, 2, 3, 4, 6, 8, 12]),
    leaf=st.integers(1, 20),
    frac=st.floats(0.05, 1.0),
)
def test_random_traces(seed, n0, d, leaf, frac):
    replay(seed, n0, d, 150, leaf_capacity=leaf, rebuild_fraction=frac)


def test_rebuild_is_transparent():
    rng = Rng(8, 0)
    idx = hsr_init(rng.normal((500, 4)), "tree", rebuild_fraction=10.0)
    idx.delete_many(idx.ids()[::3])
    idx.insert_many(rng.normal((100, 4)))
    A, b = rng.normal((50, 4)), rng.normal(50)
    before = idx.query_many(A, b)
    idx.rebuild()
    after = idx.query_many(A, b)
    assert all(np.array_equal(x, y) for x, y in zip(before, after))


def test_certified_gap_is_a_lower_bound():
    rng = Rng(9, 0)
    X = rng.normal((3000, 5))
    idx = hsr_init(X, "tree")
    A = rng.normal((40, 5))
    b = rng.normal(40)
    _, _, gap = idx.query_many(A, b, certify=True)
    true_gap = np.abs(A @ X.T - b[:, None]).min(axis=1)
    assert np.all(gap <= true_gap * (1 + 1e-12) + 1e-12)
    assert np.all(gap > 0)


# ------------------------------------------------------------------ cost counters
def test_pruning_soundness():
    rng = Rng(10, 0)
    X = unit_rows(rng, 5000, 6)
    idx = hsr_init(X, "tree")
    internal = 2**idx._depth - 1
    for _ in range(20):
        before = idx.stats.nodes_visited
        idx.query(rng.normal(6), float(rng.normal(1)[0]))
        assert idx.stats.nodes_visited - before <= idx.live_count + internal


def test_query_containing_everything_scans_nothing():
    X = unit_rows(Rng(11, 0), 5000, 6)
    idx = hsr_init(X, "tree")
    before = idx.stats.snapshot()
    ids = idx.query(np.ones(6), -100.0)
    assert len(ids) == 5000
    assert idx.stats.points_scanned == before["points_scanned"]
    assert idx.stats.nodes_visited - before["nodes_visited"] == 1


def test_scan_cost_grows_sublinearly_at_fixed_output():
    grid = [2048, 8192, 32768]
    medians = []
    for n in grid:
        rng = Rng(1, 4)
        X = unit_rows(rng, n, 4)
        idx = hsr_init(X, "tree")
        A = unit_rows(rng, 100, 4)
        b = np.sort(row_dots(A[:, None, :], X[None, :, :]), axis=1)[:, -33]  # 32 points above each
        scans = []
        for a, bb in zip(A, b):
            s0 = idx.stats.points_scanned
            assert len(idx.query(a, bb)) == 32
            scans.append(idx.stats.points_scanned - s0)
        medians.append(np.median(scans))
    slope = np.polyfit(np.log(grid), np.log(medians), 1)[0]
    assert slope < 0.8


def test_bad_knobs():
    with pytest.raises(ValueError):
        HsrIndex(2, backend="kd")
    with pytest.raises(ValueError):
        HsrIndex(2, leaf_capacity=0)
    with pytest.raises(InvalidDimensionError):
        HsrIndex(0)
