import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stmem.core import Pose
from stmem.fusion import Association
from stmem.memory import FeatureStats, MemoryStore, MissingStatisticsError, exact_knn

from conftest import make_sweep


def brute_knn(positions, queries, k):
    d = np.sqrt(((queries[:, None, :] - positions[None, :, :]) ** 2).sum(-1))
    idx = np.stack([np.lexsort((np.arange(len(positions)), row))[:k] for row in d])
    return idx, np.take_along_axis(d, idx, axis=1)


def test_knn_matches_brute_force(rng):
    pos = rng.uniform(-50, 50, (10_000, 3))
    q = rng.uniform(-50, 50, (100, 3))
    idx, dist = exact_knn(pos, q, 50)
    ref_i, ref_d = brute_knn(pos, q, 50)
    assert np.array_equal(idx, ref_i) and np.array_equal(dist, ref_d)


def test_knn_ties_break_by_index():
    # integer lattice: many exactly equal distances straddle the cut
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    perm = np.random.default_rng(0).permutation(len(g))
    pos = g[perm]
    q = np.array([[2.0, 2, 2], [0, 0, 0], [2.5, 2.5, 2.5]])
    for k in (1, 4, 7, 20, 27):
        idx, dist = exact_knn(pos, q, k)
        ref_i, ref_d = brute_knn(pos, q, k)
        assert np.array_equal(idx, ref_i) and np.array_equal(dist, ref_d)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 40), k=st.integers(1, 45), seed=st.integers(0, 10_000), grid=st.booleans())
def test_knn_property(n, k, seed, grid):
    r = np.random.default_rng(seed)
    pos = r.integers(0, 3, (n, 3)).astype(float) if grid else r.normal(size=(n, 3))
    q = r.integers(0, 3, (5, 3)).astype(float) if grid else r.normal(size=(5, 3))
    idx, dist = exact_knn(pos, q, k)
    ref_i, ref_d = brute_knn(pos, q, min(k, n))
    assert np.array_equal(idx, ref_i) and np.array_equal(dist, ref_d)


def _assoc(probs, in_frame=None):
    probs = np.asarray(probs, dtype=np.float32)
    in_frame = np.ones(len(probs), bool) if in_frame is None else np.asarray(in_frame)
    return Association(probs, in_frame, np.zeros((len(probs), 2), dtype=np.int64))


def test_insert_threshold_and_frame():
    store = MemoryStore(3)
    pts = np.array([[1.0, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]])
    probs = [[0.95, 0.05, 0.0], [0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.0, 0.0, 1.0]]
    pose = Pose.from_xyz_yaw(10, 5, 0, np.pi / 2)
    n = store.insert_sweep(make_sweep(pts, pose), _assoc(probs, [True, True, True, False]), 0.1, sweep_index=0, odometer=3.0)
    assert n == 2
    assert np.allclose(store.positions, pose.apply(pts[1:3]))
    assert np.allclose(store.capture_range, [2.0, 3.0])
    assert store.source.tolist() == [[0, 1], [0, 2]]
    assert np.array_equal(store.probs, np.asarray(probs, np.float32)[1:3])
    with pytest.raises(ValueError):
        store.positions[0, 0] = 1.0


def test_insert_validates():
    store = MemoryStore(3)
    with pytest.raises(ValueError):
        store.insert_sweep(make_sweep([[1.0, 0, 0]]), _assoc([[0.5, 0.5, 0], [1, 0, 0]]))
    with pytest.raises(ValueError):
        store.insert_sweep(make_sweep([[1.0, 0, 0]]), _assoc([[0.5, 0.5, 0]]), fg_threshold=1.5)
    store.insert_sweep(make_sweep([[1.0, 0, 0]]), _assoc([[0.5, 0.5, 0]]), sweep_index=4)
    with pytest.raises(ValueError):
        store.insert_sweep(make_sweep([[1.0, 0, 0]]), _assoc([[0.5, 0.5, 0]]), sweep_index=2)


def test_deprecation_horizon():
    store = MemoryStore(3)
    for s, odo in enumerate([0.0, 10.0, 20.0, 40.0]):
        store.insert_sweep(make_sweep([[1.0 + s, 0, 0]]), _assoc([[0, 1, 0]]), sweep_index=s, odometer=odo)
    assert store.deprecate(40.0, 30.0) == 1
    assert store.sweep_index.tolist() == [1, 2, 3]
    assert store.deprecate(40.0, 30.0) == 0
    with pytest.raises(ValueError):
        store.deprecate(40.0, 0.0)


def test_store_knn_and_graph(rng):
    store = MemoryStore(3)
    pts = rng.normal(size=(60, 3))
    store.insert_sweep(make_sweep(pts), _assoc(np.tile([0, 1, 0], (60, 1))))
    idx, dist = store.knn([0, 0, 0], 5)
    ref_i, ref_d = brute_knn(pts, np.zeros((1, 3)), 5)
    assert np.array_equal(idx, ref_i[0]) and np.array_equal(dist, ref_d[0])
    g, _ = store.knn_graph(8)
    assert g.shape == (60, 8) and np.array_equal(g[:, 0], np.arange(60))


def test_features_and_stats(rng):
    store = MemoryStore(3)
    pts = rng.normal(size=(10, 3)) + [5, 0, 0]
    store.insert_sweep(make_sweep(pts, intensity=np.linspace(0, 1, 10)), _assoc(np.tile([0.2, 0.5, 0.3], (10, 1))))
    occ = rng.normal(size=10)
    raw = store.raw_features(occ)
    assert raw.shape == (10, 6)
    assert np.allclose(raw[:, 3], occ) and np.allclose(raw[:, 4], np.linspace(0, 1, 10))
    assert np.allclose(raw[:, 5], np.linalg.norm(pts, axis=1))
    with pytest.raises(MissingStatisticsError):
        store.assemble_features(occ)
    stats = FeatureStats.from_features([raw[:4], raw[4:]])
    assert np.allclose(stats.mean, raw.mean(0)) and np.allclose(stats.var, raw.var(0))
    z = store.assemble_features(occ, stats)
    assert np.allclose(z[:, 3:].mean(0), 0, atol=1e-12) and np.allclose(z[:, 3:].std(0), 1, atol=1e-6)
    with pytest.raises(ValueError):
        store.raw_features(occ[:3])
    with pytest.raises(ValueError):
        store.assemble_features(occ, FeatureStats.identity(4))


def test_export_ply(tmp_path, rng):
    from stmem.formats import read_ply

    store = MemoryStore(3)
    store.insert_sweep(make_sweep(rng.normal(size=(5, 3))), _assoc(np.tile([0, 0, 1], (5, 1))))
    store.export_ply(tmp_path / "m.ply")
    pts, _ = read_ply(tmp_path / "m.ply")
    assert len(pts) == 5


def test_insert_counts_by_direct_filter(rng):
    probs = np.concatenate([np.tile([0.85, 0.15, 0.0], (100, 1)), np.tile([0.95, 0.0, 0.05], (50, 1))])
    store = MemoryStore(3)
    assert store.insert_sweep(make_sweep(rng.normal(size=(150, 3)) + 5), _assoc(probs), 0.1) == 100
    assert store.insert_sweep(make_sweep(rng.normal(size=(20, 3)) + 5), _assoc(np.tile([1.0, 0, 0], (20, 1))), 0.1) == 0


def test_deprecate_matches_brute_force(rng):
    store = MemoryStore(3)
    odos = np.sort(rng.uniform(0, 60, 40))
    for s, o in enumerate(odos):
        store.insert_sweep(make_sweep(rng.normal(size=(3, 3)) + 5), _assoc(np.tile([0, 1, 0], (3, 1))), sweep_index=s, odometer=o)
    assert store.deprecate(odos[-1], 30.0) == 3 * int(np.sum(odos[-1] - odos > 30.0))
    assert store.deprecate(odos[-1], 30.0) == 0
    fresh = MemoryStore(3)
    fresh.insert_sweep(make_sweep([[5.0, 0, 0]]), _assoc([[0, 1, 0]]), odometer=0.0)
    assert fresh.deprecate(31.0, 30.0) == 1 and len(fresh) == 0
