import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avaas.clustering import elbow_curve, feature_matrix, kmeans, knee, lane_features, wcss
from avaas.estimation import TrafficState

from blobs import permutation_agreement, planted_lanes


def S(lane, ts, k, v, q):
    return TrafficState("lane", lane, ts, k, v, q, "ground_truth", 1)


def test_lane_mean_two_intervals():
    [f] = lane_features([S("a", 0, 10, 30, 300), S("a", 300, 20, 40, 800)])
    assert (f.mean_k, f.mean_v, f.mean_q) == (15.0, 35.0, 550.0)


def test_single_lane_zscores_zero():
    [f] = lane_features([S("a", 0, 10, 30, 300)])
    assert f.z == (0.0, 0.0, 0.0)


def test_six_lane_means_and_standardization():
    rng = np.random.default_rng(1)
    states = [S(f"l{i}", 300.0 * t, *rng.uniform(1, 100, 3)) for i in range(6) for t in range(4)]
    feats = lane_features(states)
    assert [f.lane for f in feats] == [f"l{i}" for i in range(6)]
    for f in feats:
        rows = [s for s in states if s.scope_id == f.lane]
        assert f.mean_k == pytest.approx(math.fsum(s.k for s in rows) / 4, abs=1e-12)
        assert f.mean_q == pytest.approx(math.fsum(s.q for s in rows) / 4, abs=1e-12)
    z = np.array([f.z for f in feats])
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(z.var(axis=0), 1, atol=1e-12)


def test_lane_features_requires_lanes():
    with pytest.raises(ValueError):
        lane_features([])


def test_k1_is_mean():
    feats = lane_features(planted_lanes(40, 0)[0])
    m = kmeans(feats, 1)
    x = feature_matrix(feats)
    assert np.allclose(m.centroids[0], x.mean(axis=0))
    assert m.wcss == pytest.approx(x.var(axis=0).sum() * len(x))


def test_k_equals_n_zero_wcss():
    feats = lane_features(planted_lanes(9, 2)[0])
    assert kmeans(feats, 9).wcss == pytest.approx(0.0, abs=1e-20)


def test_k_bounds():
    feats = lane_features(planted_lanes(5, 0)[0])
    with pytest.raises(ValueError):
        kmeans(feats, 6)
    with pytest.raises(ValueError):
        kmeans(feats, 0)


def test_blob_recovery():
    states, truth = planted_lanes(200, 7)
    m = kmeans(lane_features(states), 4, names=("k", "v", "q"))
    assert permutation_agreement(truth, m.assignment) >= 0.95


def test_elbow_single_k():
    pts, _ = elbow_curve(lane_features(planted_lanes(8, 0)[0]), [1])
    assert len(pts) == 1 and not pts[0].is_knee


def test_knee_rule():
    assert knee([1, 2, 3, 4, 5], [100, 60, 30, 5, 4]) == 4
    assert knee([1, 2], [3, 1]) is None


def test_elbow_on_blobs():
    pts, models = elbow_curve(lane_features(planted_lanes(120, 3)[0]), range(1, 9), names=("k", "v", "q"))
    assert [p.k for p in pts if p.is_knee] == [4]
    w = [p.wcss for p in pts]
    assert all(b <= a for a, b in zip(w, w[1:]))
    assert set(models) == set(range(1, 9))


points = arrays(np.float64, st.tuples(st.integers(3, 25), st.integers(1, 3)),
                elements=st.floats(-50, 50, allow_nan=False, width=32))


@settings(max_examples=60, deadline=None)
@given(points, st.integers(0, 100))
def test_model_invariants(x, seed):
    n = len(x)
    for k in sorted({1, 2, min(3, n), min(5, n)}):
        m = kmeans(x, k, seed=seed)
        labels = np.array([m.assignment[str(i)] for i in range(n)])
        d = ((x[:, None, :] - m.centroids[None, :, :]) ** 2).sum(axis=2)
        # every lane sits with its nearest centroid
        assert np.all(d[np.arange(n), labels] <= d.min(axis=1) + 1e-9)
        for j in set(labels.tolist()):
            assert np.allclose(m.centroids[j], x[labels == j].mean(axis=0), atol=1e-9)
        brute = sum(float(((x[i] - m.centroids[labels[i]]) ** 2).sum()) for i in range(n))
        assert m.wcss == pytest.approx(brute, rel=1e-9, abs=1e-9)
        assert m.wcss == pytest.approx(wcss(x, m.centroids, labels), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(points, st.integers(0, 100))
def test_elbow_nonincreasing(x, seed):
    pts, _ = elbow_curve(x, range(1, len(x) + 1), seed=seed)
    w = [p.wcss for p in pts]
    assert all(b <= a + 1e-9 for a, b in zip(w, w[1:]))


def partition(assignment):
    groups = {}
    for lane, c in assignment.items():
        groups.setdefault(c, set()).add(lane)
    return {frozenset(g) for g in groups.values()}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.randoms(use_true_random=False))
def test_permutation_invariance(seed, rnd):
    states, _ = planted_lanes(30, seed, sigmas_apart=2.0)
    feats = lane_features(states)
    shuffled = list(feats)
    rnd.shuffle(shuffled)
    assert partition(kmeans(feats, 3, seed=seed).assignment) == partition(kmeans(shuffled, 3, seed=seed).assignment)


def test_deterministic_given_seed():
    feats = lane_features(planted_lanes(60, 1, sigmas_apart=1.5)[0])
    a, b = kmeans(feats, 4, seed=5), kmeans(feats, 4, seed=5)
    assert a.assignment == b.assignment and a.wcss == b.wcss
