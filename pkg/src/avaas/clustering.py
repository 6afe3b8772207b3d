"""Lane clustering by average traffic behaviour (k-means + elbow)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .estimation import TrafficState

FEATURES = ("k", "v", "q")


@dataclass(frozen=True)
class LaneFeature:
    lane: str
    mean_k: float
    mean_v: float
    mean_q: float
    z: tuple[float, float, float]

    def raw(self, names: Sequence[str] = FEATURES) -> tuple[float, ...]:
        return tuple(getattr(self, f"mean_{n}") for n in names)

    def standardized(self, names: Sequence[str] = FEATURES) -> tuple[float, ...]:
        return tuple(self.z[FEATURES.index(n)] for n in names)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: dict[str, int]
    wcss: float
    seed: int
    iterations: int
    features: tuple[str, ...] = ("k", "v")


def lane_features(states: Iterable[TrafficState]) -> list[LaneFeature]:
    """Per-lane means of k, v, q over the intervals where the lane has a state.

    Accepts lane-scope states of one source (ground truth by default in the
    pipeline). Lanes are returned sorted by id; z-scores use the population
    standard deviation, with zero-variance dimensions mapped to 0.
    """
    acc: dict[str, list[list[float]]] = {}
    for s in states:
        if s.scope_kind != "lane":
            continue
        ks, vs, qs = acc.setdefault(s.scope_id, [[], [], []])
        ks.append(s.k)
        if s.v is not None:
            vs.append(s.v)
        if s.q is not None:
            qs.append(s.q)
    if not acc:
        raise ValueError("no lanes with observations")
    lanes = sorted(acc)
    raw = np.array([[float(np.mean(x)) if x else 0.0 for x in acc[lane]] for lane in lanes])
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    z = np.where(sd > 0, (raw - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return [
        LaneFeature(lane, *raw[i].tolist(), z=tuple(z[i].tolist()))
        for i, lane in enumerate(lanes)
    ]


def feature_matrix(features: Sequence[LaneFeature], names: Sequence[str] = ("k", "v")) -> np.ndarray:
    return np.array([f.standardized(names) for f in features], dtype=float).reshape(len(features), len(names))


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def farthest_point_init(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Start at the point picked by ``seed``, then repeatedly add the point farthest from all chosen ones."""
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(x)))]
    d = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations from ``centroids``; returns (centroids, labels, iterations).

    An emptied cluster is re-seeded at the point farthest from its current
    centroid.
    """
    c = centroids.astype(float).copy()
    labels = np.argmin(_sq_dists(x, c), axis=1)
    it = 0
    for it in range(1, max_iter + 1):
        new = c.copy()
        for j in range(len(c)):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                own = ((x - c[labels]) ** 2).sum(axis=1)
                far = int(np.argmax(own))
                new[j] = x[far]
                labels[far] = j
        shift = float(np.sqrt(((new - c) ** 2).sum(axis=1)).max())
        c = new
        labels = np.argmin(_sq_dists(x, c), axis=1)
        if shift < tol:
            break
    # final centroids are exact member means of the final labels
    for j in range(len(c)):
        members = x[labels == j]
        if len(members):
            c[j] = members.mean(axis=0)
    return c, labels, it


def wcss(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def kmeans(
    features: Sequence[LaneFeature] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    names: Sequence[str] = ("k", "v"),
    init: np.ndarray | None = None,
) -> ClusterModel:
    """k-means on standardized lane features.

    LaneFeature input is put in lane-id order first, so the partition does
    not depend on input order. A raw array is clustered as given and its
    rows are named ``"0"``, ``"1"``, ...
    """
    if isinstance(features, np.ndarray):
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        lanes = [str(i) for i in range(len(x))]
    else:
        ordered = sorted(features, key=lambda f: f.lane)
        x = feature_matrix(ordered, names)
        lanes = [f.lane for f in ordered]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the number of lanes ({len(x)})")
    start = farthest_point_init(x, k, seed) if init is None else np.asarray(init, dtype=float)
    c, labels, it = lloyd(x, start, max_iter, tol)
    return ClusterModel(
        k=k,
        centroids=c,
        assignment={lane: int(lab) for lane, lab in zip(lanes, labels)},
        wcss=wcss(x, c, labels),
        seed=seed,
        iterations=it,
        features=tuple(names),
    )


@dataclass(frozen=True)
class ElbowPoint:
    k: int
    wcss: float
    is_knee: bool


def knee(ks: Sequence[int], ws: Sequence[float]) -> int | None:
    """Point of largest second forward difference ``w[i] - 2 w[i+1] + w[i+2]``, reported at ``k[i+1]``."""
    if len(ws) < 3:
        return None
    d2 = [ws[i] - 2 * ws[i + 1] + ws[i + 2] for i in range(len(ws) - 2)]
    return ks[int(np.argmax(d2)) + 1]


def elbow_curve(
    features: Sequence[LaneFeature] | np.ndarray,
    k_range: Iterable[int],
    seed: int = 0,
    names: Sequence[str] = ("k", "v"),
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[list[ElbowPoint], dict[int, ClusterModel]]:
    """WCSS per k plus the knee suggestion.

    Each k also tries a warm start from the previous k's centroids plus the
    worst-fit point and keeps the better fit, so WCSS never increases with k.
    """
    ks = sorted(set(k_range))
    if not ks:
        raise ValueError("empty k range")
    models: dict[int, ClusterModel] = {}
    prev: ClusterModel | None = None
    for k in ks:
        best = kmeans(features, k, seed, max_iter, tol, names)
        if prev is not None and prev.k < k:
            x = _matrix(features, names)
            labels = np.array([prev.assignment[lane] for lane in _lanes(features)])
            c = prev.centroids
            extra = []
            resid = ((x - c[labels]) ** 2).sum(axis=1)
            for i in np.argsort(-resid, kind="stable")[: k - prev.k]:
                extra.append(x[i])
            warm = kmeans(features, k, seed, max_iter, tol, names, init=np.vstack([c, *extra]))
            if warm.wcss < best.wcss:
                best = warm
        models[k] = best
        prev = best
    ws = [models[k].wcss for k in ks]
    kn = knee(ks, ws)
    return [ElbowPoint(k, models[k].wcss, k == kn) for k in ks], models


def _lanes(features) -> list[str]:
    if isinstance(features, np.ndarray):
        return [str(i) for i in range(len(features))]
    return sorted(f.lane for f in features)


def _matrix(features, names) -> np.ndarray:
    if isinstance(features, np.ndarray):
        x = np.asarray(features, dtype=float)
        return x[:, None] if x.ndim == 1 else x
    return feature_matrix(sorted(features, key=lambda f: f.lane), names)
