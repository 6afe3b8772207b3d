"""Link-level traffic state estimation from observer detections.

Units: detections carry speeds in m/s; estimated speeds are reported in
km/h so that ``q = k * v`` yields veh/h with ``k`` in veh/km.

Per-step estimators
-------------------
Moving observer (counts itself)::

    k* = (1 + n_det) * 1000 / L_zone
    v* = (sum(v_det) + v_ego) / (n_det + 1)
    q* = k* * v*

Parked observer (not part of the stream)::

    k** = n_det * 1000 / L_zone
    v** = sum(v_det) / n_det          (absent when n_det == 0)
    q** = k** * v**

``L_zone`` is the summed forward+backward range over all lanes of the zone.

Interval aggregation is a two-stage mean: each observer's values are first
averaged over the steps it contributed, then averaged across observers with
equal weight. Absent speeds (and flows) are skipped, never zero-filled.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from .detection import Observation, ObserverPose, SensorConfig, Snapshot, detect
from .microsim import AggregationConfig, GroundTruthState, TrajectoryLog, VehicleState, interval_index
from .network import RoadNetwork
from .observers import ObserverAssignment

MS_TO_KMH = 3.6

SOURCES = ("ground_truth", "mo_estimate", "po_estimate", "combined")


class EstimationError(ValueError):
    pass


class PointEstimate(NamedTuple):
    k: float
    v: float | None
    q: float | None


@dataclass(frozen=True)
class TrafficState:
    scope_kind: str  # lane | cluster | network
    scope_id: str
    ts: float
    k: float
    v: float | None
    q: float | None
    source: str
    sample_count: int

    @property
    def key(self) -> tuple[str, str, float]:
        return self.scope_kind, self.scope_id, self.ts


def mo_point_estimate(obs: Observation) -> PointEstimate:
    if obs.observer_kind != "MO":
        raise EstimationError(f"mo_point_estimate got a {obs.observer_kind} observation")
    if obs.degenerate:
        raise EstimationError("observation has an empty detection zone")
    n = obs.n_det
    k = (1 + n) * 1000.0 / obs.zone_total_length
    v = (sum(d.speed for d in obs.detections) + obs.ego_speed) / (n + 1) * MS_TO_KMH
    return PointEstimate(k, v, k * v)


def po_point_estimate(obs: Observation) -> PointEstimate:
    if obs.observer_kind != "PO":
        raise EstimationError(f"po_point_estimate got a {obs.observer_kind} observation")
    if obs.degenerate:
        raise EstimationError("observation has an empty detection zone")
    n = obs.n_det
    k = n * 1000.0 / obs.zone_total_length
    if n == 0:
        return PointEstimate(k, None, None)
    v = sum(d.speed for d in obs.detections) / n * MS_TO_KMH
    return PointEstimate(k, v, k * v)


def point_estimate(obs: Observation) -> PointEstimate:
    return mo_point_estimate(obs) if obs.observer_kind == "MO" else po_point_estimate(obs)


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def aggregate_interval(
    points: Mapping[str, Sequence[PointEstimate]],
    ts: float,
    scope: tuple[str, str],
    source: str,
) -> TrafficState | None:
    """Two-stage (per observer, then across observers) interval mean.

    Returns None when no observer contributed, so gaps stay explicit.
    """
    per_k, per_v, per_q = [], [], []
    for series in points.values():
        if not series:
            continue
        per_k.append(_mean([p.k for p in series]))
        v = _mean([p.v for p in series if p.v is not None])
        q = _mean([p.q for p in series if p.q is not None])
        if v is not None:
            per_v.append(v)
        if q is not None:
            per_q.append(q)
    if not per_k:
        return None
    v = _mean(per_v)
    q = _mean(per_q) if v is not None else None
    return TrafficState(scope[0], scope[1], ts, _mean(per_k), v, q, source, len(per_k))


class LaneStay(NamedTuple):
    """One observer's uninterrupted stay on one lane inside one interval."""

    observer_id: str
    kind: str
    lane: str
    ts: float
    t_start: float
    t_end: float
    k: float
    v: float | None
    q: float | None
    steps: int


@dataclass
class IntervalEstimate:
    ts: float
    states: list[TrafficState]
    stays: list[LaneStay]


def _stay(observer_id, kind, lane, ts, run: list[tuple[float, PointEstimate]]) -> LaneStay:
    pts = [p for _, p in run]
    vs = [p.v for p in pts if p.v is not None]
    qs = [p.q for p in pts if p.q is not None]
    return LaneStay(observer_id, kind, lane, ts, run[0][0], run[-1][0],
                    _mean([p.k for p in pts]), _mean(vs), _mean(qs) if vs else None, len(pts))


def estimate_interval(
    frames: Sequence[tuple[float, Sequence[VehicleState]]],
    assignment: ObserverAssignment,
    sensors: SensorConfig,
    network: RoadNetwork,
) -> IntervalEstimate:
    """Lane-scope MO/PO/combined states for one interval."""
    ts = assignment.ts
    mo_ids = set(assignment.mo_ids)
    grouped: dict[tuple[str, str], dict[str, list[PointEstimate]]] = {}
    runs: dict[str, list[tuple[str, str, list[tuple[float, PointEstimate]]]]] = {}

    def add(observer_id: str, kind: str, lane: str, t: float, p: PointEstimate):
        source = "mo_estimate" if kind == "MO" else "po_estimate"
        grouped.setdefault((lane, source), {}).setdefault(observer_id, []).append(p)
        obs_runs = runs.setdefault(observer_id, [])
        if obs_runs and obs_runs[-1][1] == lane:
            obs_runs[-1][2].append((t, p))
        else:
            obs_runs.append((kind, lane, [(t, p)]))

    if mo_ids or assignment.po_anchors:
        for t, states in frames:
            world = Snapshot(states, t)
            for vid in sorted(mo_ids & world.by_id.keys()):
                s = world.by_id[vid]
                pose = ObserverPose(f"mo{vid}", "MO", s.lane, s.position, s.speed, vid)
                add(pose.observer_id, "MO", s.lane, t, mo_point_estimate(detect(pose, world, sensors, network)))
            for a in assignment.po_anchors:
                pose = ObserverPose(f"po{a.vehicle_id}", "PO", a.lane, a.position)
                add(pose.observer_id, "PO", a.lane, t, po_point_estimate(detect(pose, world, sensors, network)))

    states: list[TrafficState] = []
    for (lane, source), points in sorted(grouped.items()):
        st = aggregate_interval(points, ts, ("lane", lane), source)
        if st is not None:
            states.append(st)
    states.extend(combine_sources(states))
    states.sort(key=lambda s: (s.scope_id, SOURCES.index(s.source)))
    stays = [
        _stay(oid, kind, lane, ts, run)
        for oid in sorted(runs)
        for kind, lane, run in runs[oid]
    ]
    return IntervalEstimate(ts, states, stays)


def combine_sources(states: Iterable[TrafficState]) -> list[TrafficState]:
    """Observer-count-weighted MO/PO mean per scope and interval."""
    by_key: dict[tuple, list[TrafficState]] = {}
    for s in states:
        if s.source in ("mo_estimate", "po_estimate"):
            by_key.setdefault(s.key, []).append(s)
    out = []
    for (kind, sid, ts), grp in sorted(by_key.items()):
        n = sum(s.sample_count for s in grp)
        k = sum(s.k * s.sample_count for s in grp) / n
        with_v = [s for s in grp if s.v is not None]
        v = q = None
        if with_v:
            nv = sum(s.sample_count for s in with_v)
            v = sum(s.v * s.sample_count for s in with_v) / nv
            q = sum(s.q * s.sample_count for s in with_v) / nv
        out.append(TrafficState(kind, sid, ts, k, v, q, "combined", n))
    return out


def _interval_job(args):
    frames, assignment, sensors, network = args
    return estimate_interval(frames, assignment, sensors, network)


def estimate_link_states(
    log: TrajectoryLog,
    network: RoadNetwork,
    assignments: Sequence[ObserverAssignment],
    sensors: SensorConfig,
    agg: AggregationConfig,
    workers: int = 1,
) -> list[IntervalEstimate]:
    """Estimate every interval; results come back in interval order regardless of ``workers``."""
    groups = interval_index(log, agg)
    jobs = []
    for a in assignments:
        idx = groups.get(a.interval, [])
        frames = [(log.time(i), log.frames[i]) for i in idx]
        jobs.append((frames, a, sensors, network))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_interval_job, jobs))
    return [_interval_job(j) for j in jobs]


def scope_rollup(
    link_states: Iterable[TrafficState],
    target: str,
    mapping: Mapping[str, str] | None = None,
) -> list[TrafficState]:
    """Unweighted mean of lane states per (target scope, interval, source).

    ``target`` is ``cluster`` (needs ``mapping`` lane -> cluster id) or
    ``network``. Speeds and flows average over the lanes that have them.
    """
    if target not in ("cluster", "network"):
        raise ValueError(f"unknown rollup target {target!r}")
    groups: dict[tuple[str, float, str], list[TrafficState]] = {}
    for s in link_states:
        if s.scope_kind != "lane":
            raise ValueError("scope_rollup expects lane-scope states")
        if target == "network":
            sid = "network"
        else:
            if mapping is None or s.scope_id not in mapping:
                raise ValueError(f"lane {s.scope_id!r} has no cluster assignment")
            sid = str(mapping[s.scope_id])
        groups.setdefault((sid, s.ts, s.source), []).append(s)
    out = []
    for (sid, ts, source), grp in groups.items():
        vs = [s.v for s in grp if s.v is not None]
        qs = [s.q for s in grp if s.q is not None]
        out.append(TrafficState(
            target, sid, ts, _mean([s.k for s in grp]), _mean(vs), _mean(qs) if vs else None,
            source, sum(s.sample_count for s in grp),
        ))
    out.sort(key=lambda s: (s.ts, s.scope_id, SOURCES.index(s.source) if s.source in SOURCES else 99))
    return out


def ground_truth_states(gt: Iterable[GroundTruthState], speed: str = "flow") -> list[TrafficState]:
    """Ground truth as lane-scope states, restricted to lanes with observations.

    ``speed="flow"`` reports ``q / k``; ``speed="space"`` reports the mean
    speed over all vehicle-steps instead.
    """
    out = []
    for g in gt:
        if not g.observed:
            continue
        v = g.v if speed == "flow" else g.v_space
        out.append(TrafficState("lane", g.lane, g.ts, g.k, v, g.q, "ground_truth", g.vehicle_steps))
    return out
