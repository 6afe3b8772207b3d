"""Discrete-time car-following simulation and ground-truth lane states.

Dynamics follow the Intelligent Driver Model with an explicit Euler update
(speed first, then position with the new speed, speed clamped at zero).
There is no lane changing: a vehicle entering an edge is put on the next
lane of that edge in round-robin order and stays there until it leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .network import RoadNetwork, ScenarioError


@dataclass(frozen=True, slots=True)
class VehicleState:
    vehicle_id: int
    lane: str
    position: float
    speed: float
    length: float = 5.0


class EntryEvent(NamedTuple):
    vehicle_id: int
    lane: str
    t: float


@dataclass(frozen=True)
class IDMParams:
    time_headway: float = 1.5
    max_accel: float = 1.0
    comfort_decel: float = 1.5
    jam_distance: float = 2.0
    vehicle_length: float = 5.0
    delta: float = 4.0


def idm_acceleration(speed: float, desired: float, gap: float, closing: float, p: IDMParams) -> float:
    """IDM acceleration; ``gap`` is bumper-to-bumper, ``closing`` = own speed - leader speed."""
    free = 1.0 - (speed / desired) ** p.delta
    if math.isinf(gap):
        return p.max_accel * free
    s_star = p.jam_distance + max(
        0.0, speed * p.time_headway + speed * closing / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
    )
    gap = max(gap, 1e-3)
    return p.max_accel * (free - (s_star / gap) ** 2)


@dataclass(frozen=True)
class TrajectoryLog:
    """Per-step vehicle snapshots on a constant time grid.

    ``frames[i]`` holds the states at ``t0 + i * step_size`` sorted by vehicle
    id. Entry events are derived from the frames: a vehicle enters a lane when
    it shows up there after being absent or on another lane, or when its
    position drops (wrap-around on a loop edge). The first frame carries no
    entries.
    """

    step_size: float
    t0: float
    frames: tuple[tuple[VehicleState, ...], ...]
    entries: tuple[EntryEvent, ...] = field(default=None)  # type: ignore[assignment]
    queued: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.entries is None:
            object.__setattr__(self, "entries", derive_entries(self.frames, self.t0, self.step_size))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> list[float]:
        return [self.time(i) for i in range(len(self.frames))]

    def time(self, i: int) -> float:
        return self.t0 + i * self.step_size

    def items(self):
        for i, frame in enumerate(self.frames):
            yield self.time(i), frame

    @property
    def vehicle_ids(self) -> set[int]:
        return {s.vehicle_id for frame in self.frames for s in frame}


def derive_entries(frames: Sequence[Sequence[VehicleState]], t0: float, step: float) -> tuple[EntryEvent, ...]:
    out = []
    prev: dict[int, VehicleState] = {}
    for i, frame in enumerate(frames):
        cur = {s.vehicle_id: s for s in frame}
        if i > 0:
            t = t0 + i * step
            for s in frame:
                p = prev.get(s.vehicle_id)
                if p is None or p.lane != s.lane or s.position < p.position:
                    out.append(EntryEvent(s.vehicle_id, s.lane, t))
        prev = cur
    return tuple(out)


# -- demand -------------------------------------------------------------------

@dataclass(frozen=True)
class InitialPlacement:
    """Vehicles present at the start, spread over the lanes of ``edge``.

    ``placement`` is ``uniform`` (equal spacing) or ``random`` (seeded,
    non-overlapping). Vehicles on a loop edge without ``destination`` circulate
    forever.
    """

    edge: str
    count: int
    speed: float = 0.0
    placement: str = "uniform"
    lane: int | None = None
    destination: str | None = None


@dataclass(frozen=True)
class Flow:
    """Poisson arrivals at ``origin``; the rate ramps linearly to ``end_rate_vph`` when given."""

    origin: str
    rate_vph: float
    destination: str | None = None
    end_rate_vph: float | None = None
    start_s: float = 0.0
    end_s: float | None = None

    def rate_at(self, t: float, horizon: float) -> float:
        end = horizon if self.end_s is None else self.end_s
        if t < self.start_s or t >= end:
            return 0.0
        if self.end_rate_vph is None or end <= self.start_s:
            return self.rate_vph
        frac = (t - self.start_s) / (end - self.start_s)
        return self.rate_vph + (self.end_rate_vph - self.rate_vph) * frac


@dataclass(frozen=True)
class DemandSpec:
    initial: tuple[InitialPlacement, ...] = ()
    flows: tuple[Flow, ...] = ()


class _Vehicle:
    __slots__ = ("id", "route", "leg", "cyclic", "lane", "index", "pos", "speed", "length")

    def __init__(self, vid, route, cyclic, length):
        self.id = vid
        self.route = route
        self.leg = 0
        self.cyclic = cyclic
        self.lane = ""
        self.index = 0
        self.pos = 0.0
        self.speed = 0.0
        self.length = length

    @property
    def edge(self) -> str:
        return self.route[self.leg]

    def next_edge(self) -> str | None:
        if self.cyclic:
            return self.route[(self.leg + 1) % len(self.route)]
        if self.leg + 1 < len(self.route):
            return self.route[self.leg + 1]
        return None


def _route(net: RoadNetwork, origin: str, destination: str | None, where: str) -> tuple[tuple[str, ...], bool]:
    if not net.has_edge(origin):
        raise ScenarioError(f"unknown edge {origin!r}", where)
    if destination is None:
        return (origin,), net.edge(origin).is_loop
    if not net.has_edge(destination):
        raise ScenarioError(f"unknown edge {destination!r}", where)
    return net.shortest_route(origin, destination), False


def _initial_positions(length: float, n: int, placement: str, min_gap: float, loop: bool, rng) -> list[float]:
    if n == 0:
        return []
    if n * min_gap > length:
        raise ScenarioError(f"{n} vehicles do not fit on a {length} m lane")
    if placement == "uniform":
        spacing = length / n
        offset = 0.0 if loop else spacing / 2
        return [offset + j * spacing for j in range(n)]
    if placement == "random":
        free = length - n * min_gap
        u = np.sort(rng.uniform(0.0, free, size=n))
        return [float(u[j]) + j * min_gap for j in range(n)]
    raise ScenarioError(f"unknown placement {placement!r}")


def simulate(
    network: RoadNetwork,
    demand: DemandSpec,
    horizon: float,
    step: float = 1.0,
    seed: int = 0,
    params: IDMParams = IDMParams(),
) -> TrajectoryLog:
    """Run the simulation and return the trajectory log.

    Frames are recorded at ``0, step, ..., horizon - step``. Arrivals that
    cannot be inserted wait in a FIFO queue at their origin; the number still
    waiting at the end is reported as ``log.queued``.
    """
    if not step > 0:
        raise ScenarioError("step > 0 violated", "demand.step_s")
    n_steps = horizon / step
    if abs(n_steps - round(n_steps)) > 1e-9 or horizon < 0:
        raise ScenarioError("horizon must be a non-negative multiple of step", "demand.horizon_s")
    n_steps = int(round(n_steps))
    rng = np.random.default_rng(seed)
    min_gap = params.vehicle_length + params.jam_distance

    vehicles: dict[int, _Vehicle] = {}
    rr: dict[str, int] = {}
    next_id = 0

    def rr_lane(edge_id: str) -> int:
        count = network.edge(edge_id).lane_count
        k = rr.get(edge_id, 0)
        rr[edge_id] = k + 1
        return k % count

    for i, init in enumerate(demand.initial):
        where = f"demand.initial[{i}]"
        route, cyclic = _route(network, init.edge, init.destination, where)
        edge = network.edge(init.edge)
        if init.lane is not None and not 0 <= init.lane < edge.lane_count:
            raise ScenarioError("lane index out of range", f"{where}.lane")
        lanes = [init.lane] if init.lane is not None else list(range(edge.lane_count))
        per_lane = {ln: 0 for ln in lanes}
        for j in range(init.count):
            per_lane[lanes[j % len(lanes)]] += 1
        for ln, n in per_lane.items():
            for pos in _initial_positions(edge.length, n, init.placement, min_gap, edge.is_loop, rng):
                v = _Vehicle(next_id, route, cyclic, params.vehicle_length)
                v.index, v.lane, v.pos = ln, f"{edge.id}_{ln}", pos
                v.speed = min(init.speed, edge.speed_limit)
                vehicles[next_id] = v
                next_id += 1

    flows = []
    for i, fl in enumerate(demand.flows):
        route, _ = _route(network, fl.origin, fl.destination, f"demand.flows[{i}]")
        if fl.rate_vph < 0 or (fl.end_rate_vph is not None and fl.end_rate_vph < 0):
            raise ScenarioError("rate_vph >= 0 violated", f"demand.flows[{i}].rate_vph")
        flows.append((fl, route))
    queues: dict[str, list[tuple[str, ...]]] = {}
    for fl, route in flows:
        queues.setdefault(fl.origin, [])

    frames: list[tuple[VehicleState, ...]] = []
    for i in range(n_steps):
        t = i * step
        by_lane = _lane_lists(vehicles)

        for fl, route in flows:
            lam = fl.rate_at(t, horizon) * step / 3600.0
            n = int(rng.poisson(lam)) if lam > 0 else 0
            queues[fl.origin].extend([route] * n)
        for origin in sorted(queues):
            q = queues[origin]
            edge = network.edge(origin)
            tried = 0
            while q and tried < edge.lane_count:
                tried += 1
                ln = rr.get(origin, 0) % edge.lane_count
                lid = f"{origin}_{ln}"
                occupants = by_lane.get(lid, [])
                rear = occupants[-1] if occupants else None
                if rear is not None and rear.pos - rear.length < params.jam_distance:
                    rr[origin] = rr.get(origin, 0) + 1
                    continue
                rr[origin] = rr.get(origin, 0) + 1
                v = _Vehicle(next_id, q.pop(0), False, params.vehicle_length)
                next_id += 1
                v.index, v.lane, v.pos = ln, lid, 0.0
                if rear is None:
                    v.speed = edge.speed_limit
                else:
                    gap = rear.pos - rear.length
                    v.speed = min(edge.speed_limit, rear.speed, max(0.0, (gap - params.jam_distance) / params.time_headway))
                vehicles[v.id] = v
                by_lane.setdefault(lid, []).append(v)

        frames.append(tuple(
            # ids are assigned increasingly and dicts keep insertion order, so this is id order
            VehicleState(v.id, v.lane, v.pos, v.speed, v.length) for v in vehicles.values()
        ))
        _advance(network, vehicles, by_lane, step, params, rr_lane)

    queued = sum(len(q) for q in queues.values())
    return TrajectoryLog(step_size=step, t0=0.0, frames=tuple(frames), queued=queued)


def _lane_lists(vehicles: dict[int, _Vehicle]) -> dict[str, list[_Vehicle]]:
    """Lane id -> vehicles sorted front (largest position) to back."""
    out: dict[str, list[_Vehicle]] = {}
    for v in vehicles.values():
        out.setdefault(v.lane, []).append(v)
    for lst in out.values():
        lst.sort(key=lambda v: (-v.pos, v.id))
    return out


def _leader(network, v: _Vehicle, lane_list, j, by_lane):
    """(gap, leader_speed) for vehicle at index ``j`` of its lane list; gap inf on a free road."""
    if j > 0:
        ahead = lane_list[j - 1]
        return ahead.pos - ahead.length - v.pos, ahead.speed
    edge = network.edge(v.edge)
    if v.cyclic and edge.is_loop:
        rear = lane_list[-1]
        if rear is v:
            return edge.length - v.length, v.speed
        return edge.length - v.pos + rear.pos - rear.length, rear.speed
    nxt = v.next_edge()
    if nxt is None:
        return math.inf, v.speed
    best = None
    for lid in network.lanes_of(nxt):
        occ = by_lane.get(lid)
        if occ and (best is None or occ[-1].pos < best.pos):
            best = occ[-1]
    if best is None:
        return math.inf, v.speed
    return edge.length - v.pos + best.pos - best.length, best.speed


def _advance(network, vehicles, by_lane, dt, params, rr_lane):
    new_speed: dict[int, float] = {}
    for lid, lst in by_lane.items():
        limit = network.lane(lid).speed_limit
        for j, v in enumerate(lst):
            if j > 0:
                ahead = lst[j - 1]
                gap, lead_speed = ahead.pos - ahead.length - v.pos, ahead.speed
            else:
                gap, lead_speed = _leader(network, v, lst, j, by_lane)
            acc = idm_acceleration(v.speed, limit, gap, v.speed - lead_speed, params)
            new_speed[v.id] = max(0.0, v.speed + acc * dt)

    lengths = {e.id: e.length for e in network.edges}
    old_pos = {v.id: v.pos for v in vehicles.values()}
    movers = []
    for v in vehicles.values():
        v.speed = new_speed[v.id]
        v.pos = v.pos + v.speed * dt
        if v.pos >= lengths[v.route[v.leg]]:
            movers.append(v)

    # vehicles that stay on their lane are placed first; lane entrants go behind them
    mover_ids = {v.id for v in movers}
    lanes: dict[str, list[_Vehicle]] = {}
    for v in vehicles.values():
        if v.id not in mover_ids:
            lanes.setdefault(v.lane, []).append(v)
    for lst in lanes.values():
        lst.sort(key=lambda v: (-v.pos, v.id))
        _clamp_lane(lst, old_pos, dt)

    movers.sort(key=lambda v: (-(v.pos - lengths[v.route[v.leg]]), v.id))
    for v in movers:
        edge = network.edge(v.edge)
        nxt = v.next_edge()
        if nxt is None:
            del vehicles[v.id]
            continue
        index = v.index if nxt == v.edge else rr_lane(nxt)
        lid = f"{nxt}_{index}"
        lst = lanes.setdefault(lid, [])
        rear_limit = lst[-1].pos - lst[-1].length if lst else math.inf
        if rear_limit < 0:
            # no room downstream yet: hold at the stop line
            v.pos = edge.length
            v.speed = max(0.0, (v.pos - old_pos[v.id]) / dt)
            stay = lanes.setdefault(v.lane, [])
            stay.append(v)
            stay.sort(key=lambda u: (-u.pos, u.id))
            _clamp_lane(stay, old_pos, dt)
            continue
        v.pos = min(v.pos - edge.length, rear_limit, network.edge(nxt).length)
        v.leg = (v.leg + 1) % len(v.route) if v.cyclic else v.leg + 1
        v.index, v.lane = index, lid
        old_pos[v.id] = -math.inf
        lst.append(v)


def _clamp_lane(lst, old_pos, dt):
    """Front-to-back overlap guard; vehicles that just entered the lane keep their speed."""
    for j in range(1, len(lst)):
        ahead, v = lst[j - 1], lst[j]
        limit = ahead.pos - ahead.length
        if v.pos > limit:
            prev = old_pos[v.id]
            v.pos = max(limit, prev) if prev > -math.inf else max(limit, 0.0)
            if prev > -math.inf:
                v.speed = max(0.0, (v.pos - prev) / dt)


def constant_speed_log(
    network: RoadNetwork,
    edge: str,
    count: int,
    speed: float,
    horizon: float,
    step: float = 1.0,
    lane: int = 0,
    length: float = 5.0,
) -> TrajectoryLog:
    """Kinematic reference log: ``count`` vehicles equally spaced on a loop lane, all at ``speed``."""
    e = network.edge(edge)
    if not e.is_loop:
        raise ValueError("constant_speed_log needs a loop edge")
    spacing = e.length / count
    lid = f"{edge}_{lane}"
    frames = []
    for i in range(int(round(horizon / step))):
        t = i * step
        frames.append(tuple(
            VehicleState(j, lid, math.fmod(j * spacing + speed * t, e.length), speed, length) for j in range(count)
        ))
    return TrajectoryLog(step_size=step, t0=0.0, frames=tuple(frames))


# -- ground truth -------------------------------------------------------------

@dataclass(frozen=True)
class AggregationConfig:
    t_agg: float = 300.0
    start: float = 0.0


@dataclass(frozen=True)
class GroundTruthState:
    """Lane state over one interval.

    ``k`` veh/km (time-mean occupancy), ``q`` veh/h (entries), ``v`` km/h as
    ``q / k`` (absent when ``k == 0``). ``v_space`` is the mean speed of all
    vehicle-steps on the lane, kept for flow/occupancy consistency checks.
    """

    lane: str
    ts: float
    k: float
    q: float
    v: float | None
    v_space: float | None = None
    vehicle_steps: int = 0
    entries: int = 0

    @property
    def observed(self) -> bool:
        return self.vehicle_steps > 0


def steps_per_interval(agg: AggregationConfig, step: float) -> int:
    n = agg.t_agg / step
    if agg.t_agg <= 0 or abs(n - round(n)) > 1e-9:
        raise ScenarioError("t_agg must be a positive multiple of the step size", "aggregation.t_agg_s")
    return int(round(n))


def interval_index(log: TrajectoryLog, agg: AggregationConfig) -> dict[int, list[int]]:
    """Complete intervals only: interval number -> frame indices."""
    spi = steps_per_interval(agg, log.step_size)
    groups: dict[int, list[int]] = {}
    for i in range(len(log.frames)):
        rel = (log.time(i) - agg.start) / log.step_size
        r = int(round(rel))
        if r < 0 or abs(rel - r) > 1e-6:
            continue
        groups.setdefault(r // spi, []).append(i)
    return {n: idx for n, idx in sorted(groups.items()) if len(idx) == spi}


def interval_start(agg: AggregationConfig, n: int) -> float:
    return agg.start + n * agg.t_agg


def ground_truth(log: TrajectoryLog, agg: AggregationConfig, network: RoadNetwork) -> list[GroundTruthState]:
    """One state per (interval, lane) for every lane of ``network``, ordered by interval then lane."""
    groups = interval_index(log, agg)
    spi = steps_per_interval(agg, log.step_size)
    entry_at: dict[float, dict[str, int]] = {}
    for ev in log.entries:
        per = entry_at.setdefault(ev.t, {})
        per[ev.lane] = per.get(ev.lane, 0) + 1

    out = []
    for n, idx in groups.items():
        counts: dict[str, int] = {}
        speed_sum: dict[str, float] = {}
        entries: dict[str, int] = {}
        for i in idx:
            for s in log.frames[i]:
                counts[s.lane] = counts.get(s.lane, 0) + 1
                speed_sum[s.lane] = speed_sum.get(s.lane, 0.0) + s.speed
            for lane, c in entry_at.get(log.time(i), {}).items():
                entries[lane] = entries.get(lane, 0) + c
        ts = interval_start(agg, n)
        for lane in network.lanes:
            c = counts.get(lane.id, 0)
            k = c / spi / lane.length * 1000.0
            q = entries.get(lane.id, 0) * 3600.0 / agg.t_agg
            v = q / k if k > 0 else None
            v_space = speed_sum[lane.id] / c * 3.6 if c else None
            out.append(GroundTruthState(lane.id, ts, k, q, v, v_space, c, entries.get(lane.id, 0)))
    return out


def network_means(
    states: Iterable[GroundTruthState],
    scope: Iterable[str] | None = None,
    include_all: bool = False,
) -> list[tuple[float, float, float]]:
    """Per interval ``(ts, k_avg, q_avg)``: unweighted means over lanes in ``scope``.

    By default only lanes with at least one vehicle-step in the interval
    count; ``include_all`` averages over every lane in scope.
    """
    states = list(states)
    lanes = set(scope) if scope is not None else {s.lane for s in states}
    if not lanes:
        raise ValueError("network_means needs a nonempty scope")
    per: dict[float, list[GroundTruthState]] = {}
    for s in states:
        if s.lane in lanes and (include_all or s.observed):
            per.setdefault(s.ts, []).append(s)
    return [
        (ts, sum(s.k for s in grp) / len(grp), sum(s.q for s in grp) / len(grp))
        for ts, grp in sorted(per.items())
    ]
