"""Surrounding-vehicle detection for moving and parked observers.

Detection runs in two stages. The lane stage keeps vehicles whose lane
stands in an enabled relation to the ego lane:

* ``ego``: the ego lane itself,
* ``adjacent``: the other same-direction lanes of the ego edge,
* ``opposite``: the lanes of the ego edge's oncoming edge.

The distance stage keeps a vehicle iff its signed longitudinal offset ``d``
from the ego satisfies ``-backward <= d <= forward`` for that relation.
Opposite-lane positions are mapped onto the ego axis as ``length - p``.
On a loop edge offsets wrap around, so a ring has no artificial seam.
No occlusion, noise or misclassification is modeled.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

from .microsim import VehicleState
from .network import RoadNetwork

RELATIONS = ("ego", "adjacent", "opposite")

# Radar/LiDAR rows of the sensor table: long-range radar 210-300 m,
# surround radar >180 m, long-range LiDAR 1000 m.
MAX_RANGE_M = 1000.0


class DetectionError(ValueError):
    pass


class Range(NamedTuple):
    forward: float
    backward: float

    @property
    def span(self) -> float:
        return self.forward + self.backward


@dataclass(frozen=True)
class SensorConfig:
    """Detection ranges per lane relation.

    ``w_left``/``w_right`` are lateral half-widths; lanes are discrete, so
    they only document the zone and have no effect beyond ``enabled``.
    ``cross_edge`` extends detection onto the edges directly downstream
    (forward) and upstream (backward) of the ego edge.
    """

    ranges: Mapping[str, Range]
    enabled: frozenset[str] = frozenset({"ego", "adjacent"})
    w_left: float = 7.0
    w_right: float = 3.5
    cross_edge: bool = False

    def __post_init__(self):
        ranges = {}
        for rel, r in dict(self.ranges).items():
            if rel not in RELATIONS:
                raise ValueError(f"unknown lane relation {rel!r}")
            r = Range(float(r[0]), float(r[1]))
            if r.forward < 0 or r.backward < 0:
                raise ValueError(f"{rel}: ranges must be >= 0")
            if r.forward > MAX_RANGE_M or r.backward > MAX_RANGE_M:
                raise ValueError(f"{rel}: ranges must not exceed {MAX_RANGE_M} m")
            ranges[rel] = r
        object.__setattr__(self, "ranges", MappingProxyType(ranges))
        enabled = frozenset(self.enabled)
        unknown = enabled - set(RELATIONS)
        if unknown:
            raise ValueError(f"unknown lane relations {sorted(unknown)}")
        missing = enabled - set(ranges)
        if missing:
            raise ValueError(f"no ranges for enabled relations {sorted(missing)}")
        object.__setattr__(self, "enabled", enabled)
        if self.w_left < 0 or self.w_right < 0:
            raise ValueError("lateral widths must be >= 0")

    def __reduce__(self):
        return (SensorConfig, (dict(self.ranges), self.enabled, self.w_left, self.w_right, self.cross_edge))

    def range(self, relation: str) -> Range:
        return self.ranges[relation]

    def with_enabled(self, *relations: str) -> "SensorConfig":
        return SensorConfig(self.ranges, frozenset(relations), self.w_left, self.w_right, self.cross_edge)

    def scaled(self, factor: float) -> "SensorConfig":
        return SensorConfig(
            {rel: Range(r.forward * factor, r.backward * factor) for rel, r in self.ranges.items()},
            self.enabled, self.w_left, self.w_right, self.cross_edge,
        )


def default_sensor_profile(kind: str = "long-range") -> SensorConfig:
    """Built-in profiles.

    ``long-range``: ego lane 200 m ahead / 100 m behind, adjacent and
    opposite lanes 100 / 50 m. ``mid-range`` halves every range. Both keep
    the forward range at twice the backward range and the left width at
    twice the right width.
    """
    base = SensorConfig(
        {"ego": Range(200.0, 100.0), "adjacent": Range(100.0, 50.0), "opposite": Range(100.0, 50.0)},
        w_left=7.0,
        w_right=3.5,
    )
    if kind == "long-range":
        return base
    if kind == "mid-range":
        return base.scaled(0.5)
    raise ValueError(f"unknown sensor profile {kind!r}")


class Detection(NamedTuple):
    vehicle_id: int
    lane: str
    distance: float
    speed: float


@dataclass(frozen=True)
class ObserverPose:
    observer_id: str
    kind: str  # "MO" or "PO"
    lane: str
    position: float
    speed: float = 0.0
    vehicle_id: int | None = None


@dataclass(frozen=True)
class Observation:
    observer_id: str
    observer_kind: str
    t: float
    ego_lane: str
    ego_speed: float
    detections: tuple[Detection, ...]
    zone_total_length: float
    lanes_in_zone: int = field(default=0)

    @property
    def n_det(self) -> int:
        return len(self.detections)

    @property
    def degenerate(self) -> bool:
        return not self.zone_total_length > 0


class Snapshot:
    """Vehicles of one timestep indexed by lane for range queries."""

    def __init__(self, states: Iterable[VehicleState], t: float = 0.0):
        self.t = t
        by_lane: dict[str, list[VehicleState]] = {}
        self.by_id: dict[int, VehicleState] = {}
        for s in states:
            by_lane.setdefault(s.lane, []).append(s)
            self.by_id[s.vehicle_id] = s
        self._lanes = {}
        for lane, lst in by_lane.items():
            lst.sort(key=lambda s: (s.position, s.vehicle_id))
            self._lanes[lane] = (lst, [s.position for s in lst])

    def between(self, lane: str, lo: float, hi: float) -> list[VehicleState]:
        entry = self._lanes.get(lane)
        if entry is None or hi < lo:
            return []
        lst, pos = entry
        return lst[bisect.bisect_left(pos, lo): bisect.bisect_right(pos, hi)]


def _zone_lanes(ego_lane: str, sensors: SensorConfig, network: RoadNetwork) -> list[tuple[str, str, bool]]:
    """(lane id, relation, on opposite axis) for every lane of the zone."""
    lane = network.lane(ego_lane)
    out = []
    if "ego" in sensors.enabled:
        out.append((ego_lane, "ego", False))
    if "adjacent" in sensors.enabled:
        out.extend((lid, "adjacent", False) for lid in network.lanes_of(lane.edge) if lid != ego_lane)
    if "opposite" in sensors.enabled and lane.opposite_edge is not None:
        out.extend((lid, "opposite", True) for lid in network.lanes_of(lane.opposite_edge))
    return out


def zone_total_length(ego_lane: str, sensors: SensorConfig, network: RoadNetwork) -> float:
    return sum(sensors.range(rel).span for _, rel, _ in _zone_lanes(ego_lane, sensors, network))


def detect(
    ego: ObserverPose,
    world: Snapshot,
    sensors: SensorConfig,
    network: RoadNetwork,
) -> Observation:
    """Run lane- then distance-based detection for one observer at one timestep."""
    if ego.kind not in ("MO", "PO"):
        raise DetectionError(f"unknown observer kind {ego.kind!r}")
    if not network.has_lane(ego.lane):
        raise DetectionError(f"ego lane {ego.lane!r} is not in the network")
    if ego.kind == "MO" and ego.vehicle_id not in world.by_id:
        raise DetectionError(f"moving observer {ego.vehicle_id} not found in snapshot at t={world.t}")
    zone = _zone_lanes(ego.lane, sensors, network)
    total = sum(sensors.range(rel).span for _, rel, _ in zone)
    ego_speed = ego.speed if ego.kind == "MO" else 0.0
    if not total > 0:
        return Observation(ego.observer_id, ego.kind, world.t, ego.lane, ego_speed, (), 0.0, len(zone))

    ego_edge = network.edge(network.lane(ego.lane).edge)
    x = ego.position
    found: dict[int, Detection] = {}

    def keep(s: VehicleState, distance: float):
        if s.vehicle_id == ego.vehicle_id and ego.kind == "MO":
            return
        prev = found.get(s.vehicle_id)
        if prev is None or abs(distance) < abs(prev.distance):
            found[s.vehicle_id] = Detection(s.vehicle_id, s.lane, distance, s.speed)

    for lid, rel, mirrored in zone:
        r = sensors.range(rel)
        length = network.lane(lid).length
        if mirrored:
            # oncoming lane: ego-forward is decreasing position on that lane
            x_lane, window, sign = length - x, Range(r.backward, r.forward), -1.0
        else:
            x_lane, window, sign = x, r, 1.0
        if ego_edge.is_loop:
            for s in _loop_window(world, lid, x_lane, window, length):
                d = (sign * (s.position - x_lane)) % length
                keep(s, d if d <= r.forward else d - length)
            continue
        for s in world.between(lid, x_lane - window.backward, x_lane + window.forward):
            keep(s, sign * (s.position - x_lane))
        if sensors.cross_edge and not mirrored:
            _cross_edge(world, network, ego_edge.id, lid, x, r, keep)

    detections = tuple(sorted(found.values(), key=lambda d: (d.distance, d.vehicle_id)))
    return Observation(ego.observer_id, ego.kind, world.t, ego.lane, ego_speed, detections, total, len(zone))


def _loop_window(world: Snapshot, lane: str, x: float, r: Range, length: float) -> list[VehicleState]:
    if r.span >= length:
        return world.between(lane, 0.0, length)
    lo, hi = x - r.backward, x + r.forward
    out = world.between(lane, max(lo, 0.0), min(hi, length))
    if lo < 0:
        out = out + world.between(lane, lo + length, length)
    if hi > length:
        out = out + world.between(lane, 0.0, hi - length)
    return out


def _cross_edge(world, network, edge_id, lid, x, r, keep):
    """Same-index lanes on the edges directly downstream/upstream of the ego edge."""
    index = network.lane(lid).index
    length = network.edge(edge_id).length
    ahead = length - x
    for nxt in network.adjacency[edge_id]:
        if nxt == edge_id:
            continue
        for other in network.lanes_of(nxt):
            if network.lane(other).index != index:
                continue
            for s in world.between(other, 0.0, r.forward - ahead):
                keep(s, ahead + s.position)
    for up in network.upstream(edge_id):
        if up == edge_id:
            continue
        up_len = network.edge(up).length
        for other in network.lanes_of(up):
            if network.lane(other).index != index:
                continue
            for s in world.between(other, up_len - (r.backward - x), up_len):
                keep(s, -(x + up_len - s.position))
