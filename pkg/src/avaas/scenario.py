"""Scenario files: one TOML document drives every pipeline stage.

Sections: ``network``, ``demand``, ``observers``, ``sensors``,
``aggregation``, ``clustering``, ``estimation``, ``output`` plus a top-level
``seed``. Units are part of the key names (``_m``, ``_s``, ``_mps``,
``_vph``). See README.md for the full schema.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .detection import Range, SensorConfig, default_sensor_profile
from .microsim import AggregationConfig, DemandSpec, Flow, InitialPlacement
from .network import RoadNetwork, ScenarioError, network_from_table, parse_toml, tomllib
from .observers import ObserverPolicy

_SECTION_KEYS = {
    "demand": {"horizon_s", "step_s", "initial", "flows"},
    "observers": {"penetration_pct", "mo_fraction", "seed", "min_per_interval"},
    "sensors": {"profile", "enabled", "cross_edge", "w_left_m", "w_right_m", "ranges"},
    "aggregation": {"t_agg_s", "start_s"},
    "clustering": {"k", "k_max", "features", "source", "seed", "max_iter", "tol"},
    "estimation": {"ground_truth_speed", "lane_stays"},
    "output": {"dir"},
}
_TOP_KEYS = {"seed", "network", *_SECTION_KEYS}


@dataclass(frozen=True)
class ClusteringOptions:
    k: int = 4
    k_max: int = 8
    features: tuple[str, ...] = ("k", "v")
    source: str = "ground_truth"
    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-6


@dataclass(frozen=True)
class ScenarioConfig:
    network: RoadNetwork
    demand: DemandSpec
    horizon: float
    step: float
    seed: int
    aggregation: AggregationConfig
    observers: ObserverPolicy
    sensors: SensorConfig
    clustering: ClusteringOptions
    ground_truth_speed: str = "flow"
    lane_stays: bool = False
    output_dir: str = "out"
    document: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(table: Mapping[str, Any], allowed: set[str], where: str):
    for key in table:
        if key not in allowed:
            raise ScenarioError("unknown key", f"{where}.{key}" if where else key)


def _num(table, key, where, default=None, kind=(int, float)):
    if key not in table:
        if default is None:
            raise ScenarioError("missing required field", f"{where}.{key}")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ScenarioError(f"expected a number, got {value!r}", f"{where}.{key}")
    return value


def parse_override(assignment: str) -> tuple[list[str], Any]:
    """``a.b=value`` -> (["a", "b"], parsed value); values use TOML syntax, bare words are strings."""
    if "=" not in assignment:
        raise ScenarioError(f"override {assignment!r} is not key=value")
    key, _, raw = assignment.partition("=")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict[str, Any], overrides) -> dict[str, Any]:
    doc = copy.deepcopy(doc)
    for path, value in overrides:
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError("cannot override inside a non-table", ".".join(path))
        node[path[-1]] = value
    return doc


def load_scenario(text: str, overrides=(), seed: int | None = None) -> ScenarioConfig:
    doc = parse_toml(text)
    doc = apply_overrides(doc, [parse_override(o) if isinstance(o, str) else o for o in overrides])
    if seed is not None:
        doc["seed"] = seed
        doc.setdefault("observers", {})["seed"] = seed
    return scenario_from_document(doc)


def scenario_from_document(doc: Mapping[str, Any]) -> ScenarioConfig:
    _check_keys(doc, _TOP_KEYS, "")
    for name, allowed in _SECTION_KEYS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ScenarioError("expected a table", name)
            _check_keys(doc[name], allowed, name)
    if "network" not in doc:
        raise ScenarioError("missing [network] section", "network")
    network = network_from_table(doc["network"])
    seed = int(_num(doc, "seed", "", 0, int)) if "seed" in doc else 0

    dem = doc.get("demand", {})
    horizon = float(_num(dem, "horizon_s", "demand", 3600.0))
    step = float(_num(dem, "step_s", "demand", 1.0))
    if not step > 0:
        raise ScenarioError("step > 0 violated", "demand.step_s")
    initial = []
    for i, row in enumerate(dem.get("initial", [])):
        where = f"demand.initial[{i}]"
        _check_keys(row, {"edge", "count", "speed_mps", "placement", "lane", "destination"}, where)
        if "edge" not in row:
            raise ScenarioError("missing required field", f"{where}.edge")
        initial.append(InitialPlacement(
            edge=row["edge"], count=int(_num(row, "count", where, kind=int)),
            speed=float(_num(row, "speed_mps", where, 0.0)), placement=row.get("placement", "uniform"),
            lane=row.get("lane"), destination=row.get("destination"),
        ))
    flows = []
    for i, row in enumerate(dem.get("flows", [])):
        where = f"demand.flows[{i}]"
        _check_keys(row, {"origin", "destination", "rate_vph", "end_rate_vph", "start_s", "end_s"}, where)
        if "origin" not in row:
            raise ScenarioError("missing required field", f"{where}.origin")
        flows.append(Flow(
            origin=row["origin"], rate_vph=float(_num(row, "rate_vph", where)),
            destination=row.get("destination"),
            end_rate_vph=float(row["end_rate_vph"]) if "end_rate_vph" in row else None,
            start_s=float(_num(row, "start_s", where, 0.0)),
            end_s=float(row["end_s"]) if "end_s" in row else None,
        ))
    for i, fl in enumerate(flows):
        for attr in ("origin", "destination"):
            ref = getattr(fl, attr)
            if ref is not None and not network.has_edge(ref):
                raise ScenarioError(f"unknown edge {ref!r}", f"demand.flows[{i}].{attr}")
    for i, ini in enumerate(initial):
        if not network.has_edge(ini.edge):
            raise ScenarioError(f"unknown edge {ini.edge!r}", f"demand.initial[{i}].edge")

    ag = doc.get("aggregation", {})
    agg = AggregationConfig(float(_num(ag, "t_agg_s", "aggregation", 300.0)),
                            float(_num(ag, "start_s", "aggregation", 0.0)))
    ratio = agg.t_agg / step
    if agg.t_agg <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ScenarioError("t_agg must be a positive multiple of step", "aggregation.t_agg_s")

    ob = doc.get("observers", {})
    try:
        policy = ObserverPolicy(
            penetration_pct=float(_num(ob, "penetration_pct", "observers", 10.0)),
            mo_fraction=float(_num(ob, "mo_fraction", "observers", 0.5)),
            seed=int(_num(ob, "seed", "observers", seed, int)) if "seed" in ob else seed,
            min_per_interval=int(_num(ob, "min_per_interval", "observers", 1, int)),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "observers") from None

    sensors = _sensors(doc.get("sensors", {}))

    cl = doc.get("clustering", {})
    clustering = ClusteringOptions(
        k=int(_num(cl, "k", "clustering", 4, int)),
        k_max=int(_num(cl, "k_max", "clustering", 8, int)),
        features=tuple(cl.get("features", ("k", "v"))),
        source=cl.get("source", "ground_truth"),
        seed=int(_num(cl, "seed", "clustering", 0, int)),
        max_iter=int(_num(cl, "max_iter", "clustering", 300, int)),
        tol=float(_num(cl, "tol", "clustering", 1e-6)),
    )
    if not set(clustering.features) <= {"k", "v", "q"} or not clustering.features:
        raise ScenarioError("features must be a nonempty subset of k, v, q", "clustering.features")
    if clustering.source not in ("ground_truth", "mo_estimate", "po_estimate", "combined"):
        raise ScenarioError(f"unknown source {clustering.source!r}", "clustering.source")

    es = doc.get("estimation", {})
    gt_speed = es.get("ground_truth_speed", "flow")
    if gt_speed not in ("flow", "space"):
        raise ScenarioError("expected 'flow' or 'space'", "estimation.ground_truth_speed")

    return ScenarioConfig(
        network=network, demand=DemandSpec(tuple(initial), tuple(flows)), horizon=horizon, step=step,
        seed=seed, aggregation=agg, observers=policy, sensors=sensors, clustering=clustering,
        ground_truth_speed=gt_speed, lane_stays=bool(es.get("lane_stays", False)),
        output_dir=str(doc.get("output", {}).get("dir", "out")), document=doc,
    )


def _sensors(table: Mapping[str, Any]) -> SensorConfig:
    try:
        base = default_sensor_profile(table.get("profile", "long-range"))
    except ValueError as exc:
        raise ScenarioError(str(exc), "sensors.profile") from None
    ranges = dict(base.ranges)
    for rel, r in table.get("ranges", {}).items():
        where = f"sensors.ranges.{rel}"
        _check_keys(r, {"forward_m", "backward_m"}, where)
        ranges[rel] = Range(float(_num(r, "forward_m", where)), float(_num(r, "backward_m", where)))
    try:
        return SensorConfig(
            ranges,
            enabled=frozenset(table.get("enabled", base.enabled)),
            w_left=float(_num(table, "w_left_m", "sensors", base.w_left)),
            w_right=float(_num(table, "w_right_m", "sensors", base.w_right)),
            cross_edge=bool(table.get("cross_edge", False)),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "sensors") from None
