"""Delimited-text artifact formats shared by the pipeline stages.

Floats are written with ``repr`` (shortest round-trip form); absent values
are empty fields. All writers emit rows in a fixed order so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

from .clustering import ElbowPoint
from .estimation import LaneStay, TrafficState
from .metrics import ErrorRecord, MFDPoint, QuantitySummary
from .microsim import GroundTruthState
from .network import RoadNetwork

GROUND_TRUTH_COLUMNS = ("lane_id", "edge_id", "lane_index", "ts_s", "k_vpk", "q_vph", "v_kmh",
                        "v_space_kmh", "vehicle_steps", "entries")
ESTIMATE_COLUMNS = ("scope_kind", "scope_id", "ts_s", "k_vpk", "v_kmh", "q_vph", "source", "sample_count")
CLUSTER_COLUMNS = ("lane_id", "cluster_id")
ELBOW_COLUMNS = ("k", "wcss", "is_knee")
ERROR_COLUMNS = ("scope_kind", "scope_id", "ts_s", "quantity", "true", "est", "rel_err", "zero_flag", "source")
HIST_COLUMNS = ("source", "scope_kind", "quantity", "bin_lo", "bin_hi", "count")
MFD_COLUMNS = ("scope_kind", "scope_id", "ts_s", "k_vpk", "q_vph", "v_kmh", "source")
STAY_COLUMNS = ("observer_id", "kind", "lane_id", "ts_s", "t_start_s", "t_end_s", "k_vpk", "v_kmh", "q_vph", "steps")


class ArtifactError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _opt(s: str) -> float | None:
    return float(s) if s != "" else None


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_rows(path: Path, columns: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise ArtifactError(f"{path}: expected columns {','.join(columns)}")
        return list(reader)


def write_ground_truth(path: Path, gt: Iterable[GroundTruthState], network: RoadNetwork) -> None:
    rows = []
    for g in gt:
        lane = network.lane(g.lane)
        rows.append((g.lane, lane.edge, lane.index, g.ts, g.k, g.q, g.v, g.v_space, g.vehicle_steps, g.entries))
    write_rows(path, GROUND_TRUTH_COLUMNS, rows)


def read_ground_truth(path: Path) -> list[GroundTruthState]:
    return [
        GroundTruthState(r["lane_id"], float(r["ts_s"]), float(r["k_vpk"]), float(r["q_vph"]), _opt(r["v_kmh"]),
                         _opt(r["v_space_kmh"]), int(r["vehicle_steps"]), int(r["entries"]))
        for r in read_rows(path, GROUND_TRUTH_COLUMNS)
    ]


def write_states(path: Path, states: Iterable[TrafficState]) -> None:
    write_rows(path, ESTIMATE_COLUMNS, (
        (s.scope_kind, s.scope_id, s.ts, s.k, s.v, s.q, s.source, s.sample_count) for s in states
    ))


def read_states(path: Path) -> list[TrafficState]:
    return [
        TrafficState(r["scope_kind"], r["scope_id"], float(r["ts_s"]), float(r["k_vpk"]), _opt(r["v_kmh"]),
                     _opt(r["q_vph"]), r["source"], int(r["sample_count"]))
        for r in read_rows(path, ESTIMATE_COLUMNS)
    ]


def write_clusters(path: Path, assignment: dict[str, int]) -> None:
    write_rows(path, CLUSTER_COLUMNS, sorted(assignment.items()))


def read_clusters(path: Path) -> dict[str, str]:
    return {r["lane_id"]: r["cluster_id"] for r in read_rows(path, CLUSTER_COLUMNS)}


def write_elbow(path: Path, points: Iterable[ElbowPoint]) -> None:
    write_rows(path, ELBOW_COLUMNS, ((p.k, p.wcss, p.is_knee) for p in points))


def write_errors(path: Path, records: Iterable[tuple[str, ErrorRecord]]) -> None:
    write_rows(path, ERROR_COLUMNS, (
        (r.scope_kind, r.scope_id, r.ts, r.quantity, r.true_value, r.estimated_value, r.relative_error,
         r.zero_flag, source)
        for source, r in records
    ))


def write_summary(path: Path, summaries: dict[tuple[str, str], dict[str, QuantitySummary]]) -> None:
    """Keyed text block, one ``source.scope.quantity.stat = value`` line per entry."""
    lines = []
    for (source, scope), per in sorted(summaries.items()):
        for quantity, s in per.items():
            prefix = f"{source}.{scope}.{quantity}"
            for stat in ("n", "mean", "median", "p90", "mean_signed", "over_fraction"):
                lines.append(f"{prefix}.{stat} = {fmt(getattr(s, stat)) or 'nan'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_summary(path: Path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            out[key.strip()] = float(value)
    return out


def write_histogram(path: Path, rows: Iterable[tuple]) -> None:
    write_rows(path, HIST_COLUMNS, rows)


def write_mfd(path: Path, points: Iterable[MFDPoint]) -> None:
    write_rows(path, MFD_COLUMNS, (
        (p.scope_kind, p.scope_id, p.ts, p.k_avg, p.q_avg, p.v_avg, p.source) for p in points
    ))


def write_stays(path: Path, stays: Iterable[LaneStay]) -> None:
    write_rows(path, STAY_COLUMNS, (
        (s.observer_id, s.kind, s.lane, s.ts, s.t_start, s.t_end, s.k, s.v, s.q, s.steps) for s in stays
    ))


def read_stays(path: Path) -> list[LaneStay]:
    return [
        LaneStay(r["observer_id"], r["kind"], r["lane_id"], float(r["ts_s"]), float(r["t_start_s"]),
                 float(r["t_end_s"]), float(r["k_vpk"]), _opt(r["v_kmh"]), _opt(r["q_vph"]), int(r["steps"]))
        for r in read_rows(path, STAY_COLUMNS)
    ]
