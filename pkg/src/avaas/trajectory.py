"""Delimited-text trajectory logs: writer and validating reader.

Columns: ``timestep_s, vehicle_id, edge_id, lane_index, position_m, speed_mps``.
Floats are written with ``repr`` so a written log parses back bit-identical.
A timestep without vehicles is written as a marker row carrying only the
timestep (``12.0,,,,,``) so empty frames survive a round trip.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import TextIO

from .microsim import TrajectoryLog, VehicleState
from .network import RoadNetwork, lane_id

log = logging.getLogger(__name__)

COLUMNS = ("timestep_s", "vehicle_id", "edge_id", "lane_index", "position_m", "speed_mps")


class TrajectoryFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass
class IngestReport:
    rows: int = 0
    dropped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)


def write_trajectory(traj: TrajectoryLog, stream: TextIO, network: RoadNetwork, delimiter: str = ",") -> None:
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(COLUMNS)
    for t, frame in traj.items():
        if not frame:
            w.writerow((repr(t), "", "", "", "", ""))
        for s in frame:
            lane = network.lane(s.lane)
            w.writerow((repr(t), s.vehicle_id, lane.edge, lane.index, repr(s.position), repr(s.speed)))


def dumps_trajectory(traj: TrajectoryLog, network: RoadNetwork, delimiter: str = ",") -> str:
    buf = io.StringIO()
    write_trajectory(traj, buf, network, delimiter)
    return buf.getvalue()


def parse_trajectory(
    stream: TextIO | str,
    network: RoadNetwork,
    delimiter: str = ",",
    strict: bool = True,
    report: IngestReport | None = None,
    vehicle_length: float = 5.0,
) -> TrajectoryLog:
    """Read a delimited trajectory log and validate it against ``network``.

    In strict mode the first bad row raises :class:`TrajectoryFormatError`
    naming its 1-based line number (the header is line 1). In lenient mode
    bad rows are dropped and counted in ``report``. Grid problems
    (non-constant step) always raise.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    report = report if report is not None else IngestReport()
    reader = csv.reader(stream, delimiter=delimiter)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != COLUMNS:
        raise TrajectoryFormatError(f"expected header {','.join(COLUMNS)}", 1)

    def reject(row_no: int, reason: str):
        if strict:
            raise TrajectoryFormatError(reason, row_no)
        report.dropped += 1
        key = reason.split(":")[0]
        report.reasons[key] = report.reasons.get(key, 0) + 1

    by_time: dict[float, dict[int, VehicleState]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        report.rows += 1
        if len(row) != len(COLUMNS):
            reject(row_no, f"malformed row: expected {len(COLUMNS)} fields, got {len(row)}")
            continue
        if row[0].strip() and not any(c.strip() for c in row[1:]):
            try:
                by_time.setdefault(float(row[0]), {})
            except ValueError as exc:
                reject(row_no, f"malformed row: {exc}")
            continue
        try:
            t = float(row[0])
            vid = int(row[1])
            edge, idx = row[2], int(row[3])
            pos, speed = float(row[4]), float(row[5])
        except ValueError as exc:
            reject(row_no, f"malformed row: {exc}")
            continue
        if not all(math.isfinite(x) for x in (t, pos, speed)):
            reject(row_no, "malformed row: non-finite value")
            continue
        lid = lane_id(edge, idx)
        if not network.has_lane(lid):
            reject(row_no, f"unknown lane: edge {edge!r} lane {idx}")
            continue
        length = network.lane(lid).length
        if not 0 <= pos <= length:
            reject(row_no, f"position out of range: {pos} not in [0, {length}]")
            continue
        if speed < 0:
            reject(row_no, f"negative speed: {speed}")
            continue
        frame = by_time.setdefault(t, {})
        if vid in frame:
            reject(row_no, f"duplicate (timestep, vehicle): ({t}, {vid})")
            continue
        frame[vid] = VehicleState(vid, lid, pos, speed, vehicle_length)

    if report.dropped:
        log.warning("dropped %d of %d rows: %s", report.dropped, report.rows, report.reasons)
    if not by_time:
        raise TrajectoryFormatError("log has no rows")

    times = sorted(by_time)
    t0 = times[0]
    step = min((b - a for a, b in zip(times, times[1:])), default=1.0)
    slots: dict[int, float] = {}
    for t in times:
        n = round((t - t0) / step)
        if not math.isclose(t, t0 + n * step, rel_tol=0, abs_tol=1e-6 * max(1.0, abs(step))):
            raise TrajectoryFormatError(f"non-constant step: timestep {t} is off the {step} s grid")
        slots[n] = t
    # timesteps missing from the file are empty frames
    frames = tuple(
        tuple(by_time[slots[n]][v] for v in sorted(by_time[slots[n]])) if n in slots else ()
        for n in range(max(slots) + 1)
    )
    return TrajectoryLog(step_size=step, t0=t0, frames=frames)
