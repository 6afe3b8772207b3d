"""Estimation quality: relative errors, summaries and MFD series."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .estimation import LaneStay, TrafficState

QUANTITIES = ("k", "v", "q")
HIST_BIN_WIDTH = 0.05


def relative_error(true_value: float, estimated_value: float) -> tuple[float, bool]:
    """``|true - est| / |true|``; for ``true == 0`` returns ``(|est|, True)`` (absolute fallback)."""
    if true_value == 0:
        return abs(estimated_value), True
    return abs(true_value - estimated_value) / abs(true_value), False


@dataclass(frozen=True)
class ErrorRecord:
    scope_kind: str
    scope_id: str
    ts: float
    quantity: str
    true_value: float | None
    estimated_value: float | None
    relative_error: float  # nan when either side is missing
    zero_flag: bool = False

    @property
    def usable(self) -> bool:
        return not self.zero_flag and not math.isnan(self.relative_error)


@dataclass(frozen=True)
class QuantitySummary:
    quantity: str
    n: int
    mean: float
    median: float
    p90: float
    mean_signed: float
    over_fraction: float


def _record(kind, sid, ts, quantity, t, e) -> ErrorRecord:
    if t is None or e is None:
        return ErrorRecord(kind, sid, ts, quantity, t, e, math.nan)
    err, flag = relative_error(t, e)
    return ErrorRecord(kind, sid, ts, quantity, t, e, err, flag)


def compare(
    gt: Iterable[TrafficState], est: Iterable[TrafficState]
) -> tuple[list[ErrorRecord], dict[str, QuantitySummary]]:
    """Inner join on (scope kind, scope id, ts); three records per joined pair.

    ``est`` must hold a single source. A quantity missing on either side
    yields a record with NaN error that summaries skip.
    """
    truth = {s.key: s for s in gt}
    records = []
    for e in sorted(est, key=lambda s: (s.ts, s.scope_kind, s.scope_id)):
        t = truth.get(e.key)
        if t is None:
            continue
        for quantity in QUANTITIES:
            records.append(_record(e.scope_kind, e.scope_id, e.ts, quantity,
                                   getattr(t, quantity), getattr(e, quantity)))
    return records, summarize(records)


def compare_stays(gt: Iterable[TrafficState], stays: Iterable[LaneStay]) -> list[ErrorRecord]:
    """Records per observer lane-stay, against the lane's interval ground truth."""
    truth = {s.key: s for s in gt}
    records = []
    for st in stays:
        t = truth.get(("lane", st.lane, st.ts))
        if t is None:
            continue
        sid = f"{st.observer_id}@{st.lane}@{st.t_start!r}"
        for quantity in QUANTITIES:
            records.append(_record("stay", sid, st.ts, quantity, getattr(t, quantity), getattr(st, quantity)))
    return records


def summarize(records: Iterable[ErrorRecord]) -> dict[str, QuantitySummary]:
    """Per-quantity error statistics over usable records.

    ``over_fraction`` counts exact ties as half an overestimate, so a perfect
    estimate scores 0.5.
    """
    out = {}
    records = list(records)
    for quantity in QUANTITIES:
        rs = [r for r in records if r.quantity == quantity and r.usable]
        if not rs:
            out[quantity] = QuantitySummary(quantity, 0, math.nan, math.nan, math.nan, math.nan, math.nan)
            continue
        errs = np.array([r.relative_error for r in rs])
        signed = np.array([(r.estimated_value - r.true_value) / abs(r.true_value) for r in rs])
        over = float(np.sum(signed > 0) + 0.5 * np.sum(signed == 0)) / len(rs)
        out[quantity] = QuantitySummary(
            quantity, len(rs), float(errs.mean()), float(np.median(errs)),
            float(np.percentile(errs, 90)), float(signed.mean()), over,
        )
    return out


def error_histogram(records: Iterable[ErrorRecord], width: float = HIST_BIN_WIDTH) -> list[tuple[str, float, float, int]]:
    """Fixed-width bins of relative error per quantity: ``(quantity, lo, hi, count)``."""
    rows = []
    records = list(records)
    for quantity in QUANTITIES:
        errs = [r.relative_error for r in records if r.quantity == quantity and r.usable]
        if not errs:
            continue
        counts: dict[int, int] = {}
        for e in errs:
            b = int(math.floor(e / width + 1e-12))
            counts[b] = counts.get(b, 0) + 1
        for b in range(max(counts) + 1):
            rows.append((quantity, round(b * width, 10), round((b + 1) * width, 10), counts.get(b, 0)))
    return rows


@dataclass(frozen=True)
class MFDPoint:
    scope_kind: str
    scope_id: str
    ts: float
    k_avg: float
    q_avg: float | None
    v_avg: float | None
    source: str


def mfd_series(
    states: Iterable[TrafficState],
    scope_kind: str | None = None,
    scope_ids: Sequence[str] | None = None,
) -> list[MFDPoint]:
    """One point per (scope, ts, source), ordered by scope, source then ts."""
    pts = {}
    for s in states:
        if scope_kind is not None and s.scope_kind != scope_kind:
            continue
        if scope_ids is not None and s.scope_id not in scope_ids:
            continue
        key = (s.scope_kind, s.scope_id, s.source, s.ts)
        if key in pts:
            raise ValueError(f"duplicate state for {key}")
        pts[key] = MFDPoint(s.scope_kind, s.scope_id, s.ts, s.k, s.q, s.v, s.source)
    return [pts[k] for k in sorted(pts)]
