"""Per-interval sampling of moving observers (MO) and parked observers (PO).

A PO is a virtual stationary sensor anchored where a sampled vehicle first
appears in the interval. The anchoring vehicle keeps driving in the ground
truth and can be detected by its own PO.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

import numpy as np

from .microsim import AggregationConfig, TrajectoryLog, interval_index, interval_start


def round_half_up(x) -> int:
    """Round to nearest integer, ties away from zero for x >= 0 (0.5 -> 1)."""
    return math.floor(Fraction(x) + Fraction(1, 2))


@dataclass(frozen=True)
class ObserverPolicy:
    penetration_pct: float = 10.0
    mo_fraction: float = 0.5
    seed: int = 0
    min_per_interval: int = 1

    def __post_init__(self):
        if not 0 < self.penetration_pct <= 100:
            raise ValueError("penetration_pct must be in (0, 100]")
        if not 0 <= self.mo_fraction <= 1:
            raise ValueError("mo_fraction must be in [0, 1]")
        if self.min_per_interval < 0:
            raise ValueError("min_per_interval must be >= 0")


class POAnchor(NamedTuple):
    vehicle_id: int
    lane: str
    position: float


@dataclass(frozen=True)
class ObserverAssignment:
    ts: float
    interval: int
    n_total: int
    mo_ids: tuple[int, ...]
    po_anchors: tuple[POAnchor, ...]

    @property
    def n_mo(self) -> int:
        return len(self.mo_ids)

    @property
    def n_po(self) -> int:
        return len(self.po_anchors)


def observer_counts(n_total: int, policy: ObserverPolicy) -> tuple[int, int]:
    """(n_mo, n_po) for an interval with ``n_total`` distinct vehicles.

    When both shares are positive and there are at least two observers,
    neither kind is left empty.
    """
    if n_total <= 0:
        return 0, 0
    n_obs = max(policy.min_per_interval, round_half_up(Fraction(n_total) * Fraction(policy.penetration_pct) / 100))
    n_obs = min(n_obs, n_total)
    n_mo = round_half_up(Fraction(n_obs) * Fraction(policy.mo_fraction))
    n_po = n_obs - n_mo
    if n_obs >= 2:
        if policy.mo_fraction > 0 and n_mo == 0:
            n_mo, n_po = 1, n_obs - 1
        elif policy.mo_fraction < 1 and n_po == 0:
            n_mo, n_po = n_obs - 1, 1
    return n_mo, n_po


def draw_observers(
    vehicle_ids: Iterable[int], policy: ObserverPolicy, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Uniform draw without replacement; returns (MO ids, PO vehicle ids)."""
    ids = sorted(set(vehicle_ids))
    n_mo, n_po = observer_counts(len(ids), policy)
    if n_mo + n_po == 0:
        return [], []
    picked = rng.choice(len(ids), size=n_mo + n_po, replace=False)
    chosen = [ids[i] for i in picked]
    return sorted(chosen[:n_mo]), sorted(chosen[n_mo:])


def sample_observers(
    log: TrajectoryLog, agg: AggregationConfig, policy: ObserverPolicy
) -> list[ObserverAssignment]:
    """One assignment per complete interval, each drawn from its own sub-seed ``(seed, interval)``."""
    out = []
    for n, frames in interval_index(log, agg).items():
        first_seen: dict[int, POAnchor] = {}
        for i in frames:
            for s in log.frames[i]:
                if s.vehicle_id not in first_seen:
                    first_seen[s.vehicle_id] = POAnchor(s.vehicle_id, s.lane, s.position)
        rng = np.random.default_rng([policy.seed, n])
        mo, po = draw_observers(first_seen, policy, rng)
        out.append(ObserverAssignment(
            ts=interval_start(agg, n),
            interval=n,
            n_total=len(first_seen),
            mo_ids=tuple(mo),
            po_anchors=tuple(first_seen[v] for v in po),
        ))
    return out
