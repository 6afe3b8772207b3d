"""Pipeline stages. Each stage reads and writes only the documented files in ``out``."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable

from . import artifacts as art
from .clustering import elbow_curve, lane_features
from .estimation import TrafficState, estimate_link_states, ground_truth_states, scope_rollup
from .metrics import QuantitySummary, compare, compare_stays, error_histogram, mfd_series, summarize
from .microsim import ground_truth, simulate
from .observers import sample_observers
from .scenario import ScenarioConfig
from .trajectory import IngestReport, parse_trajectory, write_trajectory

log = logging.getLogger(__name__)

TRAJECTORY = "trajectory.csv"
GROUND_TRUTH = "ground_truth.csv"
ESTIMATES = "estimates.csv"
STAYS = "stays.csv"
CLUSTERS = "clusters.csv"
ELBOW = "elbow.csv"
ERRORS = "errors.csv"
SUMMARY = "error_summary.txt"
HISTOGRAM = "error_hist.csv"
MFD = "mfd.csv"
SWEEP = "sweep.csv"
MANIFEST = "manifest.json"

ESTIMATE_SOURCES = ("mo_estimate", "po_estimate", "combined")
STAGES = ("simulate", "ground-truth", "detect-estimate", "cluster", "compare", "mfd")


class DependencyError(RuntimeError):
    """A stage's input artifact is missing."""


def _require(out: Path, name: str, stage: str) -> Path:
    path = out / name
    if not path.exists():
        raise DependencyError(f"{path} not found; run the '{stage}' stage first")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out: Path, cfg: ScenarioConfig, stage: str, produced: Iterable[str]) -> None:
    path = out / MANIFEST
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["config_hash"] = cfg.config_hash
    manifest["seed"] = cfg.seed
    manifest["observer_seed"] = cfg.observers.seed
    stages = manifest.setdefault("stages", {})
    stages[stage] = {name: _sha256(out / name) for name in sorted(produced)}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _ground_truth_files(cfg: ScenarioConfig, out: Path, traj) -> None:
    gt = ground_truth(traj, cfg.aggregation, cfg.network)
    art.write_ground_truth(out / GROUND_TRUTH, gt, cfg.network)


def stage_simulate(cfg: ScenarioConfig, out: Path) -> None:
    """Run the simulator; writes the trajectory log and its ground truth."""
    out.mkdir(parents=True, exist_ok=True)
    traj = simulate(cfg.network, cfg.demand, cfg.horizon, cfg.step, cfg.seed)
    if traj.queued:
        log.warning("%d vehicles still queued at their origin at the horizon", traj.queued)
    with open(out / TRAJECTORY, "w", newline="", encoding="utf-8") as fh:
        write_trajectory(traj, fh, cfg.network)
    _ground_truth_files(cfg, out, traj)
    update_manifest(out, cfg, "simulate", [TRAJECTORY, GROUND_TRUTH])


def stage_ground_truth(cfg: ScenarioConfig, out: Path) -> None:
    """Recompute ground truth from an existing trajectory log."""
    _ground_truth_files(cfg, out, _load_trajectory(cfg, out))
    update_manifest(out, cfg, "ground-truth", [GROUND_TRUTH])


def stage_ingest(cfg: ScenarioConfig, out: Path, source: Path, delimiter: str = ",", strict: bool = True) -> IngestReport:
    out.mkdir(parents=True, exist_ok=True)
    report = IngestReport()
    with open(source, newline="", encoding="utf-8") as fh:
        traj = parse_trajectory(fh, cfg.network, delimiter=delimiter, strict=strict, report=report)
    with open(out / TRAJECTORY, "w", newline="", encoding="utf-8") as fh:
        write_trajectory(traj, fh, cfg.network)
    _ground_truth_files(cfg, out, traj)
    update_manifest(out, cfg, "ingest", [TRAJECTORY, GROUND_TRUTH])
    return report


def _load_trajectory(cfg: ScenarioConfig, out: Path):
    path = _require(out, TRAJECTORY, "simulate")
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_trajectory(fh, cfg.network)


def estimate_states(cfg: ScenarioConfig, traj, workers: int = 1):
    """(lane + network states for every estimate source, lane stays)."""
    assignments = sample_observers(traj, cfg.aggregation, cfg.observers)
    intervals = estimate_link_states(traj, cfg.network, assignments, cfg.sensors, cfg.aggregation, workers)
    lane_states = [s for iv in intervals for s in iv.states]
    stays = [st for iv in intervals for st in iv.stays]
    return lane_states + scope_rollup(lane_states, "network"), stays


def stage_estimate(cfg: ScenarioConfig, out: Path, workers: int = 1) -> None:
    traj = _load_trajectory(cfg, out)
    states, stays = estimate_states(cfg, traj, workers)
    art.write_states(out / ESTIMATES, states)
    produced = [ESTIMATES]
    if cfg.lane_stays:
        art.write_stays(out / STAYS, stays)
        produced.append(STAYS)
    update_manifest(out, cfg, "detect-estimate", produced)


def stage_cluster(cfg: ScenarioConfig, out: Path) -> None:
    opts = cfg.clustering
    if opts.source == "ground_truth":
        gt = art.read_ground_truth(_require(out, GROUND_TRUTH, "simulate"))
        lane_states = ground_truth_states(gt, cfg.ground_truth_speed)
    else:
        est = art.read_states(_require(out, ESTIMATES, "detect-estimate"))
        lane_states = [s for s in est if s.scope_kind == "lane" and s.source == opts.source]
    features = lane_features(lane_states)
    n = len(features)
    k = min(opts.k, n)
    if k < opts.k:
        log.warning("only %d lanes with observations; clustering with k=%d", n, k)
    points, models = elbow_curve(features, range(1, max(k, min(opts.k_max, n)) + 1), opts.seed,
                                 opts.features, opts.max_iter, opts.tol)
    art.write_clusters(out / CLUSTERS, models[k].assignment)
    art.write_elbow(out / ELBOW, points)
    update_manifest(out, cfg, "cluster", [CLUSTERS, ELBOW])


def _scoped(cfg: ScenarioConfig, out: Path) -> tuple[list[TrafficState], list[TrafficState]]:
    """Ground truth and estimates at lane, cluster (when clustered) and network scope."""
    gt = art.read_ground_truth(_require(out, GROUND_TRUTH, "simulate"))
    est = art.read_states(_require(out, ESTIMATES, "detect-estimate"))
    gt_lane = ground_truth_states(gt, cfg.ground_truth_speed)
    gt_all = gt_lane + scope_rollup(gt_lane, "network")
    est_all = list(est)
    if (out / CLUSTERS).exists():
        mapping = art.read_clusters(out / CLUSTERS)
        gt_all += scope_rollup([s for s in gt_lane if s.scope_id in mapping], "cluster", mapping)
        est_lane = [s for s in est if s.scope_kind == "lane" and s.scope_id in mapping]
        est_all += scope_rollup(est_lane, "cluster", mapping)
    return gt_all, est_all


def compare_all(gt_all, est_all, stays=()):
    """Records tagged by source, summaries keyed by (source, scope kind), histogram rows."""
    tagged, summaries, hist = [], {}, []
    for source in ESTIMATE_SOURCES:
        for scope in ("lane", "cluster", "network"):
            est = [s for s in est_all if s.source == source and s.scope_kind == scope]
            gt = [s for s in gt_all if s.scope_kind == scope]
            if not est:
                continue
            records, summary = compare(gt, est)
            tagged += [(source, r) for r in records]
            summaries[(source, scope)] = summary
            hist += [(source, scope, *row) for row in error_histogram(records)]
    stays = list(stays)
    if stays:
        gt_lane = [s for s in gt_all if s.scope_kind == "lane"]
        for kind, source in (("MO", "mo_estimate"), ("PO", "po_estimate")):
            records = compare_stays(gt_lane, [st for st in stays if st.kind == kind])
            if records:
                tagged += [(source, r) for r in records]
                summaries[(source, "stay")] = summarize(records)
                hist += [(source, "stay", *row) for row in error_histogram(records)]
    return tagged, summaries, hist


def stage_compare(cfg: ScenarioConfig, out: Path) -> None:
    gt_all, est_all = _scoped(cfg, out)
    stays = art.read_stays(out / STAYS) if cfg.lane_stays and (out / STAYS).exists() else []
    tagged, summaries, hist = compare_all(gt_all, est_all, stays)
    art.write_errors(out / ERRORS, tagged)
    art.write_summary(out / SUMMARY, summaries)
    art.write_histogram(out / HISTOGRAM, hist)
    update_manifest(out, cfg, "compare", [ERRORS, SUMMARY, HISTOGRAM])


def stage_mfd(cfg: ScenarioConfig, out: Path) -> None:
    gt_all, est_all = _scoped(cfg, out)
    points = []
    for scope in ("cluster", "network"):
        points += mfd_series(gt_all, scope)
        points += mfd_series(est_all, scope)
    points.sort(key=lambda p: (p.scope_kind, p.scope_id, p.source, p.ts))
    art.write_mfd(out / MFD, points)
    update_manifest(out, cfg, "mfd", [MFD])


def stage_sweep(cfg: ScenarioConfig, out: Path, rates: Iterable[float], workers: int = 1) -> list[tuple]:
    """Estimate and compare for each penetration rate; one summary row per (rate, source, scope, quantity)."""
    traj = _load_trajectory(cfg, out)
    gt = art.read_ground_truth(_require(out, GROUND_TRUTH, "simulate"))
    gt_lane = ground_truth_states(gt, cfg.ground_truth_speed)
    gt_all = gt_lane + scope_rollup(gt_lane, "network")
    rows = []
    for rate in rates:
        policy = replace(cfg.observers, penetration_pct=float(rate))
        states, _ = estimate_states(replace(cfg, observers=policy), traj, workers)
        _, summaries, _ = compare_all(gt_all, states)
        for (source, scope), per in sorted(summaries.items()):
            for q, s in per.items():
                rows.append((float(rate), source, scope, q, s.n, s.mean, s.median, s.p90, s.mean_signed, s.over_fraction))
    art.write_rows(out / SWEEP, ("penetration_pct", "source", "scope_kind", "quantity", "n", "mean",
                                 "median", "p90", "mean_signed", "over_fraction"), rows)
    update_manifest(out, cfg, "sweep", [SWEEP])
    return rows


def run_pipeline(cfg: ScenarioConfig, out: Path, stages: Iterable[str] = STAGES, workers: int = 1) -> None:
    """Run the requested stages in canonical order (``simulate`` also writes ground truth)."""
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    out = Path(out)
    if "simulate" in stages:
        stage_simulate(cfg, out)
    elif "ground-truth" in stages:
        stage_ground_truth(cfg, out)
    if "detect-estimate" in stages:
        stage_estimate(cfg, out, workers)
    if "cluster" in stages:
        stage_cluster(cfg, out)
    if "compare" in stages:
        stage_compare(cfg, out)
    if "mfd" in stages:
        stage_mfd(cfg, out)


__all__ = [
    "DependencyError", "QuantitySummary", "STAGES", "run_pipeline", "stage_simulate", "stage_ground_truth", "stage_ingest",
    "stage_estimate", "stage_cluster", "stage_compare", "stage_mfd", "stage_sweep",
]
