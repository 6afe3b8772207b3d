"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 missing prerequisite artifact,
3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .artifacts import ArtifactError
from .detection import DetectionError
from .network import ScenarioError
from .scenario import load_scenario
from .trajectory import TrajectoryFormatError

EXIT_OK, EXIT_VALIDATION, EXIT_DEPENDENCY, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("avaas")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, type=Path, help="scenario TOML file")
    common.add_argument("--seed", type=int, help="override the scenario seed (demand and observers)")
    common.add_argument("--out", type=Path, help="output directory (default: [output].dir)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for estimation")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scalar scenario value, e.g. observers.penetration_pct=20")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="avaas", description="Observer-based traffic state estimation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate; write trajectory and ground truth")
    ing = sub.add_parser("ingest", parents=[common], help="import an external trajectory log")
    ing.add_argument("input", type=Path)
    ing.add_argument("--delimiter", default=",")
    ing.add_argument("--lenient", action="store_true", help="drop bad rows instead of failing")
    sub.add_parser("estimate", parents=[common], help="sample observers, detect and estimate")
    sub.add_parser("cluster", parents=[common], help="k-means lane clustering with elbow curve")
    sub.add_parser("compare", parents=[common], help="relative errors of estimates vs ground truth")
    sub.add_parser("mfd", parents=[common], help="cluster- and network-level MFD series")
    sw = sub.add_parser("sweep", parents=[common], help="estimate+compare over penetration rates")
    sw.add_argument("--rates", required=True, help="comma-separated penetration rates in percent")
    run = sub.add_parser("run", parents=[common], help="run pipeline stages in order")
    run.add_argument("--stages", default=",".join(pipeline.STAGES),
                     help=f"comma-separated subset of {','.join(pipeline.STAGES)}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.scenario.read_text(encoding="utf-8"), args.overrides, args.seed)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        cmd = args.command
        if cmd == "simulate":
            pipeline.stage_simulate(cfg, out)
        elif cmd == "ingest":
            report = pipeline.stage_ingest(cfg, out, args.input, args.delimiter, strict=not args.lenient)
            if report.dropped:
                print(f"dropped {report.dropped} of {report.rows} rows", file=sys.stderr)
        elif cmd == "estimate":
            pipeline.stage_estimate(cfg, out, args.workers)
        elif cmd == "cluster":
            pipeline.stage_cluster(cfg, out)
        elif cmd == "compare":
            pipeline.stage_compare(cfg, out)
        elif cmd == "mfd":
            pipeline.stage_mfd(cfg, out)
        elif cmd == "sweep":
            rates = [float(r) for r in args.rates.split(",") if r.strip()]
            pipeline.stage_sweep(cfg, out, rates, args.workers)
        elif cmd == "run":
            stages = [s.strip() for s in args.stages.split(",") if s.strip()]
            pipeline.run_pipeline(cfg, out, stages, args.workers)
    except pipeline.DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (ScenarioError, TrajectoryFormatError, ArtifactError, DetectionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
