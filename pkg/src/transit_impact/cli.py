"""Command line entry point.

Exit status: 0 success, 1 input error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .gtfs import (DEFAULT_PLAN, FeedError, ServicePlan, build_synthetic_schedule, load_line_config, merge_feeds,
                   parse_feed, write_feed)
from .pipeline import InputError, ScenarioConfig, StageError, read_zones, run_scenario, skim_network
from .skim import write_skim_csv

log = logging.getLogger("transit_impact")


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", type=Path, help="scenario YAML")
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--sampling-step-min", type=float)
    p.add_argument("--max-transfers", type=int)
    p.add_argument("--ceiling-min", type=float)
    p.add_argument("--grams-per-mile", type=float)
    p.add_argument("--weekday", type=int)
    p.add_argument("--no-cache", dest="cache", action="store_false", default=None)


def _load(args) -> ScenarioConfig:
    return ScenarioConfig.load(args.config, output_dir=args.output_dir, workers=args.workers,
                               sampling_step_min=args.sampling_step_min, max_transfers=args.max_transfers,
                               ceiling_min=args.ceiling_min, grams_per_mile=args.grams_per_mile,
                               weekday=args.weekday, cache=args.cache)


def cmd_synth(args) -> int:
    spec, plan = load_line_config(args.line)
    line = build_synthetic_schedule(spec, plan)
    write_feed(line, args.out / "line")
    trips = {d: sum(t.direction == d for t in line.trips) for d in (0, 1)}
    log.info("synthetic line %s: %d stops, %d + %d trips", spec.route_id, len(line.stops), trips[0], trips[1])
    if args.base is not None:
        write_feed(merge_feeds(parse_feed(args.base), line), args.out / "merged")
    print(json.dumps({"stops": len(line.stops), "trips_per_direction": trips}, sort_keys=True))
    return 0


def cmd_skim(args) -> int:
    cfg = _load(args)
    feed = parse_feed(args.gtfs or cfg.base_gtfs)
    plan = load_line_config(cfg.line)[1] if cfg.line else ServicePlan.from_clock(DEFAULT_PLAN)
    skims = skim_network(feed, read_zones(cfg.zones), plan, cfg)
    out = args.out or Path(cfg.output_dir) / "skims.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_skim_csv(skims, out)
    print(out)
    return 0


def cmd_scenario(args) -> int:
    result = run_scenario(_load(args))
    if args.command == "equity":
        print(json.dumps(result.equity.to_dict() if result.equity else {}, indent=2, sort_keys=True))
    else:
        print(json.dumps(result.aggregates["all"], indent=2, sort_keys=True))
    return 0


def cmd_demo(args) -> int:
    from .toy import write_toy_city
    print(write_toy_city(args.directory, seed=args.seed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transit-impact", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gtfs", help="build the proposed line's GTFS (optionally merged with a base feed)")
    p.add_argument("line", type=Path)
    p.add_argument("--base", type=Path)
    p.add_argument("--out", type=Path, default=Path("gtfs_out"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("skim", help="per-period skims of one network")
    _scenario_args(p)
    p.add_argument("--gtfs", type=Path, help="feed to skim (default: the base feed)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_skim)

    for name, text in (("run", "full pipeline"), ("evaluate", "full pipeline, print ridership summary"),
                       ("equity", "full pipeline, print equity report"), ("report", "full pipeline, write reports")):
        p = sub.add_parser(name, help=text)
        _scenario_args(p)
        p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("demo", help="write the toy-city inputs")
    p.add_argument("directory", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FeedError, FileNotFoundError) as exc:
        log.error("input error: %s", exc)
        return 1
    except StageError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
