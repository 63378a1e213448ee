"""End-to-end scenario: new-line timetable -> skims -> demand -> welfare -> equity -> reports."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from . import __version__
from .demand import (AUTO, MODES, TRANSIT, ChoiceParams, GroupOutcome, PARAM_FIELDS, Segment, TripGroup,
                     aggregate_params, attribute_ridership, ghg_grams, group_daily_delta, mode_shift_summary,
                     with_baseline_times)
from .gtfs import (DEFAULT_PLAN, Feed, ServicePlan, build_synthetic_schedule, load_line_config, merge_feeds,
                   parse_feed, parse_time, write_feed)
from .skim import (MAX_TRANSFERS, NEW_CONNECTION_CEILING_MIN, SAMPLE_STEP_MIN, BOTH, NEW, DeltaMatrix,
                   SkimMatrix, Timetable, Zone, compute_skim, delta_skim, skim_from_bytes, skim_to_bytes,
                   worker_count, write_delta_csv, write_skim_csv, zone_links)
from .welfare import (THRESHOLD_FRACTIONS, EquityReport, WelfareRecord, delta_cs, equity_report, expected_cs,
                      transit_utility)

log = logging.getLogger(__name__)

SHARE_COLUMNS = tuple(f"share_{m}" for m in MODES)
GROUP_BASE_COLUMNS = ("origin_id", "destination_id", "segment", "trips", *SHARE_COLUMNS, "avg_auto_miles",
                      "fare_usd", "auto_cost_usd", "t_at", "t_et", "t_ivt", "n_t")
PARAM_COLUMNS = ("origin_id", "destination_id", "segment", *PARAM_FIELDS)
SCOPES = ("all", "low_income", "corridor", "non_corridor")


class InputError(ValueError):
    """Bad or missing input; the CLI exits with status 1."""


class StageError(RuntimeError):
    """A pipeline stage failed; the CLI exits with status 2."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


# -- configuration ------------------------------------------------------------

@dataclass
class ScenarioConfig:
    base_gtfs: Path
    line: Path | None
    zones: Path
    params: Path
    groups: Path
    output_dir: Path
    param_crosswalk: Path | None = None
    weekday: int = 0
    walk_speed_mps: float = 1.34
    detour_factor: float = 1.3
    max_access_m: float = 1200.0
    sampling_step_min: float = SAMPLE_STEP_MIN
    max_transfers: int = MAX_TRANSFERS
    ceiling_min: float = NEW_CONNECTION_CEILING_MIN
    grams_per_mile: float = 400.0
    threshold_fractions: tuple[float, ...] = THRESHOLD_FRACTIONS
    default_fare_usd: float = 2.90
    seed: int = 0
    workers: int = 1
    cache: bool = True

    def __post_init__(self):
        for name in ("walk_speed_mps", "detour_factor", "max_access_m", "sampling_step_min", "ceiling_min",
                     "grams_per_mile"):
            if not getattr(self, name) > 0:
                raise InputError(f"config: {name} must be positive")
        if self.max_transfers < 0 or self.workers < 1:
            raise InputError("config: max_transfers must be >= 0 and workers >= 1")
        if not all(0 < f for f in self.threshold_fractions):
            raise InputError("config: threshold fractions must be positive")
        for name in ("base_gtfs", "line", "zones", "params", "groups", "param_crosswalk"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise InputError(f"config: {name} path does not exist: {path}")

    @classmethod
    def load(cls, path: str | Path, **overrides: Any) -> "ScenarioConfig":
        """Read a YAML scenario file; relative paths resolve against its directory.

        Keys match the dataclass fields; ``walk`` may hold ``speed_mps``,
        ``detour`` and ``max_radius_m``. ``line: null`` runs the null
        scenario (alternative network == base network).
        """
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        walk = doc.pop("walk", {}) or {}
        doc.setdefault("walk_speed_mps", walk.get("speed_mps", 1.34))
        doc.setdefault("detour_factor", walk.get("detour", 1.3))
        doc.setdefault("max_access_m", walk.get("max_radius_m", 1200.0))
        doc.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"config: unknown key(s) {sorted(unknown)}")
        for key in ("base_gtfs", "line", "zones", "params", "groups", "output_dir", "param_crosswalk"):
            if key in doc and doc[key] is not None:
                doc[key] = (path.parent / str(doc[key])).resolve() if not Path(str(doc[key])).is_absolute() \
                    else Path(str(doc[key]))
        if "threshold_fractions" in doc:
            doc["threshold_fractions"] = tuple(float(x) for x in doc["threshold_fractions"])
        doc.setdefault("line", None)
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InputError(f"config: {exc}") from exc


# -- inputs -------------------------------------------------------------------

def _float(raw: str, default: float = float("nan")) -> float:
    return float(raw) if raw not in ("", None) else default


def read_zones(path: str | Path) -> list[Zone]:
    zones = []
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                zones.append(Zone(row["zone_id"].strip(), float(row["lat"]), float(row["lon"]),
                                  row.get("in_corridor", "0").strip() in ("1", "true", "True")))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{reader.line_num}: bad zone row ({exc})") from exc
    if len({z.zone_id for z in zones}) != len(zones):
        raise InputError(f"{path}: duplicate zone ids")
    return zones


def read_params(path: str | Path, crosswalk: dict[str, str] | None = None
                ) -> dict[tuple[str, str, str], ChoiceParams]:
    """Parameter sets keyed by ``(origin, destination, segment)``.

    With a block-group -> zone ``crosswalk`` the rows are averaged per zone
    OD and segment, weighted by the optional ``trips`` column.
    """
    buckets: dict[tuple[str, str, str], list[tuple[ChoiceParams, float]]] = {}
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PARAM_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing column(s) {missing}")
        for row in reader:
            try:
                o, d = row["origin_id"].strip(), row["destination_id"].strip()
                if crosswalk is not None:
                    o, d = crosswalk[o], crosswalk[d]
                key = (o, d, Segment.parse(row["segment"]).value)
                params = ChoiceParams(**{f: float(row[f]) for f in PARAM_FIELDS})
                weight = _float(row.get("trips", ""), 1.0)
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{reader.line_num}: bad parameter row ({exc})") from exc
            buckets.setdefault(key, []).append((params, weight))
    out = {}
    for key, items in buckets.items():
        if crosswalk is None and len(items) > 1:
            raise InputError(f"{path}: duplicate parameter rows for {key}")
        out[key] = items[0][0] if len(items) == 1 else aggregate_params(items)
    return out


def read_crosswalk(path: str | Path) -> dict[str, str]:
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        return {r["block_group_id"].strip(): r["zone_id"].strip() for r in csv.DictReader(fh)}


def ingest_groups(path: str | Path, plan: ServicePlan, default_fare: float = 2.90) -> list[TripGroup]:
    """Trip groups from a groups CSV, or tallied from a trip-level agenda CSV.

    The agenda layout is one trip per row with ``origin_id, destination_id,
    segment, mode, departure_time`` and optional ``auto_miles, fare_usd,
    auto_cost_usd``. Shares are mode counts and period weights are
    departure counts per service interval.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    if not rows:
        log.warning("%s: no trip groups", path)
        return []
    try:
        if "mode" in header:
            groups = _tally_agenda(rows, plan, default_fare)
        else:
            groups = [_group_from_row(r, plan) for r in rows]
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    keys = [g.key for g in groups]
    if len(set(keys)) != len(keys):
        raise InputError(f"{path}: duplicate trip group keys")
    return sorted(groups, key=lambda g: g.key)


def _group_from_row(row: dict[str, str], plan: ServicePlan) -> TripGroup:
    missing = [c for c in GROUP_BASE_COLUMNS[:10] if c not in row]
    if missing:
        raise KeyError(f"missing column(s) {missing}")
    weight_cols = {lab: f"w_{lab}" for lab in plan.labels}
    if all(col in row and row[col] != "" for col in weight_cols.values()):
        weights = {lab: float(row[col]) for lab, col in weight_cols.items()}
    else:
        weights = {lab: 1.0 / len(plan.labels) for lab in plan.labels}
    return TripGroup(
        origin=row["origin_id"].strip(), destination=row["destination_id"].strip(),
        segment=Segment.parse(row["segment"]), trips=float(row["trips"]),
        shares=tuple(float(row[c]) for c in SHARE_COLUMNS), period_weights=weights,
        avg_auto_miles=_float(row.get("avg_auto_miles", ""), 0.0), fare_usd=_float(row.get("fare_usd", ""), 0.0),
        auto_cost_usd=_float(row.get("auto_cost_usd", ""), 0.0),
        t_at=_float(row.get("t_at", "")), t_et=_float(row.get("t_et", "")), t_ivt=_float(row.get("t_ivt", "")),
        n_t=_float(row.get("n_t", ""), 0.0),
    )


def _tally_agenda(rows: list[dict[str, str]], plan: ServicePlan, default_fare: float) -> list[TripGroup]:
    tallies: dict[tuple[str, str, str], dict[str, Any]] = {}
    for row in rows:
        mode = row["mode"].strip()
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        key = (row["origin_id"].strip(), row["destination_id"].strip(), Segment.parse(row["segment"]).value)
        t = tallies.setdefault(key, {"modes": dict.fromkeys(MODES, 0), "periods": dict.fromkeys(plan.labels, 0),
                                     "miles": [], "fare": [], "cost": []})
        t["modes"][mode] += 1
        period = plan.period_of(parse_time(row["departure_time"]))
        if period is not None:
            t["periods"][period] += 1
        if row.get("auto_miles"):
            t["miles"].append(float(row["auto_miles"]))
        if row.get("fare_usd"):
            t["fare"].append(float(row["fare_usd"]))
        if row.get("auto_cost_usd"):
            t["cost"].append(float(row["auto_cost_usd"]))
    groups = []
    for (o, d, seg), t in tallies.items():
        n = sum(t["modes"].values())
        shares = tuple(t["modes"][m] / n for m in MODES)
        assert abs(math.fsum(shares) - 1) < 1e-9
        np_ = sum(t["periods"].values())
        weights = ({k: v / np_ for k, v in t["periods"].items()} if np_
                   else {lab: 1.0 / len(plan.labels) for lab in plan.labels})
        mean = lambda xs, default: math.fsum(xs) / len(xs) if xs else default  # noqa: E731
        groups.append(TripGroup(o, d, Segment(seg), float(n), shares, weights,
                                avg_auto_miles=mean(t["miles"], 0.0), fare_usd=mean(t["fare"], default_fare),
                                auto_cost_usd=mean(t["cost"], 0.0)))
    return groups


# -- results ------------------------------------------------------------------

@dataclass
class GroupRecord:
    outcome: GroupOutcome
    params: ChoiceParams
    corridor: bool
    ghg_grams: float
    welfare: WelfareRecord | None

    @property
    def group(self) -> TripGroup:
        return self.outcome.group


@dataclass
class ScenarioResult:
    records: list[GroupRecord]
    zones: list[Zone]
    equity: EquityReport | None
    aggregates: dict[str, dict[str, float]] = field(default_factory=dict)
    base_skims: list[SkimMatrix] = field(default_factory=list)
    alt_skims: list[SkimMatrix] = field(default_factory=list)
    deltas: list[DeltaMatrix] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def in_scope(rec: GroupRecord, scope: str) -> bool:
    if scope == "all":
        return True
    if scope == "low_income":
        return rec.group.segment is Segment.LOW_INCOME
    if scope == "corridor":
        return rec.corridor
    if scope == "non_corridor":
        return not rec.corridor
    raise KeyError(scope)


def summarize(records: Sequence[GroupRecord]) -> dict[str, dict[str, float]]:
    """Scope totals, each a plain sum over the scope's records in record order."""
    out = {}
    for scope in SCOPES:
        recs = [r for r in records if in_scope(r, scope)]
        ben = [r for r in recs if r.outcome.benefiting]
        shift = mode_shift_summary(r.outcome for r in recs)
        wel = [r.welfare for r in recs if r.welfare is not None]
        ben_wel = [r.welfare for r in ben if r.welfare is not None]
        trips_ben = math.fsum(r.group.trips for r in ben)
        saving_sum = math.fsum(-r.outcome.delta_total * r.group.trips for r in ben)
        cs_total = math.fsum(w.delta * w.trips for w in wel)
        trips_wel = math.fsum(w.trips for w in wel)
        trips_ben_wel = math.fsum(w.trips for w in ben_wel)
        row = {
            "groups": float(len(recs)),
            "trips": math.fsum(r.group.trips for r in recs),
            "benefiting_trips": trips_ben,
            "time_saving_min_per_trip": saving_sum / trips_ben if trips_ben else 0.0,
            "new_line_riders": math.fsum(r.outcome.ridership for r in recs),
            "transit_increase": shift.transit_increase,
            **{f"from_{m}": v for m, v in shift.switched.items()},
            "ghg_grams": math.fsum(r.ghg_grams for r in recs),
            "cs_gain_usd": cs_total,
            "cs_gain_per_trip_all": cs_total / trips_wel if trips_wel else 0.0,
            "cs_gain_per_trip_benefiting": (math.fsum(w.delta * w.trips for w in ben_wel) / trips_ben_wel
                                            if trips_ben_wel else 0.0),
        }
        row["ghg_tons"] = row["ghg_grams"] / 1e6
        out[scope] = row
    return out


# -- running ------------------------------------------------------------------

class _Stages:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextlib.contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        log.info("stage %s: start", name)
        try:
            yield
        except (InputError, StageError):
            raise
        except (ValueError, KeyError, OSError) as exc:
            if name == "load":
                raise InputError(str(exc)) from exc
            raise StageError(name, exc) from exc
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0
            log.info("stage %s: %.3f s", name, self.timings[name])


@contextlib.contextmanager
def output_lock(directory: Path):
    """Exclusive lock on an output directory for the lifetime of a run."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{directory} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _skim_key(feed: Feed, zones: Sequence[Zone], cfg: ScenarioConfig, period) -> str:
    h = hashlib.sha256()
    for part in (__version__, repr(feed), repr(tuple(zones)), repr(period), cfg.weekday, cfg.walk_speed_mps,
                 cfg.detour_factor, cfg.max_access_m, cfg.sampling_step_min, cfg.max_transfers):
        h.update(repr(part).encode())
        h.update(b"\0")
    return h.hexdigest()[:32]


def skim_network(feed: Feed, zones: Sequence[Zone], plan: ServicePlan, cfg: ScenarioConfig,
                 cache_dir: Path | None = None) -> list[SkimMatrix]:
    """One skim per service interval, reusing cached matrices when allowed."""
    tt = Timetable(feed, cfg.weekday, wrap_overnight=True)
    links = zone_links(zones, feed.stops, walk_speed=cfg.walk_speed_mps, max_radius=cfg.max_access_m,
                       detour=cfg.detour_factor)
    workers = min(cfg.workers, worker_count(cfg.workers))
    out = []
    for period in plan.intervals:
        path = None
        if cache_dir is not None:
            path = cache_dir / f"skim_{_skim_key(feed, zones, cfg, period)}.bin"
            if path.is_file():
                log.info("skim %s: cache hit %s", period.label, path.name)
                out.append(skim_from_bytes(path.read_bytes()))
                continue
        sk = compute_skim(tt, zones, links, period, cfg.sampling_step_min, cfg.max_transfers, workers)
        if path is not None:
            path.write_bytes(skim_to_bytes(sk))
        out.append(sk)
    return out


def baseline_from_skims(skims: Sequence[SkimMatrix], o: int, d: int, weights: dict[str, float],
                        ceiling_min: float) -> tuple[float, float, float, float]:
    """Weighted daily base journey components (minutes, transfers) for one OD."""
    used = [(weights.get(sk.period, 0.0), sk) for sk in skims if sk.reachable[o, d]]
    wsum = math.fsum(w for w, _ in used)
    if not used or wsum <= 0:
        return 0.0, 0.0, ceiling_min, 0.0
    comp = lambda attr: math.fsum(w * getattr(sk, attr)[o, d] for w, sk in used) / wsum  # noqa: E731
    return comp("access") / 60, comp("egress") / 60, comp("in_vehicle") / 60, comp("transfers")


def evaluate_groups(groups: Sequence[TripGroup], params: dict[tuple[str, str, str], ChoiceParams],
                    zones: Sequence[Zone], base_skims: Sequence[SkimMatrix], deltas: Sequence[DeltaMatrix],
                    grams_per_mile: float, ceiling_min: float) -> list[GroupRecord]:
    index = {z.zone_id: i for i, z in enumerate(zones)}
    corridor = {z.zone_id: z.corridor for z in zones}
    records = []
    for g in groups:
        if g.origin not in index or g.destination not in index:
            raise InputError(f"group {g.key} references an unknown zone")
        if g.key not in params:
            raise InputError(f"no choice parameters for group {g.key}")
        p = params[g.key]
        o, d = index[g.origin], index[g.destination]
        if not g.has_baseline_times:
            g = with_baseline_times(g, *baseline_from_skims(base_skims, o, d, g.period_weights, ceiling_min))
        period_deltas = {
            dm.period: ((float(dm.d_access[o, d]), float(dm.d_egress[o, d]), float(dm.d_in_vehicle[o, d]))
                        if dm.status[o, d] in (BOTH, NEW) else None)
            for dm in deltas
        }
        try:
            daily = group_daily_delta(period_deltas, g.period_weights)
        except ValueError:
            daily = None
        outcome = attribute_ridership(g, p, daily)
        grams = ghg_grams(outcome.switched_from(AUTO), g.avg_auto_miles, grams_per_mile)

        welfare = None
        if g.p_transit <= 0:
            log.warning("group %s has no transit share; excluded from surplus accounting", g.key)
        else:
            v = transit_utility(p, g.t_at, g.t_et, g.t_ivt, g.n_t, g.fare_usd)
            cs0 = expected_cs(p, v, g.p_transit)
            gain = 0.0
            p_new = outcome.shares_after[TRANSIT]
            if outcome.benefiting:
                if p_new > 0:
                    gain = delta_cs(p, g.p_transit, p_new, outcome.delta)
                else:
                    log.warning("group %s: updated transit share is 0; surplus change set to 0", g.key)
            welfare = WelfareRecord(g.key, g.segment, g.trips, cs0, gain,
                                    corridor[g.origin] or corridor[g.destination])
        records.append(GroupRecord(outcome, p, corridor[g.origin] or corridor[g.destination], grams, welfare))
    return records


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> ScenarioResult:
    """Run every stage; intermediates and reports land in ``cfg.output_dir``."""
    stage = _Stages()
    out = Path(cfg.output_dir)
    lock = output_lock(out) if write else contextlib.nullcontext()
    with lock:
        with stage("load"):
            base = parse_feed(cfg.base_gtfs)
            zones = read_zones(cfg.zones)
            if not zones:
                raise InputError("zone file is empty")
            if cfg.line is not None:
                spec, plan = load_line_config(cfg.line)
            else:
                spec, plan = None, ServicePlan.from_clock(DEFAULT_PLAN)
            crosswalk = read_crosswalk(cfg.param_crosswalk) if cfg.param_crosswalk else None
            params = read_params(cfg.params, crosswalk)
            groups = ingest_groups(cfg.groups, plan, cfg.default_fare_usd)
            log.info("loaded %d stops, %d zones, %d parameter sets, %d groups", len(base.stops), len(zones),
                     len(params), len(groups))

        with stage("synth-gtfs"):
            if spec is not None:
                line_feed = build_synthetic_schedule(spec, plan)
                alt = merge_feeds(base, line_feed)
                if write:
                    write_feed(line_feed, out / "gtfs_line")
                    write_feed(alt, out / "gtfs_alt")
            else:
                alt = base

        with stage("skim"):
            cache_dir = None
            if write and cfg.cache:
                cache_dir = out / "cache"
                cache_dir.mkdir(parents=True, exist_ok=True)
            base_skims = skim_network(base, zones, plan, cfg, cache_dir)
            alt_skims = base_skims if alt is base else skim_network(alt, zones, plan, cfg, cache_dir)
            if write:
                write_skim_csv(base_skims, out / "skims_base.csv")
                write_skim_csv(alt_skims, out / "skims_alt.csv")

        with stage("delta"):
            deltas = [delta_skim(b, a, cfg.ceiling_min) for b, a in zip(base_skims, alt_skims)]
            if write:
                write_delta_csv(deltas, out / "deltas.csv")

        with stage("evaluate"):
            records = evaluate_groups(groups, params, zones, base_skims, deltas, cfg.grams_per_mile,
                                      cfg.ceiling_min)

        with stage("equity"):
            rows = [r.welfare for r in records if r.welfare is not None]
            equity = None
            if rows and any(w.low_income for w in rows):
                equity = equity_report([(w.key, w.cs_pre, w.trips, w.low_income) for w in rows],
                                       [(w.key, w.cs_post, w.trips, w.low_income) for w in rows],
                                       cfg.threshold_fractions)
            else:
                log.warning("no low-income groups with surplus records; equity report skipped")

        result = ScenarioResult(records, zones, equity, summarize(records), base_skims, alt_skims, deltas)
        if write:
            with stage("report"):
                export_report(result, out)
        result.timings = dict(stage.timings)
        if write:
            manifest = {
                "version": __version__,
                "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(cfg).items()},
                "groups": len(records),
                "zones": len(zones),
                "periods": [sk.period for sk in base_skims],
                "stage_seconds": result.timings,
            }
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n",
                                               encoding="utf-8")
    return result


# -- reports ------------------------------------------------------------------

def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, float) else v for v in row])


GROUP_RESULT_HEADER = ("origin_id", "destination_id", "segment", "corridor", "trips", "benefiting",
                       "d_at_min", "d_et_min", "d_ivt_min", "d_total_min",
                       *(f"{c}_pre" for c in SHARE_COLUMNS), *(f"{c}_post" for c in SHARE_COLUMNS),
                       "new_line_riders", "transit_increase", *(f"from_{m}" for m in MODES if m != "transit"),
                       "ghg_grams", "cs_pre_usd", "delta_cs_usd", "cs_post_usd")

WELFARE_HEADER = ("origin_id", "destination_id", "segment", "trips", "cs_pre_usd", "delta_cs_usd", "cs_post_usd")


def group_rows(records: Sequence[GroupRecord]) -> list[list[Any]]:
    rows = []
    for r in records:
        g, oc, w = r.group, r.outcome, r.welfare
        delta = oc.delta if oc.delta is not None else (math.nan,) * 3
        rows.append([
            g.origin, g.destination, g.segment.value, int(r.corridor), float(g.trips), int(oc.benefiting),
            *map(float, delta), float(oc.delta_total) if oc.delta is not None else math.nan,
            *g.shares, *oc.shares_after, float(oc.ridership), float(oc.transit_increase),
            *(float(oc.switched_from(m)) for m in range(len(MODES)) if m != TRANSIT),
            float(r.ghg_grams),
            w.cs_pre if w else "", w.delta if w else "", w.cs_post if w else "",
        ])
    return rows


def export_report(result: ScenarioResult, directory: str | Path) -> list[Path]:
    """Per-group CSV, five summary tables, equity JSON and two GeoJSON layers."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("report", exc) from exc
    agg = result.aggregates or summarize(result.records)
    written = []

    def put(name, header, rows):
        path = directory / name
        _write_csv(path, header, rows)
        written.append(path)

    put("group_results.csv", GROUP_RESULT_HEADER, group_rows(result.records))
    put("welfare.csv", WELFARE_HEADER,
        ([*r.welfare.key, float(r.welfare.trips), r.welfare.cs_pre, r.welfare.delta, r.welfare.cs_post]
         for r in result.records if r.welfare is not None))
    put("time_savings.csv", ("scope", "benefiting_trips", "time_saving_min_per_trip"),
        ((s, agg[s]["benefiting_trips"], agg[s]["time_saving_min_per_trip"]) for s in SCOPES))
    total_riders = agg["all"]["new_line_riders"]
    put("ridership.csv", ("scope", "new_line_riders", "share_of_total"),
        ((s, agg[s]["new_line_riders"], agg[s]["new_line_riders"] / total_riders if total_riders else 0.0)
         for s in SCOPES))
    switch_cols = [f"from_{m}" for m in MODES if m != "transit"]
    put("mode_shift.csv", ("scope", "transit_increase", *switch_cols, "ghg_grams", "ghg_tons"),
        ((s, agg[s]["transit_increase"], *(agg[s][c] for c in switch_cols), agg[s]["ghg_grams"], agg[s]["ghg_tons"])
         for s in SCOPES))
    put("consumer_surplus.csv", ("scope", "trips", "benefiting_trips", "cs_gain_usd", "cs_gain_per_trip_all",
                                 "cs_gain_per_trip_benefiting"),
        ((s, agg[s]["trips"], agg[s]["benefiting_trips"], agg[s]["cs_gain_usd"], agg[s]["cs_gain_per_trip_all"],
          agg[s]["cs_gain_per_trip_benefiting"]) for s in SCOPES))
    put("equity.csv", ("metric", "scope", "threshold", "pre", "post", "delta"),
        result.equity.rows() if result.equity else [])

    eq_path = directory / "equity.json"
    eq_path.write_text(json.dumps(result.equity.to_dict() if result.equity else {}, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    written.append(eq_path)
    for side in ("origin", "destination"):
        path = directory / f"by_{side}.geojson"
        path.write_text(json.dumps(zone_layer(result, side), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    return written


def zone_layer(result: ScenarioResult, side: str) -> dict:
    """Point-feature layer per zone with riders, mean saving and surplus gain."""
    feats = []
    for z in result.zones:
        recs = [r for r in result.records if (r.group.origin if side == "origin" else r.group.destination) == z.zone_id]
        ben = [r for r in recs if r.outcome.benefiting]
        trips_ben = math.fsum(r.group.trips for r in ben)
        props = {
            "zone_id": z.zone_id,
            "in_corridor": z.corridor,
            "new_line_riders": math.fsum(r.outcome.ridership for r in recs),
            "time_saving_min": (math.fsum(-r.outcome.delta_total * r.group.trips for r in ben) / trips_ben
                                if trips_ben else None),
            "cs_gain_usd": math.fsum(r.welfare.delta * r.welfare.trips for r in recs if r.welfare is not None),
        }
        feats.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": [z.lon, z.lat]},
                      "properties": props})
    return {"type": "FeatureCollection", "name": f"by_{side}", "features": feats}
