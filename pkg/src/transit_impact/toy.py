"""Small synthetic city for demos and end-to-end tests.

Nine zones on a 1.5 km grid (``Z<row><col>``) with a stop at each served
centroid. Two base lines cross at ``S11``; the proposed line runs
``S20 - S10 - S01 - S02``, giving a one-seat ride that base riders only get
with a transfer, and reaching two corner zones the base network misses.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from .demand import MODES, PARAM_FIELDS, Segment
from .gtfs import (DEFAULT_PLAN, Feed, Route, Service, ServicePlan, Stop, StopTime, Trip, parse_time,
                   write_feed)
from .skim import haversine_m

ORIGIN = (40.650, -73.950)
SPACING_M = 1500.0
BASE_LINES = {"A": ("S10", "S11", "S12"), "B": ("S01", "S11", "S21")}
NEW_LINE = ("S20", "S10", "S01", "S02")
BASE_HEADWAY_S = 12 * 60
BASE_SEGMENT_S = 180
BASE_SPAN = ("05:00:00", "25:00:00")


def zone_coords() -> dict[str, tuple[float, float]]:
    dlat = SPACING_M / 111_195.0
    dlon = dlat / np.cos(np.radians(ORIGIN[0]))
    return {f"Z{r}{c}": (round(float(ORIGIN[0] + r * dlat), 6), round(float(ORIGIN[1] + c * dlon), 6))
            for r in range(3) for c in range(3)}


def base_feed() -> Feed:
    coords = zone_coords()
    used = sorted({s for stops in BASE_LINES.values() for s in stops})
    stops = [Stop(s, f"Stop {s[1:]}", *coords["Z" + s[1:]]) for s in used]
    routes, trips, stop_times = [], [], []
    start, end = (parse_time(t) for t in BASE_SPAN)
    for offset, (name, seq) in enumerate(sorted(BASE_LINES.items())):
        routes.append(Route(name, 3, name))
        for direction, pattern in enumerate((seq, tuple(reversed(seq)))):
            for n, dep in enumerate(range(start + offset * 300, end, BASE_HEADWAY_S)):
                trip_id = f"{name}_{direction}_{n:03d}"
                trips.append(Trip(trip_id, name, "WKDY", direction))
                for i, sid in enumerate(pattern):
                    t = dep + i * BASE_SEGMENT_S
                    stop_times.append(StopTime(trip_id, i + 1, t, t, sid))
    return Feed(tuple(stops), tuple(routes), tuple(trips), tuple(stop_times),
                (Service("WKDY", (True,) * 5 + (False,) * 2),)).validate()


def line_config(stops=NEW_LINE, run_time_min: float = 9.0, route_id: str = "N") -> dict:
    coords = zone_coords()
    miles, rows = 0.0, []
    prev = None
    for sid in stops:
        lat, lon = coords["Z" + sid[1:]]
        if prev is not None:
            miles += haversine_m(*prev, lat, lon) / 1609.344
        rows.append({"id": sid, "name": f"Stop {sid[1:]}", "lat": lat, "lon": lon, "mile": round(miles, 6)})
        prev = (lat, lon)
    return {
        "route": {"id": route_id, "route_type": 0, "service_id": "WKDY", "run_time_min": run_time_min,
                  "length_mi": rows[-1]["mile"], "stops": rows},
        "plan": [{"label": lab, "start": a, "end": b, "headway_min": h} for lab, a, b, h in DEFAULT_PLAN],
    }


def write_toy_city(directory: str | Path, seed: int = 0, n_groups: int = 30, line: bool = True) -> Path:
    """Write every scenario input plus ``scenario.yaml``; return the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    coords = zone_coords()
    corridor = {"Z" + s[1:] for s in NEW_LINE}

    write_feed(base_feed(), directory / "base_gtfs")
    (directory / "line.yaml").write_text(yaml.safe_dump(line_config(), sort_keys=False), encoding="utf-8")
    with (directory / "zones.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("zone_id", "lat", "lon", "in_corridor"))
        for z, (lat, lon) in coords.items():
            w.writerow((z, lat, lon, int(z in corridor)))

    zones = sorted(coords)
    segments = list(Segment)
    keys = set()
    # keep a few groups on ODs the new line serves directly
    for o, d in (("Z10", "Z01"), ("Z01", "Z10"), ("Z20", "Z12"), ("Z02", "Z10")):
        keys.add((o, d, segments[len(keys) % 4].value))
    while len(keys) < n_groups:
        o, d = rng.choice(zones, 2, replace=False)
        keys.add((str(o), str(d), segments[int(rng.integers(4))].value))
    keys = sorted(keys)
    if not any(k[2] == Segment.LOW_INCOME.value for k in keys):
        keys[0] = (keys[0][0], keys[0][1], Segment.LOW_INCOME.value)

    labels = ServicePlan.from_clock(DEFAULT_PLAN).labels
    group_header = ("origin_id", "destination_id", "segment", "trips", *(f"share_{m}" for m in MODES),
                    "avg_auto_miles", "fare_usd", "auto_cost_usd", "t_at", "t_et", "t_ivt", "n_t",
                    *(f"w_{lab}" for lab in labels))
    param_header = ("origin_id", "destination_id", "segment", *PARAM_FIELDS)
    profile = np.array([0.25, 0.35, 0.25, 0.10, 0.05])
    with (directory / "groups.csv").open("w", newline="", encoding="utf-8") as gfh, \
            (directory / "params.csv").open("w", newline="", encoding="utf-8") as pfh:
        gw, pw = csv.writer(gfh, lineterminator="\n"), csv.writer(pfh, lineterminator="\n")
        gw.writerow(group_header)
        pw.writerow(param_header)
        for o, d, seg in keys:
            shares = rng.dirichlet([4, 2, 0.5, 0.5, 1.5, 1])
            weights = rng.dirichlet(profile * 40)
            miles = haversine_m(*coords[o], *coords[d]) * 1.3 / 1609.344
            gw.writerow((o, d, seg, int(rng.integers(50, 500)), *(repr(float(s)) for s in shares),
                         round(miles, 4), 2.9, round(0.6 * miles + 1.0, 3), "", "", "", "",
                         *(repr(float(w)) for w in weights)))
            params = {
                "theta_auto_tt": -rng.uniform(0.02, 0.08),
                "theta_cost": -rng.uniform(0.1, 0.4),
                "theta_transit_at": -rng.uniform(0.02, 0.08),
                "theta_transit_et": -rng.uniform(0.02, 0.08),
                "theta_transit_ivt": -rng.uniform(0.01, 0.05),
                "theta_transit_nt": -rng.uniform(0.05, 0.3),
                "theta_nonvehicle_tt": -rng.uniform(0.03, 0.1),
                "asc_driving": rng.uniform(0, 1),
                "asc_transit": rng.uniform(5.0, 7.0),
                "asc_on_demand": rng.uniform(-1, 0),
                "asc_biking": rng.uniform(-1, 0),
                "asc_walking": rng.uniform(-0.5, 0.5),
                "asc_carpool": rng.uniform(-1, 0),
            }
            pw.writerow((o, d, seg, *(repr(round(float(params[f]), 6)) for f in PARAM_FIELDS)))

    cfg = {
        "base_gtfs": "base_gtfs",
        "line": "line.yaml" if line else None,
        "zones": "zones.csv",
        "params": "params.csv",
        "groups": "groups.csv",
        "output_dir": "out",
        "walk": {"speed_mps": 1.34, "detour": 1.3, "max_radius_m": 1200.0},
        "sampling_step_min": 10,
        "max_transfers": 4,
        "ceiling_min": 120,
        "grams_per_mile": 400,
        "threshold_fractions": [0.1, 0.5],
        "seed": seed,
    }
    path = directory / "scenario.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return path
