"""GTFS static feeds: parse, write, merge, and synthesize a new line.

Only the five tables the router needs are handled (stops, routes, trips,
stop_times, calendar). Times are integer seconds since service-day
midnight and may exceed 24:00:00.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import yaml

log = logging.getLogger(__name__)

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
DAY_SECONDS = 86_400

STOPS_HEADER = ("stop_id", "stop_name", "stop_lat", "stop_lon")
ROUTES_HEADER = ("route_id", "route_short_name", "route_type")
TRIPS_HEADER = ("route_id", "service_id", "trip_id", "direction_id")
STOP_TIMES_HEADER = ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence")
CALENDAR_HEADER = ("service_id", *WEEKDAYS, "start_date", "end_date")

REQUIRED_FILES = ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt", "calendar.txt")


class FeedError(ValueError):
    """Raised for unreadable, malformed, or inconsistent feeds.

    ``file``, ``line`` and ``column`` locate the offending cell when known.
    """

    def __init__(self, message: str, file: str | None = None, line: int | None = None,
                 column: str | None = None):
        self.file = file
        self.line = line
        self.column = column
        where = ":".join(str(p) for p in (file, line) if p is not None)
        if column is not None:
            where = f"{where} [{column}]" if where else f"[{column}]"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True, order=True)
class Stop:
    stop_id: str
    name: str
    lat: float
    lon: float


@dataclass(frozen=True, order=True)
class Route:
    route_id: str
    route_type: int
    short_name: str = ""


@dataclass(frozen=True, order=True)
class Trip:
    trip_id: str
    route_id: str
    service_id: str
    direction: int = 0


@dataclass(frozen=True, order=True)
class StopTime:
    trip_id: str
    stop_sequence: int
    arrival: int
    departure: int
    stop_id: str


@dataclass(frozen=True, order=True)
class Service:
    service_id: str
    days: tuple[bool, ...]
    start_date: str = "20240101"
    end_date: str = "20251231"

    def active_on(self, weekday: int) -> bool:
        return self.days[weekday]


@dataclass(frozen=True)
class Feed:
    """Immutable, canonically ordered GTFS feed.

    Tables are sorted tuples, so two feeds with the same content compare
    equal regardless of the order they were built or read in.
    """

    stops: tuple[Stop, ...] = ()
    routes: tuple[Route, ...] = ()
    trips: tuple[Trip, ...] = ()
    stop_times: tuple[StopTime, ...] = ()
    services: tuple[Service, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stops", tuple(sorted(self.stops)))
        object.__setattr__(self, "routes", tuple(sorted(self.routes)))
        object.__setattr__(self, "trips", tuple(sorted(self.trips)))
        object.__setattr__(self, "stop_times", tuple(sorted(self.stop_times)))
        object.__setattr__(self, "services", tuple(sorted(self.services)))

    def validate(self) -> "Feed":
        """Check uniqueness, references and stop-time ordering; return self."""
        for table, key in (("stops.txt", "stop_id"), ("routes.txt", "route_id"),
                           ("trips.txt", "trip_id"), ("calendar.txt", "service_id")):
            rows = getattr(self, _TABLE_ATTR[table])
            seen = set()
            for row in rows:
                ident = getattr(row, key)
                if ident in seen:
                    raise FeedError(f"duplicate {key} {ident!r}", file=table, column=key)
                seen.add(ident)
        route_ids = {r.route_id for r in self.routes}
        service_ids = {s.service_id for s in self.services}
        stop_ids = {s.stop_id for s in self.stops}
        trip_ids = {t.trip_id for t in self.trips}
        for trip in self.trips:
            if trip.route_id not in route_ids:
                raise FeedError(f"trip {trip.trip_id!r} references unknown route {trip.route_id!r}",
                                file="trips.txt", column="route_id")
            if trip.service_id not in service_ids:
                raise FeedError(f"trip {trip.trip_id!r} references unknown service {trip.service_id!r}",
                                file="trips.txt", column="service_id")
        prev: StopTime | None = None
        for st in self.stop_times:
            if st.trip_id not in trip_ids:
                raise FeedError(f"stop_time references unknown trip {st.trip_id!r}",
                                file="stop_times.txt", column="trip_id")
            if st.stop_id not in stop_ids:
                raise FeedError(f"stop_time references unknown stop {st.stop_id!r}",
                                file="stop_times.txt", column="stop_id")
            if st.departure < st.arrival:
                raise FeedError(f"trip {st.trip_id!r} departs before it arrives at sequence {st.stop_sequence}",
                                file="stop_times.txt", column="departure_time")
            if prev is not None and prev.trip_id == st.trip_id:
                if st.stop_sequence == prev.stop_sequence:
                    raise FeedError(f"trip {st.trip_id!r} repeats stop_sequence {st.stop_sequence}",
                                    file="stop_times.txt", column="stop_sequence")
                if st.arrival < prev.departure:
                    raise FeedError(f"trip {st.trip_id!r} goes back in time at sequence {st.stop_sequence}",
                                    file="stop_times.txt", column="arrival_time")
            prev = st
        return self

    def stop_times_by_trip(self) -> dict[str, list[StopTime]]:
        out: dict[str, list[StopTime]] = {}
        for st in self.stop_times:
            out.setdefault(st.trip_id, []).append(st)
        return out


_TABLE_ATTR = {
    "stops.txt": "stops",
    "routes.txt": "routes",
    "trips.txt": "trips",
    "stop_times.txt": "stop_times",
    "calendar.txt": "services",
}


# -- time fields --------------------------------------------------------------

def parse_time(text: str) -> int:
    """``HH:MM[:SS]`` to seconds since midnight; hours may be >= 24."""
    parts = text.strip().split(":")
    if len(parts) not in (2, 3) or not all(p.isdigit() for p in parts):
        raise ValueError(f"bad time {text!r}")
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    if m >= 60 or s >= 60:
        raise ValueError(f"bad time {text!r}")
    return h * 3600 + m * 60 + s


def format_time(seconds: int) -> str:
    if seconds < 0:
        raise ValueError(f"negative time {seconds}")
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


# -- reading ------------------------------------------------------------------

def _rows(path: Path, required: Iterable[str]) -> Iterator[tuple[int, dict[str, str]]]:
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        for col in required:
            if col not in header:
                raise FeedError(f"missing column {col!r}", file=path.name, line=1, column=col)
        for row in reader:
            if None in row:
                raise FeedError("too many fields", file=path.name, line=reader.line_num)
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items()}


def _cell(fname, line, row, column, conv):
    raw = row.get(column, "")
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise FeedError(f"cannot parse {raw!r}", file=fname, line=line, column=column) from None


def _flag(raw: str) -> bool:
    if raw not in ("0", "1"):
        raise ValueError(raw)
    return raw == "1"


def _nonempty(raw: str) -> str:
    if not raw:
        raise ValueError("empty")
    return raw


def parse_feed(directory: str | Path) -> Feed:
    """Read a GTFS directory into a validated :class:`Feed`."""
    directory = Path(directory)
    for name in REQUIRED_FILES:
        if not (directory / name).is_file():
            raise FeedError("required file is missing", file=name)

    stops = []
    for line, row in _rows(directory / "stops.txt", ("stop_id", "stop_lat", "stop_lon")):
        f = "stops.txt"
        lat = _cell(f, line, row, "stop_lat", float)
        lon = _cell(f, line, row, "stop_lon", float)
        if not (-90 <= lat <= 90):
            raise FeedError(f"latitude {lat} out of range", file=f, line=line, column="stop_lat")
        if not (-180 <= lon <= 180):
            raise FeedError(f"longitude {lon} out of range", file=f, line=line, column="stop_lon")
        stops.append(Stop(_cell(f, line, row, "stop_id", _nonempty), row.get("stop_name", ""), lat, lon))

    routes = []
    for line, row in _rows(directory / "routes.txt", ("route_id", "route_type")):
        f = "routes.txt"
        routes.append(Route(_cell(f, line, row, "route_id", _nonempty),
                            _cell(f, line, row, "route_type", int),
                            row.get("route_short_name", "")))

    trips = []
    for line, row in _rows(directory / "trips.txt", ("route_id", "service_id", "trip_id")):
        f = "trips.txt"
        direction = _cell(f, line, row, "direction_id", lambda s: int(s) if s else 0)
        trips.append(Trip(_cell(f, line, row, "trip_id", _nonempty),
                          _cell(f, line, row, "route_id", _nonempty),
                          _cell(f, line, row, "service_id", _nonempty), direction))

    stop_times = []
    for line, row in _rows(directory / "stop_times.txt",
                           ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence")):
        f = "stop_times.txt"
        stop_times.append(StopTime(
            _cell(f, line, row, "trip_id", _nonempty),
            _cell(f, line, row, "stop_sequence", int),
            _cell(f, line, row, "arrival_time", parse_time),
            _cell(f, line, row, "departure_time", parse_time),
            _cell(f, line, row, "stop_id", _nonempty),
        ))

    services = []
    for line, row in _rows(directory / "calendar.txt", CALENDAR_HEADER):
        f = "calendar.txt"
        days = tuple(_cell(f, line, row, d, _flag) for d in WEEKDAYS)
        services.append(Service(_cell(f, line, row, "service_id", _nonempty), days,
                                row["start_date"], row["end_date"]))

    feed = Feed(tuple(stops), tuple(routes), tuple(trips), tuple(stop_times), tuple(services))
    log.debug("parsed %s: %d stops, %d trips, %d stop_times", directory,
              len(feed.stops), len(feed.trips), len(feed.stop_times))
    return feed.validate()


# -- writing ------------------------------------------------------------------

def write_feed(feed: Feed, directory: str | Path) -> Path:
    """Write ``feed`` as GTFS text files in canonical order."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        tables = {
            "stops.txt": (STOPS_HEADER, ((s.stop_id, s.name, repr(s.lat), repr(s.lon)) for s in feed.stops)),
            "routes.txt": (ROUTES_HEADER, ((r.route_id, r.short_name, r.route_type) for r in feed.routes)),
            "trips.txt": (TRIPS_HEADER, ((t.route_id, t.service_id, t.trip_id, t.direction) for t in feed.trips)),
            "stop_times.txt": (STOP_TIMES_HEADER, (
                (st.trip_id, format_time(st.arrival), format_time(st.departure), st.stop_id, st.stop_sequence)
                for st in feed.stop_times)),
            "calendar.txt": (CALENDAR_HEADER, (
                (s.service_id, *(int(d) for d in s.days), s.start_date, s.end_date) for s in feed.services)),
        }
        for name, (header, rows) in tables.items():
            with (directory / name).open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
    except OSError as exc:
        raise FeedError(f"cannot write feed to {directory}: {exc}") from exc
    return directory


# -- merging ------------------------------------------------------------------

def merge_feeds(base: Feed, overlay: Feed, prefix: str = "ovl_") -> Feed:
    """Union of two feeds.

    Overlay stops, routes and services identical to a base record are shared
    (that is how the new line meets the existing network). Any other id
    collision is resolved by prefixing the overlay id; if the prefixed id is
    taken as well the merge fails. Base records are never touched.
    """

    def resolve(base_rows, overlay_rows, key, share_identical):
        base_by_id = {getattr(r, key): r for r in base_rows}
        taken = set(base_by_id) | {getattr(r, key) for r in overlay_rows}
        renames, keep = {}, []
        for row in overlay_rows:
            ident = getattr(row, key)
            if ident in base_by_id:
                if share_identical and base_by_id[ident] == row:
                    continue
                new = prefix + ident
                if new in taken:
                    raise FeedError(f"cannot resolve {key} collision on {ident!r}")
                taken.add(new)
                renames[ident] = new
            keep.append(row)
        return renames, keep

    stop_map, stops = resolve(base.stops, overlay.stops, "stop_id", True)
    route_map, routes = resolve(base.routes, overlay.routes, "route_id", True)
    service_map, services = resolve(base.services, overlay.services, "service_id", True)
    trip_map, trips = resolve(base.trips, overlay.trips, "trip_id", False)

    stops = [replace(s, stop_id=stop_map.get(s.stop_id, s.stop_id)) for s in stops]
    routes = [replace(r, route_id=route_map.get(r.route_id, r.route_id)) for r in routes]
    services = [replace(s, service_id=service_map.get(s.service_id, s.service_id)) for s in services]
    trips = [replace(t, trip_id=trip_map.get(t.trip_id, t.trip_id),
                     route_id=route_map.get(t.route_id, t.route_id),
                     service_id=service_map.get(t.service_id, t.service_id)) for t in trips]
    stop_times = [replace(st, trip_id=trip_map.get(st.trip_id, st.trip_id),
                          stop_id=stop_map.get(st.stop_id, st.stop_id)) for st in overlay.stop_times]

    merged = Feed(base.stops + tuple(stops), base.routes + tuple(routes), base.trips + tuple(trips),
                  base.stop_times + tuple(stop_times), base.services + tuple(services))
    return merged.validate()


# -- synthetic line -----------------------------------------------------------

@dataclass(frozen=True)
class RouteStop:
    stop_id: str
    name: str
    lat: float
    lon: float
    mile: float


@dataclass(frozen=True)
class RouteSpec:
    """Alignment of a proposed line: ordered stops with cumulative mileage."""

    stops: tuple[RouteStop, ...]
    run_time_min: float
    length_mi: float
    route_id: str = "NEW"
    route_type: int = 0
    service_id: str = "WKDY"

    def __post_init__(self):
        if len(self.stops) < 2:
            raise ValueError("a route needs at least two stops")
        if self.run_time_min <= 0:
            raise ValueError("run time must be positive")
        miles = [s.mile for s in self.stops]
        if miles[0] != 0:
            raise ValueError("first stop must be at mile 0")
        if not math.isclose(miles[-1], self.length_mi, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"last stop at mile {miles[-1]} but line length is {self.length_mi}")
        for a, b in zip(miles, miles[1:]):
            if b <= a:
                raise ValueError(f"zero-length or backwards segment between mile {a} and {b}")

    @property
    def speed_mph(self) -> float:
        return self.length_mi / (self.run_time_min / 60.0)


@dataclass(frozen=True)
class ServiceInterval:
    label: str
    start: int
    end: int
    headway_min: float

    @property
    def headway_s(self) -> int:
        return int(round(self.headway_min * 60))

    def departures(self) -> list[int]:
        """Departures from the first stop: start, start + headway, ... < end."""
        step = self.headway_s
        return list(range(self.start, self.end, step))


@dataclass(frozen=True)
class ServicePlan:
    intervals: tuple[ServiceInterval, ...]

    def __post_init__(self):
        if not self.intervals:
            raise ValueError("service plan has no intervals")
        labels = [iv.label for iv in self.intervals]
        if len(set(labels)) != len(labels):
            raise ValueError("interval labels must be unique")
        for iv in self.intervals:
            if iv.headway_min <= 0 or iv.headway_s <= 0:
                raise ValueError(f"interval {iv.label!r}: headway must be positive")
            if iv.end <= iv.start:
                raise ValueError(f"interval {iv.label!r}: end must follow start")
        for a, b in zip(self.intervals, self.intervals[1:]):
            if b.start < a.end:
                raise ValueError(f"intervals {a.label!r} and {b.label!r} overlap")
        if self.intervals[-1].end - self.intervals[0].start > DAY_SECONDS:
            raise ValueError("service plan spans more than one day")

    @property
    def labels(self) -> list[str]:
        return [iv.label for iv in self.intervals]

    def interval(self, label: str) -> ServiceInterval:
        for iv in self.intervals:
            if iv.label == label:
                return iv
        raise KeyError(label)

    def period_of(self, seconds: int) -> str | None:
        """Label of the interval containing a clock time (any day offset)."""
        for iv in self.intervals:
            for shift in (0, DAY_SECONDS, -DAY_SECONDS):
                if iv.start <= seconds + shift < iv.end:
                    return iv.label
        return None

    @classmethod
    def from_clock(cls, rows: Iterable[tuple[str, str, str, float]]) -> "ServicePlan":
        """Build from ``(label, "HH:MM", "HH:MM", headway_min)`` rows.

        Clock times are unrolled so intervals run forward in time: an end at
        or before its start (``23:00``-``06:00``) rolls past midnight, and so
        do the starts of intervals listed after one that crossed midnight.
        """
        intervals = []
        cursor = None
        for label, start_txt, end_txt, headway in rows:
            start, end = parse_time(start_txt), parse_time(end_txt)
            if cursor is not None and cursor > DAY_SECONDS and start < cursor:
                start += DAY_SECONDS
            while end <= start:
                end += DAY_SECONDS
            intervals.append(ServiceInterval(label, start, end, float(headway)))
            cursor = end
        return cls(tuple(intervals))


def interstop_times(spec: RouteSpec) -> list[int]:
    """Whole-second run time of each segment at the line's average speed.

    Rounding residue goes to the last segment so the end-to-end time equals
    the configured run time exactly.
    """
    total = int(round(spec.run_time_min * 60))
    seconds_per_mile = total / spec.length_mi
    times = []
    for a, b in zip(spec.stops, spec.stops[1:]):
        seg = b.mile - a.mile
        if seg <= 0:
            raise ValueError(f"zero-length segment {a.stop_id}->{b.stop_id}")
        times.append(int(round(seg * seconds_per_mile)))
    times[-1] += total - sum(times)
    if times[-1] <= 0:
        raise ValueError("run time too short for the stop spacing")
    return times


def build_synthetic_schedule(spec: RouteSpec, plan: ServicePlan) -> Feed:
    """Full-day timetable for ``spec`` under ``plan``, both directions.

    Every interval starts a departure at its start instant and then steps
    by its headway while strictly before its end. No dwell at stops.
    """
    segs = interstop_times(spec)
    patterns = {0: (list(spec.stops), segs), 1: (list(reversed(spec.stops)), list(reversed(segs)))}
    trips, stop_times = [], []
    for direction, (stops, seg_times) in patterns.items():
        n = 0
        for iv in plan.intervals:
            for dep in iv.departures():
                trip_id = f"{spec.route_id}_{direction}_{n:04d}"
                n += 1
                trips.append(Trip(trip_id, spec.route_id, spec.service_id, direction))
                t = dep
                for seq, stop in enumerate(stops):
                    if seq:
                        t += seg_times[seq - 1]
                    stop_times.append(StopTime(trip_id, seq + 1, t, t, stop.stop_id))
    feed = Feed(
        stops=tuple(Stop(s.stop_id, s.name, s.lat, s.lon) for s in spec.stops),
        routes=(Route(spec.route_id, spec.route_type, spec.route_id),),
        trips=tuple(trips),
        stop_times=tuple(stop_times),
        services=(Service(spec.service_id, (True,) * 5 + (False,) * 2),),
    )
    return feed.validate()


def load_line_config(path: str | Path) -> tuple[RouteSpec, ServicePlan]:
    """Read a proposed-line YAML file.

    Schema::

        route:
          id: NEW            # optional
          route_type: 0      # optional, GTFS route_type
          service_id: WKDY   # optional
          run_time_min: 39
          length_mi: 14
          stops:
            - {id: S01, name: ..., lat: 40.6, lon: -73.9, mile: 0.0}
        plan:
          - {label: morning_peak, start: "06:00", end: "09:00", headway_min: 5}
    """
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    try:
        r = doc["route"]
        stops = tuple(RouteStop(str(s["id"]), str(s.get("name", s["id"])), float(s["lat"]),
                                float(s["lon"]), float(s["mile"])) for s in r["stops"])
        spec = RouteSpec(stops, float(r["run_time_min"]), float(r["length_mi"]),
                         route_id=str(r.get("id", "NEW")), route_type=int(r.get("route_type", 0)),
                         service_id=str(r.get("service_id", "WKDY")))
        plan = ServicePlan.from_clock(
            (str(p["label"]), str(p["start"]), str(p["end"]), float(p["headway_min"])) for p in doc["plan"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed line config ({exc})") from exc
    return spec, plan


DEFAULT_PLAN = (
    ("morning_peak", "06:00", "09:00", 5),
    ("midday", "09:00", "16:00", 10),
    ("evening_peak", "16:00", "20:00", 5),
    ("evening", "20:00", "23:00", 10),
    ("early_morning", "23:00", "06:00", 20),
)
"""Five-interval weekday plan with peak/off-peak headways (minutes)."""
