"""Zone-to-zone transit time skims.

A round-based (RAPTOR-style) earliest-arrival search runs over an immutable
:class:`Timetable`; round ``k`` holds the best arrival at every stop using at
most ``k`` vehicles. Journeys are split into three components:

* access: walk to the first stop plus the initial wait for the vehicle
* in-vehicle: first departure to last arrival, transfer waits included
* egress: walk from the last stop

so ``total == access + in_vehicle + egress`` always holds.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gtfs import DAY_SECONDS, Feed, ServiceInterval, Stop

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
INF = np.iinfo(np.int64).max // 4

WALK_SPEED_MPS = 1.34
DETOUR_FACTOR = 1.3
MAX_ACCESS_M = 1200.0
SAMPLE_STEP_MIN = 10.0
MAX_TRANSFERS = 4
NEW_CONNECTION_CEILING_MIN = 120.0


@dataclass(frozen=True)
class Zone:
    zone_id: str
    lat: float
    lon: float
    corridor: bool = False

    def __post_init__(self):
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            raise ValueError(f"zone {self.zone_id!r}: coordinates out of range")


@dataclass(frozen=True)
class AccessLink:
    zone_id: str
    stop_id: str
    walk_s: int


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, a)))


def access_candidates(zone: Zone, stops: Iterable[Stop], walk_speed: float = WALK_SPEED_MPS,
                      max_radius: float = MAX_ACCESS_M, detour: float = DETOUR_FACTOR) -> list[AccessLink]:
    """Stops within walking range of a zone centroid, with whole-second walk times."""
    if walk_speed <= 0:
        raise ValueError("walk speed must be positive")
    if max_radius <= 0:
        raise ValueError("access radius must be positive")
    links = []
    for stop in stops:
        dist = haversine_m(zone.lat, zone.lon, stop.lat, stop.lon) * detour
        if dist <= max_radius:
            links.append(AccessLink(zone.zone_id, stop.stop_id, int(round(dist / walk_speed))))
    return sorted(links, key=lambda l: l.stop_id)


def zone_links(zones: Sequence[Zone], stops: Iterable[Stop], **walk) -> dict[str, list[AccessLink]]:
    stops = list(stops)
    out = {z.zone_id: access_candidates(z, stops, **walk) for z in zones}
    isolated = [zid for zid, links in out.items() if not links]
    if isolated:
        log.warning("%d zone(s) have no stop in walking range: %s", len(isolated), ", ".join(isolated[:10]))
    return out


# -- timetable ----------------------------------------------------------------

@dataclass
class Pattern:
    """Trips sharing one stop sequence; rows sorted by trip id."""

    stops: np.ndarray          # (S,) stop indices
    trip_ids: list[str]
    dep: np.ndarray            # (T, S) departure seconds
    arr: np.ndarray            # (T, S) arrival seconds


class Timetable:
    """Routing view of a feed for one service weekday (0 = Monday).

    With ``wrap_overnight`` every active trip is also added one day later,
    so departures sampled after midnight (``24:00:00`` onwards) can use
    early-morning service of the next day of the same weekday pattern.
    """

    def __init__(self, feed: Feed, weekday: int = 0, wrap_overnight: bool = False):
        self.stop_ids = [s.stop_id for s in feed.stops]
        self.stops = list(feed.stops)
        self.stop_index = {sid: i for i, sid in enumerate(self.stop_ids)}
        active = {s.service_id for s in feed.services if s.active_on(weekday)}
        by_trip = feed.stop_times_by_trip()

        groups: dict[tuple[int, ...], list[tuple[str, list[int], list[int]]]] = {}
        for trip in feed.trips:
            if trip.service_id not in active:
                continue
            sts = by_trip.get(trip.trip_id, [])
            if len(sts) < 2:
                continue
            key = tuple(self.stop_index[st.stop_id] for st in sts)
            dep = [st.departure for st in sts]
            arr = [st.arrival for st in sts]
            groups.setdefault(key, []).append((trip.trip_id, dep, arr))
            if wrap_overnight:
                groups[key].append((trip.trip_id + "+1d", [d + DAY_SECONDS for d in dep],
                                    [a + DAY_SECONDS for a in arr]))

        self.patterns: list[Pattern] = []
        for key in sorted(groups):
            rows = sorted(groups[key])
            self.patterns.append(Pattern(
                stops=np.array(key, dtype=np.int64),
                trip_ids=[r[0] for r in rows],
                dep=np.array([r[1] for r in rows], dtype=np.int64),
                arr=np.array([r[2] for r in rows], dtype=np.int64),
            ))
        self.patterns_at: list[list[int]] = [[] for _ in self.stop_ids]
        for p, pat in enumerate(self.patterns):
            for s in sorted(set(pat.stops.tolist())):
                self.patterns_at[s].append(p)

    @property
    def n_stops(self) -> int:
        return len(self.stop_ids)

    def indexed(self, links: Iterable[AccessLink]) -> dict[int, int]:
        """Stop-index -> walk seconds, keeping the shortest walk per stop."""
        out: dict[int, int] = {}
        for link in links:
            s = self.stop_index.get(link.stop_id)
            if s is not None and link.walk_s < out.get(s, INF):
                out[s] = link.walk_s
        return out


# -- search -------------------------------------------------------------------

@dataclass(frozen=True)
class Leg:
    trip_id: str
    board_stop: str
    alight_stop: str
    depart: int
    arrive: int


@dataclass(frozen=True)
class Journey:
    access_s: int
    in_vehicle_s: int
    egress_s: int
    transfers: int
    depart_time: int
    legs: tuple[Leg, ...] = ()

    @property
    def total_s(self) -> int:
        return self.access_s + self.in_vehicle_s + self.egress_s

    @property
    def board_time(self) -> int | None:
        return self.legs[0].depart if self.legs else None


@dataclass
class SearchResult:
    """Per-round labels of one origin/departure search."""

    timetable: Timetable
    depart_time: int
    labels: list[np.ndarray]
    # round -> stop -> (pattern, trip row, board position, alight position)
    parents: list[dict[int, tuple[int, int, int, int]]]

    def _legs(self, k: int, s: int) -> tuple[Leg, ...]:
        tt = self.timetable
        legs = []
        while k > 0:
            if s not in self.parents[k]:
                k -= 1
                continue
            p, r, i, j = self.parents[k][s]
            pat = tt.patterns[p]
            b = int(pat.stops[i])
            legs.append(Leg(pat.trip_ids[r], tt.stop_ids[b], tt.stop_ids[s],
                            int(pat.dep[r, i]), int(pat.arr[r, j])))
            s, k = b, k - 1
        return tuple(reversed(legs))

    def journey_to(self, egress: Mapping[int, int]) -> Journey | None:
        """Best journey to a destination given its egress links (stop index -> walk s)."""
        t0 = self.depart_time
        best_total = INF
        cands = []
        for k, lab in enumerate(self.labels):
            for s, walk in egress.items():
                if lab[s] >= INF:
                    continue
                if k > 0 and s not in self.parents[k]:
                    continue
                total = int(lab[s]) + walk - t0
                if total < best_total:
                    best_total = total
                    cands = [(k, s, walk)]
                elif total == best_total:
                    cands.append((k, s, walk))
        if not cands:
            return None

        def key(c):
            k, s, _ = c
            legs = self._legs(k, s)
            return (max(k - 1, 0), int(self.labels[k][s]), tuple(l.trip_id for l in legs)), legs

        scored = sorted((key(c) + (c,) for c in cands), key=lambda x: x[0])
        _, legs, (k, s, walk) = scored[0]
        arrive = int(self.labels[k][s])
        if legs:
            access = legs[0].depart - t0
            ivt = arrive - legs[0].depart
        else:
            access, ivt = arrive - t0, 0
        return Journey(access, ivt, walk, max(len(legs) - 1, 0), t0, legs)


def search(tt: Timetable, origin: Mapping[int, int], depart_time: int,
           max_transfers: int = MAX_TRANSFERS) -> SearchResult:
    """Earliest arrival at every stop with up to ``max_transfers + 1`` vehicles."""
    n = tt.n_stops
    tau = np.full(n, INF, dtype=np.int64)
    for s, walk in origin.items():
        tau[s] = min(tau[s], depart_time + walk)
    labels = [tau]
    parents: list[dict] = [{}]
    marked = sorted(origin)
    for _ in range(max_transfers + 1):
        if not marked:
            break
        prev = labels[-1]
        cur = prev.copy()
        par: dict[int, tuple[int, int, int, int]] = {}
        todo = sorted({p for s in marked for p in tt.patterns_at[s]})
        for p in todo:
            pat = tt.patterns[p]
            can_board = pat.dep >= prev[pat.stops][None, :]
            # a vehicle can only be ridden to positions after some boarding point
            seen = np.logical_or.accumulate(can_board, axis=1)
            ridden = np.zeros_like(seen)
            ridden[:, 1:] = seen[:, :-1]
            arr = np.where(ridden, pat.arr, INF)
            rows = arr.argmin(axis=0)
            cand = arr[rows, np.arange(arr.shape[1])]
            for j in np.flatnonzero(cand < cur[pat.stops]):
                s = int(pat.stops[j])
                if cand[j] < cur[s]:
                    r = int(rows[j])
                    i = int(np.argmax(can_board[r, :j]))
                    cur[s] = cand[j]
                    par[s] = (p, r, i, int(j))
        labels.append(cur)
        parents.append(par)
        marked = sorted(par)
    return SearchResult(tt, depart_time, labels, parents)


def plan_journey(tt: Timetable, origin_links: Iterable[AccessLink], destination_links: Iterable[AccessLink],
                 depart_time: int, max_transfers: int = MAX_TRANSFERS) -> Journey | None:
    """Minimum door-to-door time journey, or ``None`` when unreachable.

    Ties: fewer transfers, then earlier arrival at the final stop, then the
    lexicographically smallest trip-id sequence.
    """
    origin = tt.indexed(origin_links)
    dest = tt.indexed(destination_links)
    if not origin or not dest:
        return None
    return search(tt, origin, depart_time, max_transfers).journey_to(dest)


# -- skims --------------------------------------------------------------------

@dataclass
class SkimMatrix:
    """Period-mean journey components (seconds) between zone centroids."""

    period: str
    zone_ids: tuple[str, ...]
    access: np.ndarray
    egress: np.ndarray
    in_vehicle: np.ndarray
    transfers: np.ndarray
    reachable: np.ndarray
    samples: np.ndarray = field(default=None)

    @property
    def total(self) -> np.ndarray:
        return self.access + self.in_vehicle + self.egress

    def equals(self, other: "SkimMatrix") -> bool:
        """Bit-for-bit equality (NaNs in unreachable cells compare equal)."""
        return (self.period == other.period and self.zone_ids == other.zone_ids
                and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True)
                        for a in ("access", "egress", "in_vehicle", "transfers"))
                and np.array_equal(self.reachable, other.reachable))


def sample_times(period: ServiceInterval, step_min: float = SAMPLE_STEP_MIN) -> list[int]:
    step = int(round(step_min * 60))
    if step <= 0:
        raise ValueError("sampling step must be positive")
    return list(range(period.start, period.end, step))


def _skim_row(args):
    tt, origin, dests, times, max_transfers = args
    n = len(dests)
    sums = np.zeros((4, n))
    counts = np.zeros(n, dtype=np.int64)
    if origin:
        for t0 in times:
            res = search(tt, origin, t0, max_transfers)
            for d, egress in enumerate(dests):
                if not egress:
                    continue
                j = res.journey_to(egress)
                if j is None:
                    continue
                sums[:, d] += (j.access_s, j.egress_s, j.in_vehicle_s, j.transfers)
                counts[d] += 1
    return sums, counts


def compute_skim(tt: Timetable, zones: Sequence[Zone], links: Mapping[str, Iterable[AccessLink]],
                 period: ServiceInterval, step_min: float = SAMPLE_STEP_MIN,
                 max_transfers: int = MAX_TRANSFERS, workers: int = 1) -> SkimMatrix:
    """Average journey components over departures sampled every ``step_min`` in ``period``.

    Origin rows are independent, so ``workers > 1`` farms them out to a
    process pool; rows are gathered in zone order and the result is the same
    as a serial run.
    """
    if not zones:
        raise ValueError("empty zone set")
    times = sample_times(period, step_min)
    indexed = [tt.indexed(links.get(z.zone_id, ())) for z in zones]
    jobs = [(tt, indexed[o], indexed, times, max_transfers) for o in range(len(zones))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_skim_row, jobs))
    else:
        rows = [_skim_row(job) for job in jobs]

    n = len(zones)
    sums = np.stack([r[0] for r in rows], axis=1)      # (4, n, n)
    counts = np.stack([r[1] for r in rows], axis=0)    # (n, n)
    reachable = counts > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(reachable[None], sums / np.maximum(counts, 1)[None], np.nan)
    diag = np.arange(n)
    means[:, diag, diag] = 0.0
    reachable[diag, diag] = True
    counts[diag, diag] = len(times)
    return SkimMatrix(period.label, tuple(z.zone_id for z in zones), means[0], means[1], means[2],
                      means[3], reachable, counts)


# -- deltas -------------------------------------------------------------------

BOTH, NEW, EXCLUDED, LOST = 0, 1, 2, 3
STATUS_NAMES = {BOTH: "both", NEW: "newly_connected", EXCLUDED: "excluded", LOST: "lost"}


@dataclass
class DeltaMatrix:
    """alt - base journey components in minutes, with a per-OD status code."""

    period: str
    zone_ids: tuple[str, ...]
    d_access: np.ndarray
    d_egress: np.ndarray
    d_in_vehicle: np.ndarray
    status: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.d_access + self.d_egress + self.d_in_vehicle

    @property
    def usable(self) -> np.ndarray:
        return (self.status == BOTH) | (self.status == NEW)


def delta_skim(base: SkimMatrix, alt: SkimMatrix,
               ceiling_min: float = NEW_CONNECTION_CEILING_MIN) -> DeltaMatrix:
    """Component-wise change from ``base`` to ``alt``, converted to minutes.

    An OD that only ``alt`` can serve is charged against a notional base
    journey of ``ceiling_min`` minutes: access and egress deltas are zero and
    the in-vehicle delta is ``min(0, alt_total - ceiling)``.
    """
    if base.zone_ids != alt.zone_ids:
        raise ValueError("zone sets differ between base and alternative skims")
    if base.period != alt.period:
        raise ValueError(f"period mismatch: {base.period!r} vs {alt.period!r}")
    status = np.full(base.reachable.shape, EXCLUDED, dtype=np.int8)
    status[base.reachable & alt.reachable] = BOTH
    status[~base.reachable & alt.reachable] = NEW
    status[base.reachable & ~alt.reachable] = LOST

    both = status == BOTH
    new = status == NEW
    d = {}
    for name in ("access", "egress", "in_vehicle"):
        arr = np.full(base.reachable.shape, np.nan)
        arr[both] = (getattr(alt, name)[both] - getattr(base, name)[both]) / 60.0
        arr[new] = 0.0
        d[name] = arr
    alt_total = alt.total[new] / 60.0
    d["in_vehicle"][new] = np.minimum(0.0, alt_total - ceiling_min)
    return DeltaMatrix(base.period, base.zone_ids, d["access"], d["egress"], d["in_vehicle"], status)


# -- persistence --------------------------------------------------------------

SKIM_CSV_HEADER = ("period", "origin", "destination", "access_s", "egress_s", "ivt_s", "transfers", "reachable")


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_skim_csv(skims: Iterable[SkimMatrix], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SKIM_CSV_HEADER)
        for sk in skims:
            for o, oid in enumerate(sk.zone_ids):
                for d, did in enumerate(sk.zone_ids):
                    w.writerow((sk.period, oid, did, _fmt(sk.access[o, d]), _fmt(sk.egress[o, d]),
                                _fmt(sk.in_vehicle[o, d]), _fmt(sk.transfers[o, d]), int(sk.reachable[o, d])))


def read_skim_csv(path: str | Path) -> list[SkimMatrix]:
    rows_by_period: dict[str, list[dict[str, str]]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows_by_period.setdefault(row["period"], []).append(row)
    out = []
    for period, rows in rows_by_period.items():
        ids = list(dict.fromkeys(r["origin"] for r in rows))
        index = {z: i for i, z in enumerate(ids)}
        n = len(ids)
        arrs = {k: np.full((n, n), np.nan) for k in ("access_s", "egress_s", "ivt_s", "transfers")}
        reach = np.zeros((n, n), dtype=bool)
        for r in rows:
            o, d = index[r["origin"]], index[r["destination"]]
            for k, a in arrs.items():
                a[o, d] = float(r[k]) if r[k] else np.nan
            reach[o, d] = r["reachable"] == "1"
        out.append(SkimMatrix(period, tuple(ids), arrs["access_s"], arrs["egress_s"], arrs["ivt_s"],
                              arrs["transfers"], reach))
    return out


DELTA_CSV_HEADER = ("period", "origin", "destination", "d_access_min", "d_egress_min", "d_ivt_min",
                    "d_total_min", "status")


def write_delta_csv(deltas: Iterable[DeltaMatrix], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DELTA_CSV_HEADER)
        for dm in deltas:
            tot = dm.total
            for o, oid in enumerate(dm.zone_ids):
                for d, did in enumerate(dm.zone_ids):
                    w.writerow((dm.period, oid, did, _fmt(dm.d_access[o, d]), _fmt(dm.d_egress[o, d]),
                                _fmt(dm.d_in_vehicle[o, d]), _fmt(tot[o, d]), STATUS_NAMES[int(dm.status[o, d])]))


# Binary cache layout (little endian):
#   magic b"TSKM" | u16 version | u32 n_zones | u32 len(period) | u32 len(zone blob)
#   period utf-8 | zone ids utf-8 joined by "\n"
#   f64[n*n] access | f64[n*n] egress | f64[n*n] in_vehicle | f64[n*n] transfers | u8[n*n] reachable
SKIM_MAGIC = b"TSKM"
SKIM_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def skim_to_bytes(sk: SkimMatrix) -> bytes:
    period = sk.period.encode("utf-8")
    zones = "\n".join(sk.zone_ids).encode("utf-8")
    parts = [_HEADER.pack(SKIM_MAGIC, SKIM_VERSION, len(sk.zone_ids), len(period), len(zones)), period, zones]
    for a in (sk.access, sk.egress, sk.in_vehicle, sk.transfers):
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(sk.reachable, dtype=np.uint8).tobytes())
    return b"".join(parts)


def skim_from_bytes(blob: bytes) -> SkimMatrix:
    magic, version, n, lp, lz = _HEADER.unpack_from(blob, 0)
    if magic != SKIM_MAGIC:
        raise ValueError("not a skim cache file")
    if version != SKIM_VERSION:
        raise ValueError(f"unsupported skim cache version {version}")
    pos = _HEADER.size
    period = blob[pos:pos + lp].decode("utf-8")
    pos += lp
    zones = tuple(blob[pos:pos + lz].decode("utf-8").split("\n")) if n else ()
    pos += lz
    arrays = []
    for _ in range(4):
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n * n, offset=pos).reshape(n, n).astype(float))
        pos += 8 * n * n
    reach = np.frombuffer(blob, dtype=np.uint8, count=n * n, offset=pos).reshape(n, n).astype(bool)
    if pos + n * n != len(blob):
        raise ValueError("truncated or oversized skim cache")
    return SkimMatrix(period, zones, *arrays, reach)


def worker_count(default: int = 1) -> int:
    """Worker cap from ``TRANSIT_IMPACT_WORKERS`` (at least 1)."""
    raw = os.environ.get("TRANSIT_IMPACT_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer TRANSIT_IMPACT_WORKERS=%r", raw)
        return default
