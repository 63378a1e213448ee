import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_network
from transit_impact.gtfs import (Feed, FeedError, RouteSpec, RouteStop, ServicePlan, build_synthetic_schedule,
                                 format_time, interstop_times, load_line_config, merge_feeds, parse_feed,
                                 parse_time, write_feed)

MINIMAL = {
    "stops.txt": "stop_id,stop_name,stop_lat,stop_lon\na,A,40.0,-73.0\nb,B,40.01,-73.0\n",
    "routes.txt": "route_id,route_short_name,route_type\nr,R,3\n",
    "trips.txt": "route_id,service_id,trip_id,direction_id\nr,wk,t1,0\n",
    "stop_times.txt": "trip_id,arrival_time,departure_time,stop_id,stop_sequence\n"
                      "t1,08:00:00,08:00:00,a,1\nt1,25:10:00,25:10:00,b,2\n",
    "calendar.txt": "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\n"
                    "wk,1,1,1,1,1,0,0,20240101,20241231\n",
}


def write_tables(path, tables):
    path.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        (path / name).write_text(text)
    return path


def test_minimal_feed(tmp_path):
    feed = parse_feed(write_tables(tmp_path, MINIMAL))
    assert len(feed.stops) == 2 and len(feed.trips) == 1 and len(feed.stop_times) == 2


def test_time_past_midnight(tmp_path):
    feed = parse_feed(write_tables(tmp_path, MINIMAL))
    assert feed.stop_times[-1].arrival == 25 * 3600 + 10 * 60 == 90600
    assert format_time(90600) == "25:10:00"


def test_dangling_trip_reference(tmp_path):
    tables = dict(MINIMAL)
    tables["stop_times.txt"] += "ghost,09:00:00,09:00:00,a,1\n"
    with pytest.raises(FeedError, match="unknown trip"):
        parse_feed(write_tables(tmp_path, tables))


def test_missing_file(tmp_path):
    tables = dict(MINIMAL)
    del tables["calendar.txt"]
    with pytest.raises(FeedError) as err:
        parse_feed(write_tables(tmp_path, tables))
    assert err.value.file == "calendar.txt"


def test_malformed_row_reports_location(tmp_path):
    tables = dict(MINIMAL)
    tables["stops.txt"] = "stop_id,stop_name,stop_lat,stop_lon\na,A,40.0,-73.0\nb,B,north,-73.0\n"
    with pytest.raises(FeedError) as err:
        parse_feed(write_tables(tmp_path, tables))
    assert (err.value.file, err.value.line, err.value.column) == ("stops.txt", 3, "stop_lat")


def test_backwards_time_rejected(tmp_path):
    tables = dict(MINIMAL)
    tables["stop_times.txt"] = ("trip_id,arrival_time,departure_time,stop_id,stop_sequence\n"
                                "t1,08:00:00,08:00:00,a,1\nt1,07:59:00,07:59:00,b,2\n")
    with pytest.raises(FeedError, match="back in time"):
        parse_feed(write_tables(tmp_path, tables))


@pytest.mark.parametrize("text,seconds", [("00:00:00", 0), ("06:39:00", 23940), ("25:10:00", 90600),
                                          ("23:00", 82800)])
def test_parse_time(text, seconds):
    assert parse_time(text) == seconds


@given(st.integers(0, 48 * 3600))
def test_time_round_trip(seconds):
    assert parse_time(format_time(seconds)) == seconds


def test_round_trip_minimal(tmp_path):
    feed = parse_feed(write_tables(tmp_path / "in", MINIMAL))
    assert parse_feed(write_feed(feed, tmp_path / "out")) == feed


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_random(tmp_path, seed):
    feed = random_network(np.random.default_rng(seed))
    assert parse_feed(write_feed(feed, tmp_path)) == feed


def test_empty_feed_writes_headers_only(tmp_path):
    write_feed(Feed(), tmp_path)
    for name in ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt", "calendar.txt"):
        assert len((tmp_path / name).read_text().splitlines()) == 1
    assert parse_feed(tmp_path) == Feed()


# -- synthetic schedule --------------------------------------------------------

def three_stop_spec():
    stops = (RouteStop("a", "a", 40.0, -73.0, 0.0), RouteStop("b", "b", 40.05, -73.0, 7.0),
             RouteStop("c", "c", 40.1, -73.0, 14.0))
    return RouteSpec(stops, 39.0, 14.0)


def test_interstop_times_halves():
    assert interstop_times(three_stop_spec()) == [1170, 1170]


def test_interstop_single_segment():
    stops = (RouteStop("a", "a", 40.0, -73.0, 0.0), RouteStop("b", "b", 40.1, -73.0, 14.0))
    assert interstop_times(RouteSpec(stops, 39.0, 14.0)) == [39 * 60]


def test_average_speed():
    assert three_stop_spec().speed_mph == pytest.approx(14 / (39 / 60))
    assert round(three_stop_spec().speed_mph, 2) == 21.54


def test_zero_length_segment_rejected():
    stops = (RouteStop("a", "a", 40.0, -73.0, 0.0), RouteStop("b", "b", 40.0, -73.0, 0.0),
             RouteStop("c", "c", 40.1, -73.0, 14.0))
    with pytest.raises(ValueError, match="zero-length"):
        RouteSpec(stops, 39.0, 14.0)


@given(st.lists(st.floats(0.05, 5.0), min_size=1, max_size=20), st.floats(1.0, 120.0))
def test_interstop_sum_exact(gaps, minutes):
    miles = np.concatenate([[0.0], np.cumsum(gaps)])
    stops = tuple(RouteStop(f"s{i}", "", 40.0, -73.0, float(m)) for i, m in enumerate(miles))
    spec = RouteSpec(stops, minutes, float(miles[-1]))
    try:
        segs = interstop_times(spec)
    except ValueError:
        return  # run time too short to give every segment a positive second
    assert sum(segs) == round(minutes * 60)
    assert abs(segs[-1] - gaps[-1] * round(minutes * 60) / miles[-1]) <= len(segs) / 2 + 0.5


def count_departures(start, end, headway):
    """Enumerate departures one at a time, independent of ``range`` stepping."""
    n, t = 0, start
    while t < end:
        n += 1
        t += headway
    return n


def test_table3_trip_counts(line_spec, default_plan):
    feed = build_synthetic_schedule(line_spec, default_plan)
    per_interval = [count_departures(iv.start, iv.end, iv.headway_s) for iv in default_plan.intervals]
    assert per_interval == [36, 42, 48, 18, 21]
    for d in (0, 1):
        assert sum(t.direction == d for t in feed.trips) == 165
    assert len(feed.trips) == 330 and len(feed.stops) == 17


def test_single_interval_departures(line_spec):
    plan = ServicePlan.from_clock([("am", "06:00", "07:00", 30)])
    feed = build_synthetic_schedule(line_spec, plan)
    firsts = sorted(sts[0].departure for sts in feed.stop_times_by_trip().values() if sts[0].stop_id == "L00")
    assert firsts == [6 * 3600, 6 * 3600 + 1800]


def test_departure_exactly_at_interval_end_belongs_to_next():
    plan = ServicePlan.from_clock([("a", "06:00", "06:10", 5), ("b", "06:10", "06:20", 5)])
    assert plan.intervals[0].departures() == [21600, 21900]
    assert plan.intervals[1].departures() == [22200, 22500]


def test_peak_trip_runs_39_minutes(line_spec, default_plan):
    feed = build_synthetic_schedule(line_spec, default_plan)
    sts = feed.stop_times_by_trip()["LINE_0_0000"]
    assert format_time(sts[0].departure) == "06:00:00"
    assert format_time(sts[-1].arrival) == "06:39:00"


def test_trip_times_follow_segments_and_mirror(line_spec, default_plan):
    feed = build_synthetic_schedule(line_spec, default_plan)
    segs = interstop_times(line_spec)
    by_trip = feed.stop_times_by_trip()
    for trip in feed.trips:
        sts = by_trip[trip.trip_id]
        diffs = [b.arrival - a.departure for a, b in zip(sts, sts[1:])]
        assert diffs == (segs if trip.direction == 0 else segs[::-1])
        assert all(s.arrival == s.departure for s in sts)


def test_overnight_interval_unrolls(default_plan):
    night = default_plan.interval("early_morning")
    assert (night.start, night.end) == (23 * 3600, 30 * 3600)
    assert default_plan.period_of(parse_time("02:00")) == "early_morning"
    assert default_plan.period_of(parse_time("07:30")) == "morning_peak"


def test_overlapping_plan_rejected():
    with pytest.raises(ValueError, match="overlap"):
        ServicePlan.from_clock([("a", "06:00", "09:00", 5), ("b", "08:00", "10:00", 5)])


def test_line_config_yaml(tmp_path):
    (tmp_path / "line.yaml").write_text(
        "route:\n  id: X\n  run_time_min: 39\n  length_mi: 14\n  stops:\n"
        "    - {id: a, lat: 40.0, lon: -73.0, mile: 0}\n    - {id: b, lat: 40.1, lon: -73.0, mile: 14}\n"
        "plan:\n  - {label: am, start: '06:00', end: '09:00', headway_min: 5}\n")
    spec, plan = load_line_config(tmp_path / "line.yaml")
    assert spec.route_id == "X" and plan.labels == ["am"]


# -- merging ------------------------------------------------------------------

def test_merge_cardinality():
    rng = np.random.default_rng(1)
    base = random_network(rng, n_stops=6, n_routes=2, n_trips=10)
    overlay = random_network(rng, n_stops=6, n_routes=1, n_trips=4, prefix="x")
    merged = merge_feeds(base, overlay)
    assert len(merged.trips) == 14


def test_merge_empty_is_identity():
    base = random_network(np.random.default_rng(2))
    assert merge_feeds(base, Feed()) == base


def test_merge_keeps_base_and_renames_collisions():
    rng = np.random.default_rng(3)
    base = random_network(rng, n_stops=5, n_routes=2, n_trips=6)
    overlay = random_network(rng, n_stops=5, n_routes=2, n_trips=6)   # same ids, different content
    merged = merge_feeds(base, overlay)
    assert set(base.trips) <= set(merged.trips)
    assert set(base.stop_times) <= set(merged.stop_times)
    assert len(merged.trips) == 12
    assert {t.trip_id for t in merged.trips} - {t.trip_id for t in base.trips} == {
        "ovl_" + t.trip_id for t in overlay.trips}


def test_merge_shares_identical_stops(line_spec, default_plan):
    line = build_synthetic_schedule(line_spec, default_plan)
    merged = merge_feeds(line, line)
    assert len(merged.stops) == 17 and len(merged.trips) == 660


def test_merge_unresolvable_collision():
    base = random_network(np.random.default_rng(4), n_trips=3)
    taken = Feed(base.stops, base.routes, base.trips + tuple(
        t.__class__("ovl_" + t.trip_id, t.route_id, t.service_id) for t in base.trips),
        base.stop_times, base.services)
    with pytest.raises(FeedError, match="collision"):
        merge_feeds(taken, base)


def test_merge_write_round_trip(tmp_path, line_spec, default_plan):
    base = random_network(np.random.default_rng(5))
    merged = merge_feeds(base, build_synthetic_schedule(line_spec, default_plan))
    again = parse_feed(write_feed(merged, tmp_path))
    assert again == merged
    for a, b in zip(again.stop_times, merged.stop_times):
        assert (a.trip_id, a.stop_sequence, a.arrival, a.departure, a.stop_id) == \
               (b.trip_id, b.stop_sequence, b.arrival, b.departure, b.stop_id)


def test_feed_is_hashable_and_immutable():
    feed = random_network(np.random.default_rng(6))
    with pytest.raises(AttributeError):
        feed.stops = ()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_feed_round_trip_property(tmp_path_factory, seed):
    feed = random_network(np.random.default_rng(seed))
    path = tmp_path_factory.mktemp("rt")
    assert parse_feed(write_feed(feed, path)) == feed
