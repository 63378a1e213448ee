import csv
import json
import math
import time
from pathlib import Path

import pytest
import yaml

from transit_impact.cli import main
from transit_impact.demand import MODES
from transit_impact.gtfs import DEFAULT_PLAN, ServicePlan
from transit_impact.pipeline import (GROUP_RESULT_HEADER, SCOPES, InputError, ScenarioConfig, ingest_groups,
                                     output_lock, run_scenario)
from transit_impact.toy import write_toy_city

REPORTS = ("group_results.csv", "welfare.csv", "time_savings.csv", "ridership.csv", "mode_shift.csv",
           "consumer_surplus.csv", "equity.csv", "equity.json", "by_origin.geojson", "by_destination.geojson")


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    cfg = ScenarioConfig.load(write_toy_city(root))
    t0 = time.perf_counter()
    result = run_scenario(cfg)
    return cfg, result, time.perf_counter() - t0


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def recompute(rows):
    """Scope totals rebuilt from group_results.csv alone."""
    out = {}
    for scope in SCOPES:
        keep = {"all": lambda r: True, "low_income": lambda r: r["segment"] == "LowIncome",
                "corridor": lambda r: r["corridor"] == "1", "non_corridor": lambda r: r["corridor"] == "0"}[scope]
        rs = [r for r in rows if keep(r)]
        ben = [r for r in rs if r["benefiting"] == "1"]
        trips_ben = math.fsum(float(r["trips"]) for r in ben)
        wel = [r for r in rs if r["delta_cs_usd"] != ""]
        cs = math.fsum(float(r["delta_cs_usd"]) * float(r["trips"]) for r in wel)
        out[scope] = {
            "trips": math.fsum(float(r["trips"]) for r in rs),
            "benefiting_trips": trips_ben,
            "time_saving_min_per_trip": (math.fsum(-float(r["d_total_min"]) * float(r["trips"]) for r in ben)
                                         / trips_ben if trips_ben else 0.0),
            "new_line_riders": math.fsum(float(r["new_line_riders"]) for r in rs),
            "transit_increase": math.fsum(float(r["transit_increase"]) for r in rs),
            "from_private_vehicle": math.fsum(float(r["from_private_vehicle"]) for r in rs),
            "ghg_grams": math.fsum(float(r["ghg_grams"]) for r in rs),
            "cs_gain_usd": cs,
        }
    return out


def test_toy_runs_fast(toy_run):
    _, result, seconds = toy_run
    assert seconds < 10
    assert len(result.zones) == 9 and len(result.records) == 30
    assert len(result.base_skims) == len(result.alt_skims) == len(result.deltas) == 5


def test_toy_line_attracts_riders(toy_run):
    _, result, _ = toy_run
    agg = result.aggregates["all"]
    assert agg["new_line_riders"] > 0 and agg["benefiting_trips"] > 0
    assert agg["time_saving_min_per_trip"] > 0 and agg["cs_gain_usd"] > 0
    assert agg["transit_increase"] == pytest.approx(
        math.fsum(v for k, v in agg.items() if k.startswith("from_")), rel=1e-9)


def test_reports_written_with_schema(toy_run):
    cfg, _, _ = toy_run
    out = Path(cfg.output_dir)
    for name in REPORTS + ("skims_base.csv", "skims_alt.csv", "deltas.csv", "manifest.json"):
        assert (out / name).is_file(), name
    assert (out / "gtfs_line" / "stop_times.txt").is_file()
    assert not (out / ".lock").exists()
    with open(out / "group_results.csv", encoding="utf-8") as fh:
        assert tuple(next(csv.reader(fh))) == GROUP_RESULT_HEADER
    assert "nan" not in (out / "group_results.csv").read_text()


def test_aggregates_match_group_csv(toy_run):
    cfg, result, _ = toy_run
    again = recompute(read_rows(Path(cfg.output_dir) / "group_results.csv"))
    for scope, vals in again.items():
        for key, v in vals.items():
            assert v == pytest.approx(result.aggregates[scope][key], rel=1e-6, abs=1e-9), (scope, key)


def test_geojson_layers(toy_run):
    cfg, _, _ = toy_run
    for side in ("origin", "destination"):
        doc = json.loads((Path(cfg.output_dir) / f"by_{side}.geojson").read_text())
        assert doc["type"] == "FeatureCollection" and len(doc["features"]) == 9
        assert {f["geometry"]["type"] for f in doc["features"]} == {"Point"}


def test_equity_json(toy_run):
    cfg, result, _ = toy_run
    doc = json.loads((Path(cfg.output_dir) / "equity.json").read_text())
    assert set(doc["thresholds"]) == {"10pct", "50pct"}
    for scope in doc["csii"].values():
        for v in scope.values():
            assert 0 <= v["pre"] <= 1 and 0 <= v["post"] <= 1


def test_outputs_byte_identical(tmp_path):
    trees = []
    for name in ("a", "b"):
        cfg = ScenarioConfig.load(write_toy_city(tmp_path / name))
        run_scenario(cfg)
        out = Path(cfg.output_dir)
        trees.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*"))
                      if p.is_file() and p.name != "manifest.json"})
    assert trees[0].keys() == trees[1].keys()
    for rel in trees[0]:
        assert trees[0][rel] == trees[1][rel], rel


def test_cached_rerun_identical(tmp_path):
    cfg = ScenarioConfig.load(write_toy_city(tmp_path))
    run_scenario(cfg)
    first = (Path(cfg.output_dir) / "group_results.csv").read_bytes()
    run_scenario(cfg)
    assert (Path(cfg.output_dir) / "group_results.csv").read_bytes() == first


def test_null_scenario(tmp_path):
    cfg = ScenarioConfig.load(write_toy_city(tmp_path, line=False))
    result = run_scenario(cfg)
    for dm in result.deltas:
        assert (dm.total[dm.usable] == 0).all()
    agg = result.aggregates["all"]
    assert agg["new_line_riders"] == 0 and agg["cs_gain_usd"] == 0 and agg["ghg_grams"] == 0
    eq = result.equity
    assert eq.csdi_pre == eq.csdi_post
    assert eq.csii_pre == eq.csii_post and eq.rate_pre == eq.rate_post


def test_empty_groups_give_header_only_outputs(tmp_path):
    path = write_toy_city(tmp_path)
    groups = tmp_path / "groups.csv"
    groups.write_text(groups.read_text().splitlines()[0] + "\n")
    cfg = ScenarioConfig.load(path)
    result = run_scenario(cfg)
    assert result.records == [] and result.equity is None
    assert len(read_rows(Path(cfg.output_dir) / "group_results.csv")) == 0
    assert json.loads((Path(cfg.output_dir) / "equity.json").read_text()) == {}


def test_lock_rejects_concurrent_run(tmp_path):
    with output_lock(tmp_path):
        with pytest.raises(InputError, match="locked"):
            with output_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()


def test_unknown_config_key(tmp_path):
    path = write_toy_city(tmp_path)
    doc = yaml.safe_load(path.read_text())
    doc["colour"] = "blue"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(InputError, match="colour"):
        ScenarioConfig.load(path)


def test_agenda_tally(tmp_path):
    agenda = tmp_path / "agenda.csv"
    agenda.write_text("origin_id,destination_id,segment,mode,departure_time,auto_miles\n"
                      "Z00,Z01,LowIncome,transit,07:30:00,\n"
                      "Z00,Z01,LowIncome,transit,12:00:00,\n"
                      "Z00,Z01,LowIncome,private_vehicle,17:00:00,3.0\n"
                      "Z00,Z01,LowIncome,walking,07:45:00,\n")
    (g,) = ingest_groups(agenda, ServicePlan.from_clock(DEFAULT_PLAN))
    assert g.trips == 4
    assert g.shares[MODES.index("transit")] == 0.5
    assert g.shares[MODES.index("private_vehicle")] == 0.25 and g.shares[MODES.index("walking")] == 0.25
    assert g.period_weights["morning_peak"] == 0.5 and g.avg_auto_miles == 3.0
    assert g.fare_usd == 2.90


def test_cli_demo_and_run(tmp_path, capsys):
    assert main(["demo", str(tmp_path / "city")]) == 0
    cfg = capsys.readouterr().out.strip()
    assert main(["evaluate", cfg, "--output-dir", str(tmp_path / "out")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["new_line_riders"] > 0
    assert main(["equity", cfg, "--output-dir", str(tmp_path / "out")]) == 0
    assert "csdi_pre" in capsys.readouterr().out


def test_cli_synth(tmp_path, capsys):
    write_toy_city(tmp_path)
    rc = main(["synth-gtfs", str(tmp_path / "line.yaml"), "--base", str(tmp_path / "base_gtfs"),
               "--out", str(tmp_path / "g")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["trips_per_direction"] == {"0": 165, "1": 165}
    assert (tmp_path / "g" / "merged" / "trips.txt").is_file()


def test_cli_input_error_exit_1(tmp_path):
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1


def test_cli_stage_error_exit_2(tmp_path):
    path = write_toy_city(tmp_path)
    assert main(["run", str(path)]) == 0
    for blob in (tmp_path / "out" / "cache").glob("*.bin"):
        blob.write_bytes(b"garbage")
    assert main(["run", str(path)]) == 2
