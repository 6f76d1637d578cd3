import json

import pytest
import yaml

from tlta.cli import main
from tlta.config import dump_scenario, load_scenario, parse_scenario, shipped_scenarios
from tlta.errors import ConfigError

SHIPPED = shipped_scenarios()


def journey_doc():
    return load_scenario("journey").model_dump(mode="json")


# -- config --------------------------------------------------------------------------

def test_shipped_scenarios_present():
    assert {"journey", "judder", "judder_control", "bottleneck", "bottleneck_spread", "shielded",
            "tampered_lte", "nonce_replay", "stadium", "tradefair"} <= set(SHIPPED)


@pytest.mark.parametrize("name", SHIPPED)
def test_round_trip(name):
    cfg = load_scenario(name)
    assert parse_scenario(yaml.safe_load(dump_scenario(cfg)), name) == cfg


def test_malformed_polygon_cites_location():
    doc = journey_doc()
    doc["service"]["pz"] = [[0, 0], [1, 1], [2, 2]]
    with pytest.raises(ConfigError, match=r"service\.pz"):
        parse_scenario(doc, "bad")


def test_unknown_key_rejected():
    doc = journey_doc()
    doc["grid"]["radius"] = 5
    with pytest.raises(ConfigError, match="grid"):
        parse_scenario(doc, "bad")


def test_policy_must_cover_every_function():
    doc = journey_doc()
    del doc["service"]["policies"]["P_pz"]["functions"]["camera"]
    with pytest.raises(ConfigError, match="no rule for functions"):
        parse_scenario(doc, "bad")


def test_attack_needs_params():
    doc = journey_doc()
    doc["attacks"] = [{"kind": "ShieldedCrossing", "target": "mt-1", "params": {"start": 1}}]
    with pytest.raises(ConfigError, match="end"):
        parse_scenario(doc, "bad")


def test_attack_unknown_target():
    doc = journey_doc()
    doc["attacks"] = [{"kind": "TamperedLte", "target": "mt-9"}]
    with pytest.raises(ConfigError, match="mt-9"):
        parse_scenario(doc, "bad")


def test_bad_digest():
    doc = journey_doc()
    doc["components"][0]["digest"] = "zz"
    with pytest.raises(ConfigError, match="components"):
        parse_scenario(doc, "bad")


def test_fleet_members():
    cfg = load_scenario("bottleneck_spread")
    members = cfg.all_mts()
    assert len(members) == 60
    assert len({m.id for m in members}) == 60


def test_missing_scenario():
    with pytest.raises(ConfigError):
        load_scenario("no-such-scenario")


# -- cli: run ---------------------------------------------------------------------------

def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "--scenario", "journey", "--seed", "3", "--out", str(tmp_path)]) == 0
    out = tmp_path / "journey-s3"
    assert (out / "events.jsonl").exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["registrations"] == 1
    assert "seed: 3 (from --seed)" in (out / "summary.txt").read_text()
    assert "registrations" in capsys.readouterr().out


def test_run_default_seed_is_noted(tmp_path, capsys):
    assert main(["run", "--scenario", "journey", "--out", str(tmp_path)]) == 0
    assert "seed: 42 (scenario default)" in capsys.readouterr().out


def test_run_malformed_scenario_exits_2(tmp_path, capsys):
    doc = journey_doc()
    doc["service"]["pz"] = [[0, 0], [1, 0]]
    path = tmp_path / "bad.scenario"
    path.write_text(yaml.safe_dump(doc))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == 2
    assert "service.pz" in capsys.readouterr().err


# -- cli: compile-zone ---------------------------------------------------------------------

def test_compile_zone_single_cell(tmp_path, capsys):
    out = tmp_path / "zone.json"
    rc = main(["compile-zone", "--polygon", "-10,-10 10,-10 10,10 -10,10", "--extent", "4", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "c1=1" in text and "c0=6" in text
    doc = json.loads(out.read_text())
    assert len(doc["c1"]) == 1


def test_compile_zone_reports_inflation(tmp_path, capsys):
    rc = main(["compile-zone", "--polygon", "-10,-10 10,-10 10,10 -10,10", "--extent", "4", "--op-scale", "1.0",
               "--out", str(tmp_path / "z.yaml")])
    assert rc == 0
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("op_scale")][0]
    requested, effective = (float(part.split("=")[1]) for part in line.split()[1:])
    assert requested == 1.0 and effective > 1.0
    assert yaml.safe_load((tmp_path / "z.yaml").read_text())["op_scale"] == effective


def test_compile_zone_from_scenario(tmp_path):
    assert main(["compile-zone", "--scenario", "judder_control", "--out", str(tmp_path / "z.json")]) == 0
    doc = json.loads((tmp_path / "z.json").read_text())
    assert doc["op"] == doc["sp"]


def test_compile_zone_op_out_of_grid(tmp_path, capsys):
    rc = main(["compile-zone", "--polygon", "-175,-75 175,-75 175,75 -175,75", "--extent", "3",
               "--out", str(tmp_path / "z.json")])
    assert rc == 2
    assert capsys.readouterr().err


def test_compile_zone_bad_polygon(tmp_path):
    assert main(["compile-zone", "--polygon", "0,0 1,1 2,2", "--out", str(tmp_path / "z.json")]) == 2
    assert main(["compile-zone", "--polygon", "0,0 1", "--out", str(tmp_path / "z.json")]) == 2


def test_compile_zone_unwritable(tmp_path, capsys):
    rc = main(["compile-zone", "--polygon", "-10,-10 10,-10 10,10 -10,10",
               "--out", str(tmp_path / "missing" / "dir" / "z.json")])
    assert rc == 2
    assert "cannot write" in capsys.readouterr().err


# -- cli: verify -----------------------------------------------------------------------------

@pytest.fixture
def events(tmp_path):
    main(["run", "--scenario", "journey", "--seed", "1", "--out", str(tmp_path)])
    return tmp_path / "journey-s1" / "events.jsonl"


def test_verify_ok(events, capsys):
    assert main(["verify", "--log", str(events)]) == 0
    assert capsys.readouterr().out.startswith("OK")


def test_verify_deleted_delivery_breaks_conservation(events, capsys):
    lines = events.read_text().splitlines()
    i = next(i for i, l in enumerate(lines) if '"msg.deliver"' in l)
    del lines[i]
    # renumber so only conservation can notice
    recs = [json.loads(l) for l in lines]
    for n, r in enumerate(recs):
        r["seq"] = n
    events.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    assert main(["verify", "--log", str(events)]) == 3
    assert capsys.readouterr().out.startswith("FAIL conservation")


def test_verify_swapped_lines_break_ordering(events, capsys):
    lines = events.read_text().splitlines()
    lines[5], lines[6] = lines[6], lines[5]
    events.write_text("\n".join(lines) + "\n")
    assert main(["verify", "--log", str(events)]) == 3
    assert capsys.readouterr().out.startswith("FAIL ordering")


def test_verify_truncated_exits_2(events, capsys):
    lines = events.read_text().splitlines()
    events.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    assert main(["verify", "--log", str(events)]) == 2
    assert "truncated" in capsys.readouterr().err


def test_verify_missing_file(tmp_path):
    assert main(["verify", "--log", str(tmp_path / "nope.jsonl")]) == 2
