import csv
import io
import json

import pytest

from macs_sim import cli
from macs_sim.config import parse_config, reference_config, reference_config_text
from macs_sim.dispatch import Policy
from macs_sim.errors import ParseError, RangeError, UnknownFieldError
from macs_sim.report import (
    METRIC_COLUMNS,
    SWEEP_COLUMNS,
    build_workload,
    cmd_calibrate,
    cmd_run,
    memory_line,
    run_policies,
    sweep,
)


def _cfg(tmp_path, **sections):
    doc = {"seed": 7, "workload": {"num_text": 32, "num_visual": 96},
           "calibration": {"samples_per_modality": 256},
           "output": {"dir": str(tmp_path / "out")}}
    for key, val in sections.items():
        doc.setdefault(key, {}).update(val)
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture(scope="module")
def reference_outcome():
    cfg = reference_config()
    return run_policies(cfg, build_workload(cfg))


# -- parsing ---------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = parse_config('{"seed": 1}')
    assert cfg.capacity.gamma0 == 1.0
    assert cfg.entropy.delta_semantic == 1.5
    assert cfg.capacity.rho == 0.6
    assert cfg.dispatch.eta == 0.5
    assert (cfg.routing.k, cfg.topology.num_experts, cfg.topology.num_devices) == (2, 8, 2)
    assert cfg.workload.seed == 1 and cfg.gates.seed == 1 and cfg.calibration.seed == 2


def test_range_error():
    with pytest.raises(RangeError) as exc:
        parse_config('{"seed": 1, "capacity": {"rho": 3.5}}')
    assert exc.value.path == "capacity.rho"
    with pytest.raises(RangeError):
        parse_config('{"seed": 1, "dispatch": {"eta": 1.5}}')


def test_cross_field_errors():
    with pytest.raises(RangeError) as exc:
        parse_config('{"seed": 1, "topology": {"num_experts": 6, "num_devices": 4}}')
    assert exc.value.path == "topology"
    with pytest.raises(RangeError):
        parse_config('{"seed": 1, "routing": {"k": 9}}')


def test_unknown_field():
    with pytest.raises(UnknownFieldError) as exc:
        parse_config('{"seed": 1, "capacity": {"gama0": 2.0}}')
    assert exc.value.path == "capacity.gama0"


def test_parse_errors():
    with pytest.raises(ParseError) as exc:
        parse_config('{"seed": 1,\n  "capacity": }')
    assert "line 2" in str(exc.value)
    with pytest.raises(ParseError):
        parse_config("{}")
    with pytest.raises(ParseError):
        parse_config('{"seed": "1"}')
    with pytest.raises(ParseError):
        parse_config("[1]")


def test_round_trip():
    cfg = reference_config()
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


# -- run -------------------------------------------------------------------------


def test_cmd_run_writes_artifacts(tmp_path):
    cfg = parse_config(json.dumps(_cfg(tmp_path)))
    outcome = cmd_run(cfg)
    out = tmp_path / "out"
    names = {p.name for p in out.iterdir()}
    assert names == {"config.resolved.json", "report.json", "metrics.csv", "events.jsonl",
                     "loads_heatmap.csv"}
    report = json.loads((out / "report.json").read_text())
    assert report["config"] == json.loads(cfg.to_json())
    rows = list(csv.DictReader(io.StringIO((out / "metrics.csv").read_text())))
    assert list(rows[0]) == METRIC_COLUMNS
    assert [r["policy"] for r in rows] == [p.value for p in Policy]
    heat = list(csv.reader(io.StringIO((out / "loads_heatmap.csv").read_text())))
    assert heat[0] == ["expert"] + [p.value for p in Policy]
    assert len(heat) == 1 + cfg.topology.num_experts
    v = outcome.metrics[Policy.VANILLA]
    assert v.drop_rate == 0 and v.reroute_rate == 0
    for m in outcome.metrics.values():
        assert 0 <= m.drop_rate + m.reroute_rate <= 1
        assert 0 <= m.retained_gate_mass_fraction <= 1


def test_run_outputs_are_byte_deterministic(tmp_path):
    cfg = parse_config(json.dumps(_cfg(tmp_path)))
    names = ("report.json", "metrics.csv", "events.jsonl", "loads_heatmap.csv")
    snaps = []
    for _ in range(2):
        cmd_run(cfg)
        snaps.append([(tmp_path / "out" / n).read_bytes() for n in names])
    assert snaps[0] == snaps[1]


def test_csv_only_format(tmp_path):
    cmd_run(parse_config(json.dumps(_cfg(tmp_path, output={"formats": ["csv"]}))))
    assert not (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "metrics.csv").exists()


def test_huge_gamma_macs_matches_vanilla(tmp_path):
    cfg = parse_config(json.dumps(_cfg(tmp_path, capacity={"gamma0": 1e6})))
    o = run_policies(cfg, build_workload(cfg))
    van = o.metrics[Policy.VANILLA]
    for p in Policy:
        m = o.metrics[p]
        assert o.results[p].assignment == o.results[Policy.VANILLA].assignment
        assert (m.drop_rate, m.reroute_rate, m.raw_loads, m.latency) == (0.0, 0.0, van.raw_loads, van.latency)


def test_reference_frozen_metrics(reference_outcome):
    m = reference_outcome.metrics
    assert m[Policy.VANILLA].raw_loads == (458, 155, 63, 54, 66, 67, 89, 72)
    assert m[Policy.MACS].raw_loads == (80, 116, 105, 104, 71, 69, 78, 76)
    assert m[Policy.CAI_DROP].drop_rate == 0.5107421875
    assert (m[Policy.CAI_EXPANDED].drop_rate, m[Policy.CAI_EXPANDED].reroute_rate) == (0.5, 0.0107421875)
    assert (m[Policy.MACS].drop_rate, m[Policy.MACS].reroute_rate) == (0.3173828125, 0.1728515625)
    assert m[Policy.MACS_NO_EXPAND].drop_rate == 0.392578125
    assert m[Policy.VANILLA].latency.total == pytest.approx(468.04, abs=1e-9)
    assert m[Policy.MACS].latency.total == pytest.approx(124.55, abs=1e-9)
    assert m[Policy.VANILLA].imbalance.max_over_mean == 3.578125
    plan = reference_outcome.plan
    assert plan.c_base == 64.0
    assert plan.r_v == pytest.approx(0.7632535827307917, abs=1e-12)
    classes = [p.expert_class.value for p in reference_outcome.workload.profiles]
    assert classes == ["visual", "visual"] + ["shared"] * 4 + ["text", "text"]


# -- sweep -----------------------------------------------------------------------


def test_gamma_sweep_drop_rate_non_increasing():
    rows = sweep(reference_config(), "gamma0", [0.25, 0.5, 1.0, 2.0, 3.0])
    assert list(rows[0]) == SWEEP_COLUMNS
    drops = [float(r["drop_rate"]) for r in rows if r["policy"] == "cai_drop"]
    assert len(drops) == 5
    assert all(a >= b for a, b in zip(drops, drops[1:]))


def test_sweep_needs_two_values():
    from macs_sim.errors import MacsError
    with pytest.raises(MacsError):
        sweep(reference_config(), "gamma0", [1.0])


def test_sweep_rejects_invalid_value():
    with pytest.raises(RangeError):
        sweep(reference_config(), "rho", [0.0, 3.5])


def test_rho_sweep_grows_visual_capacity():
    rows = [r for r in sweep(reference_config(), "rho", [0.0, 0.6]) if r["policy"] == "macs"]
    assert float(rows[0]["r_v"]) > 0.5
    caps = [[float(x) for x in r["capacities"].split(";")] for r in rows]
    assert caps[1][0] > caps[0][0] and caps[1][1] > caps[0][1]
    assert caps[1][6] < caps[0][6]


def test_delta_sweep_changes_weights():
    rows = [r for r in sweep(reference_config(), "delta_semantic", [0.5, 3.0]) if r["policy"] == "macs"]
    assert rows[0]["r_v"] != rows[1]["r_v"]


# -- calibrate -------------------------------------------------------------------


def test_calibrate_document_and_determinism(tmp_path):
    cfg = parse_config(json.dumps(_cfg(tmp_path)))
    first = cmd_calibrate(cfg)
    on_disk = (tmp_path / "out" / "calibration.json").read_text()
    assert first == on_disk == cmd_calibrate(cfg)
    doc = json.loads(first)
    assert len(doc["experts"]) == 8
    assert {e["class"] for e in doc["experts"]} <= {"visual", "text", "shared"}


def test_memory_line():
    cfg = parse_config(json.dumps({
        "seed": 1,
        "topology": {"num_experts": 128, "num_devices": 8},
        "calibration": {"memory": {"layers": 48, "hidden_dim": 2048, "bytes_per_value": 2}},
    }))
    assert "25165824 bytes" in memory_line(cfg)


# -- CLI ---------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, _cfg(tmp_path))
    assert cli.main(["run", "--config", good]) == 0
    assert "cai_drop" in capsys.readouterr().out
    assert cli.main(["calibrate", "--config", good]) == 0
    assert "centroid memory:" in capsys.readouterr().out
    assert cli.main(["sweep", "--config", good, "--axis", "gamma0", "--values", "0.5,1.0"]) == 0
    assert (tmp_path / "out" / "sweep_gamma0.csv").exists()

    bad = _write(tmp_path, _cfg(tmp_path, capacity={"rho": 3.5}), "bad.json")
    assert cli.main(["run", "--config", bad]) == 1
    assert cli.main(["sweep", "--config", good, "--axis", "gamma0", "--values", "1.0"]) == 1
    assert cli.main(["sweep", "--config", good, "--axis", "nope", "--values", "1,2"]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    blocked = tmp_path / "file"
    blocked.write_text("")
    locked = _write(tmp_path, _cfg(tmp_path, output={"dir": str(blocked / "sub")}), "io.json")
    assert cli.main(["run", "--config", locked]) == 2


def test_shipped_reference_is_valid_json():
    assert json.loads(reference_config_text())["seed"] == 42
