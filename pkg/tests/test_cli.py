from __future__ import annotations

import csv
import json

import pytest

from focal_forge.cli import EXIT, emit_report, load_schema, main, run_experiment, validate_config


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1) + "\n")
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for sid in ("point-s2", "hopf", "circles-x-line", "lens-p3-z2"):
        assert sid in out


def test_taut_sphere_point(tmp_path):
    cfg = _write(tmp_path, {"scenario": "point-s2", "seed": 1})
    assert main(["taut", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == EXIT["ok"]
    rep = json.loads((tmp_path / "out" / "morse_report.json").read_text())
    (target,) = rep["reports"]
    assert target["verdict"]["verdict"] == "perfect"
    assert len(target["critical_points"]) == 4
    assert rep["seed"] == 1


def test_split_hopf_csv(tmp_path):
    cfg = _write(tmp_path, {"scenario": "hopf", "count": 6})
    assert main(["split", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT["ok"]
    rows = _rows(tmp_path / "splitting.csv")
    assert rows[0] == ["seed", "length", "ind_total", "ind_vertical", "ind_horizontal", "holds"]
    assert len(rows) == 7 and all(r[-1] == "true" for r in rows[1:])
    assert b"\r\n" not in (tmp_path / "splitting.csv").read_bytes()


def test_focal_scan_header(tmp_path):
    assert main(["focal", "--scenario", "point-s2", "--out-dir", str(tmp_path)]) == EXIT["ok"]
    rows = _rows(tmp_path / "focal_scan.csv")
    assert rows[0][:4] == ["direction_index", "angle", "lambda_1", "mult_1"]
    assert abs(float(rows[1][2]) - 3.14159265359) < 1e-7 and rows[1][3] == "1"


def test_negative_tolerance_exit_two(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "scenario": "point-s2",\n  "tolerances": {"integrator": -1}\n}\n')
    assert main(["taut", "--config", str(p), "--out-dir", str(tmp_path)]) == EXIT["schema"]
    err = capsys.readouterr().err
    assert "tolerances.integrator (line 3)" in err


def test_unknown_scenario_exit_two(tmp_path, capsys):
    assert main(["index", "--scenario", "nope", "--out-dir", str(tmp_path)]) == EXIT["schema"]
    assert "scenario" in capsys.readouterr().err


def test_invalid_json_exit_two(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{"scenario": "point-s2",\n  "seed": }\n')
    assert main(["index", "--config", str(p)]) == EXIT["schema"]
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_rejected():
    problems = validate_config({"scenario": "point-s2", "colour": "blue"})
    assert problems and problems[0][0] == "<root>"


def test_operation_conflict(tmp_path):
    with pytest.raises(Exception) as exc:
        run_experiment({"scenario": "point-s2", "operation": "split"}, tmp_path, "index")
    assert "operation" in str(exc.value)


def test_wrong_scenario_kind_exit_three(tmp_path, capsys):
    assert main(["split", "--scenario", "point-s2", "--out-dir", str(tmp_path)]) == EXIT["failed"]
    assert "failed to run" in capsys.readouterr().err


def test_json_round_trip(tmp_path):
    assert main(["taut", "--scenario", "circle-plane", "--out-dir", str(tmp_path)]) == EXIT["ok"]
    path = tmp_path / "morse_report.json"
    text = path.read_text()
    doc = json.loads(text)
    again = emit_report(doc, "json", tmp_path / "again.json")
    assert again.read_text() == text
    assert json.loads(again.read_text()) == doc


def _compare_runs(dirs):
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for n in names:
        if n != "manifest.json":  # carries the wall time
            assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n
    m0, m1 = (json.loads((d / "manifest.json").read_text()) for d in dirs)
    assert m0["files"] == m1["files"]
    return m0


@pytest.mark.parametrize("command,cfg", [
    ("split", {"scenario": "hopf", "count": 4, "seed": 4}),
    ("cycles", {"scenario": "hopf-fiber", "seed": 4, "vectors": [{"vector": [0.0, 0.0, 2.5, 0.0]}]}),
])
def test_byte_identical_reruns(tmp_path, monkeypatch, command, cfg):
    path = _write(tmp_path, cfg)
    dirs = []
    for i, threads in enumerate(("1", "3")):
        monkeypatch.setenv("FOCAL_FORGE_THREADS", threads)
        d = tmp_path / f"run{i}"
        assert main([command, "--config", path, "--out-dir", str(d)]) == EXIT["ok"]
        dirs.append(d)
    m0 = _compare_runs(dirs)
    assert m0["seed"] == 4 and m0["status"] == "ok" and "wall_time_s" in m0
    assert m0["versions"]["focal_forge"]


def test_cycles_focal_vector_is_a_finding(tmp_path):
    # the default Hopf-fiber vector ends at a focal point: reported, not fatal
    assert main(["cycles", "--scenario", "hopf-fiber", "--out-dir", str(tmp_path)]) == EXIT["findings"]
    rep = json.loads((tmp_path / "cycles_report.json").read_text())
    (entry,) = rep["cycles"]
    assert not entry["consistent"] and "focal" in entry["error"]


def test_probe_non_focal_vector_is_a_finding(tmp_path):
    cfg = _write(tmp_path, {"scenario": "sphere-r3", "vectors": [{"vector": [-0.5, 0.0, 0.0]}]})
    assert main(["probe", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT["findings"]
    rep = json.loads((tmp_path / "probe_report.json").read_text())
    assert rep["probes"][0]["verdict"] == "error"


def test_flags_before_or_after_subcommand(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "2", "--out-dir", str(a), "index", "--scenario", "point-s2"]) == 0
    assert main(["index", "--scenario", "point-s2", "--seed", "2", "--out-dir", str(b)]) == 0
    assert (a / "index_table.csv").read_bytes() == (b / "index_table.csv").read_bytes()
    assert json.loads((a / "index_report.json").read_text())["seed"] == 2


def test_tol_scale_must_be_positive(tmp_path):
    assert main(["index", "--scenario", "point-s2", "--tol-scale", "0", "--out-dir", str(tmp_path)]) == 2


def test_schema_ships():
    schema = load_schema()
    assert schema["additionalProperties"] is False
    assert "scenario" in schema["required"]


def test_emit_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report({}, "xml", tmp_path / "x.xml")
