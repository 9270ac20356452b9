import csv
import json
import math

import numpy as np
import pytest

from huskysim import harness, kinematics as kin

SHORT_TROT = """
[scenario]
name = short
dt_s = 0.001
log_interval_s = 0.01

[script.1]
action = trot
duration_s = 1.5
v_des_mps = 0.3, 0

[script.2]
action = push
t_s = 0.8
impulse_mps = 0, 0.1, 0
"""


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    cfg = harness.parse_scenario(SHORT_TROT)
    summary = harness.run_scenario(cfg, out)
    return out, summary


def test_config_errors_list_every_violation():
    text = """
[scenario]
dt_s = 0.02
colour = blue
[wings]
span = 2
[script.1]
action = hover
duration_s = -1
[script.2]
action = teleport
"""
    with pytest.raises(harness.ScenarioError) as exc:
        harness.parse_scenario(text)
    errors = exc.value.errors
    joined = "\n".join(errors)
    for needle in ("colour", "[wings]", "teleport", "dt_s", "duration_s", "hover before morph_to_aerial"):
        assert needle in joined, needle
    assert len(errors) >= 6


def test_sequencing_rules():
    bad = """
[script.1]
action = push
t_s = 1
[script.2]
action = morph_to_legged
"""
    with pytest.raises(harness.ScenarioError) as exc:
        harness.parse_scenario(bad)
    joined = "\n".join(exc.value.errors)
    assert "push must follow a trot" in joined
    assert "morph_to_legged needs aerial mode" in joined


def test_bundled_scenarios_validate():
    names = harness.bundled_scenarios()
    assert {"fig3_mission", "trot", "push", "roll_assist", "hover"} <= set(names)
    for path in names.values():
        assert harness.validate(harness.load_scenario(path)) == []


def test_resolve_unknown_scenario():
    with pytest.raises(harness.ScenarioError):
        harness.resolve_scenario("no_such_scenario")


def test_empty_script_gives_valid_empty_logs(tmp_path):
    summary = harness.run_scenario(harness.parse_scenario("[scenario]\nname = empty\n"), tmp_path)
    assert summary.exit_code == 0 and summary.duration_s == 0.0
    for name in (harness.TRAJECTORY_FILE, harness.EVENTS_FILE, harness.TRANSITIONS_FILE, harness.SUMMARY_FILE):
        assert (tmp_path / name).exists()
    rows = list(csv.reader(open(tmp_path / harness.TRAJECTORY_FILE)))
    assert len(rows) == 1 and rows[0][0] == "t"
    assert harness.summarize(tmp_path / harness.TRAJECTORY_FILE).to_dict() == \
        json.loads((tmp_path / harness.SUMMARY_FILE).read_text())


def test_summary_recomputed_from_log(short_run):
    out, summary = short_run
    again = harness.summarize(out / harness.TRAJECTORY_FILE)
    assert again.to_dict() == summary.to_dict()
    assert json.loads((out / harness.SUMMARY_FILE).read_text()) == summary.to_dict()


def test_short_run_contents(short_run):
    out, summary = short_run
    assert summary.status == "ok"
    (trot,) = summary.trot
    assert trot["duration_s"] == pytest.approx(1.5)
    assert trot["diagonal_pairs_only"]
    (push,) = summary.pushes
    assert push["t_s"] == pytest.approx(0.8, abs=0.011)
    c = harness.read_log(out / harness.TRAJECTORY_FILE)
    assert np.all(np.diff(c["t"]) >= 0)
    assert np.count_nonzero(c["push"]) == 1


def test_events_timestamps_non_decreasing(short_run):
    out, _ = short_run
    rows = list(csv.DictReader(open(out / harness.EVENTS_FILE)))
    t = [float(r["t"]) for r in rows]
    assert t == sorted(t)
    assert any(r["kind"] == "push" for r in rows)


def test_stationary_log_has_zero_speed(tmp_path):
    cols = harness._BASE_COLS
    path = tmp_path / "still.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(51):
            row = {c: "0" for c in cols}
            row.update(t=repr(k * 0.01), item="1", action="trot", phase="Legged", status="ok", z="0.32",
                       stance_FL="1", stance_BR="1", v_des_x="0.3")
            w.writerow([row[c] for c in cols])
    s = harness.summarize(path)
    assert s.trot[0]["mean_speed_mps"] == 0.0


def test_truncated_log_reports_line(short_run, tmp_path):
    out, _ = short_run
    lines = (out / harness.TRAJECTORY_FILE).read_text().splitlines()
    cut = lines[:40] + [lines[40][: len(lines[40]) // 2]]
    bad = tmp_path / "cut.csv"
    bad.write_text("\n".join(cut) + "\n")
    with pytest.raises(harness.LogParseError) as exc:
        harness.summarize(bad)
    assert exc.value.line == 41
    assert "41" in str(exc.value)


def test_empty_log_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(harness.LogParseError):
        harness.read_log(p)


def test_plotdata_roll_projection(short_run, tmp_path):
    out, _ = short_run
    (path,) = harness.emit_plotdata(out / harness.TRAJECTORY_FILE, ["roll"], tmp_path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "roll"]
    t = np.array([float(r[0]) for r in rows[1:]])
    v = np.array([float(r[1]) for r in rows[1:]])
    c = harness.read_log(out / harness.TRAJECTORY_FILE)
    assert np.all(np.diff(t) >= 0)
    assert np.array_equal(v, c["roll"])


def test_plotdata_foot_channel_matches_fk(short_run, tmp_path):
    out, _ = short_run
    (path,) = harness.emit_plotdata(out / harness.TRAJECTORY_FILE, ["foot_BR_z"], tmp_path)
    vals = np.array([float(r[1]) for r in list(csv.reader(open(path)))[1:]])
    c = harness.read_log(out / harness.TRAJECTORY_FILE)
    leg = kin.default_legs()[2]
    expect = [kin.forward_kinematics(leg, (a, b, d))[2]
              for a, b, d in zip(c["q_BR_frontal"], c["q_BR_sagittal"], c["q_BR_knee"])]
    assert np.allclose(vals, expect, atol=1e-12)


def test_plotdata_unknown_channel(short_run):
    out, _ = short_run
    with pytest.raises(KeyError) as exc:
        harness.emit_plotdata(out / harness.TRAJECTORY_FILE, ["roll", "warp_drive"])
    msg = exc.value.args[0]
    assert "warp_drive" in msg and "thr_FL" in msg


def test_plotdata_empty_channel_list(short_run, tmp_path):
    out, _ = short_run
    assert harness.emit_plotdata(out / harness.TRAJECTORY_FILE, [], tmp_path / "none") == []
    assert not (tmp_path / "none").exists()


def test_batch_isolated_dirs(tmp_path):
    a = tmp_path / "a.ini"
    b = tmp_path / "b.ini"
    a.write_text("[scenario]\nname = a\n")
    b.write_text("[scenario]\ndt_s = 1\n")
    results = dict(harness.run_batch([a, b], tmp_path / "out", jobs=1))
    assert results[str(a)] == 0 and results[str(b)] == harness.EXIT_CONFIG
    assert (tmp_path / "out" / "a" / harness.TRAJECTORY_FILE).exists()


def test_morph_trace_columns(tmp_path):
    text = "[scenario]\nname = mt\n[script.1]\naction = trot\nduration_s = 0.05\nv_des_mps = 0, 0\n"
    harness.run_scenario(harness.parse_scenario(text), tmp_path, morph_trace=True)
    header = next(csv.reader(open(tmp_path / harness.TRAJECTORY_FILE)))
    assert header[-3:] == ["perch_load_fraction", "splay_error_rad", "col_com_offset_m"]
    assert "col_com_offset_m" in harness.available_channels(header)


def test_summary_json_has_no_nan(short_run):
    out, _ = short_run
    text = (out / harness.SUMMARY_FILE).read_text()
    assert "NaN" not in text and "Infinity" not in text
    assert not any(isinstance(v, float) and math.isnan(v) for v in json.loads(text).values())
