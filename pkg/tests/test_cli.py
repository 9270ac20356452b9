import csv
import io

import pytest

from huskysim import cli, harness


def test_design_report(capsys):
    assert cli.main(["design", "report"]) == 0
    out = capsys.readouterr().out
    assert "repurposed_mass_kg = 2.7920" in out
    assert "body + 4 x (" in out and "WARNING" in out
    ratio = float(next(l for l in out.splitlines() if l.startswith("thrust_to_weight")).split("=")[1])
    assert 1.5 <= ratio <= 2.2


def test_design_sweep(tmp_path, capsys):
    f = tmp_path / "budget.ini"
    f.write_text("[budget]\nbody_kg = 1.68\n")
    assert cli.main(["design", "sweep", str(f), "--mt", "0,0.1,0.2"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["m_t", "m3", "load_ratio", "beta_prime"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.1, 0.2]


def test_design_sweep_bad_file(tmp_path, capsys):
    assert cli.main(["design", "sweep", str(tmp_path / "missing.ini"), "--mt", "0"]) == harness.EXIT_CONFIG


def test_run_config_error_exit_code(tmp_path, capsys):
    f = tmp_path / "bad.ini"
    f.write_text("[scenario]\ndt_s = -1\nbogus = 1\n")
    assert cli.main(["run", str(f)]) == harness.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bogus" in err and "dt_s" in err


def test_run_summarize_plotdata(tmp_path, capsys):
    f = tmp_path / "s.ini"
    f.write_text("[scenario]\nname = s\n[script.1]\naction = trot\nduration_s = 0.2\nv_des_mps = 0.1, 0\n")
    assert cli.main(["run", str(f), "--out", str(tmp_path / "o")]) == 0
    log = tmp_path / "o" / "trajectory.csv"
    assert cli.main(["summarize", str(log)]) == 0
    assert cli.main(["plotdata", str(log), "--channels", "roll,thr_FL"]) == 0
    assert (tmp_path / "o" / "plotdata" / "thr_FL.csv").exists()
    assert cli.main(["plotdata", str(log), "--channels", "nope"]) == harness.EXIT_CONFIG
    assert cli.main(["plotdata", str(log), "--channels", ""]) == 0


def test_run_batch_mode(tmp_path, capsys):
    for name in ("a", "b"):
        (tmp_path / f"{name}.ini").write_text(f"[scenario]\nname = {name}\n")
    code = cli.main(["run", str(tmp_path / "a.ini"), str(tmp_path / "b.ini"), "--out", str(tmp_path / "o"),
                     "--jobs", "2"])
    assert code == 0
    assert (tmp_path / "o" / "a" / "summary.json").exists() and (tmp_path / "o" / "b" / "summary.json").exists()


def test_bad_jobs(tmp_path):
    assert cli.main(["run", "trot", "--jobs", "0"]) == harness.EXIT_CONFIG


def test_unknown_scenario_name(capsys):
    assert cli.main(["run", "does_not_exist"]) == harness.EXIT_CONFIG


def test_summarize_truncated(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text(",".join(harness._BASE_COLS) + "\n1,2\n")
    assert cli.main(["summarize", str(p)]) == harness.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.main([])
