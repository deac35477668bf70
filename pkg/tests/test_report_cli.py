import json
import re
import subprocess
import sys

import numpy as np
import pytest

from brinkman_lab.cli import main
from brinkman_lab.errors import ReportIOError
from brinkman_lab.report import emit_report, fit_line, load_report, read_csv, write_csv
from brinkman_lab.study import StudyConfig, run_convergence_study

SMALL = {"n_list": [20, 30, 40], "reps": 2, "brinkman": {"m": 32}, "quad_points": 512,
         "energy_order": 6, "dictionary_size": 16}


@pytest.fixture(scope="module")
def report():
    return run_convergence_study(StudyConfig.from_dict(SMALL))


def test_single_row_csv(tmp_path):
    path = write_csv([{"n": 5, "x": 0.1, "flag": True, "gap": float("nan")}], tmp_path / "t.csv")
    assert path.read_text() == "n,x,flag,gap\n5,0.1,true,\n"
    assert read_csv(path) == [{"n": 5.0, "x": 0.1, "flag": "true", "gap": ""}]


def test_csv_floats_roundtrip_exactly(tmp_path):
    vals = np.random.default_rng(0).random(20)
    path = write_csv([{"v": float(v)} for v in vals], tmp_path / "v.csv")
    assert [r["v"] for r in read_csv(path)] == vals.tolist()


def test_rerun_is_byte_identical(tmp_path, report):
    again = run_convergence_study(StudyConfig.from_dict(SMALL))
    a = emit_report(report, tmp_path / "a")
    b = emit_report(again, tmp_path / "b")
    names = sorted(p.name for p in a)
    assert names == sorted(p.name for p in b)
    assert "convergence_error.svg" in names
    for pa in a:
        if pa.name.endswith("timing.json"):
            continue
        assert pa.read_bytes() == (tmp_path / "b" / pa.name).read_bytes(), pa.name


def test_svg_slope_matches_csv_fit(tmp_path, report):
    emit_report(report, tmp_path)
    rows = read_csv(tmp_path / "convergence_per_n.csv")
    slope, _ = fit_line([r["n"] for r in rows], [r["error_mean"] for r in rows])
    svg = (tmp_path / "convergence_error.svg").read_text()
    shown = float(re.search(r"error slope = (-?\d+\.\d+)", svg).group(1))
    assert shown == pytest.approx(slope, abs=5e-7)
    assert shown == pytest.approx(report.fits["error_slope"], abs=5e-7)


def test_report_reload_and_unwritable_dir(tmp_path, report):
    emit_report(report, tmp_path, formats=("json",))
    back = load_report(tmp_path / "convergence_report.json")
    assert back.kind == "convergence" and back.fits == json.loads(json.dumps(back.fits))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError):
        emit_report(report, blocker / "sub")
    with pytest.raises(ValueError):
        emit_report(report, tmp_path, formats=("png",))


def _cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_sample_solve_metrics(tmp_path, capsys):
    code, out, _ = _cli(capsys, "sample", "--n", 30, "--seed", 4, "--out", tmp_path)
    assert code == 0 and json.loads(out)["n"] == 30
    cfg = tmp_path / "configuration.json"
    code, out, _ = _cli(capsys, "solve", cfg, "--out", tmp_path)
    assert code == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["energy"] > 0 and "energy_audit" in doc
    code, out, _ = _cli(capsys, "metrics", cfg, "--m-ref", 64)
    assert code == 0
    m = json.loads(out)
    assert m["valid"] and m["w1"]["mean"] > 0
    assert m["flux_theta_0.5"]["lower"] <= m["flux_theta_0.5"]["upper"]


def test_study_and_report_commands(tmp_path, capsys):
    conf = tmp_path / "study.json"
    conf.write_text(json.dumps({**SMALL, "n_list": [10, 20], "reps": 2}))
    code, out, _ = _cli(capsys, "study", "concentration", "--config", conf, "--out", tmp_path / "s")
    assert code == 0
    assert (tmp_path / "s" / "concentration_per_n.csv").exists()
    code, out, _ = _cli(capsys, "--out", tmp_path / "r", "report", tmp_path / "s" / "concentration_report.json")
    assert code == 0 and (tmp_path / "r" / "concentration.svg").exists()


def test_brinkman_command(tmp_path, capsys):
    conf = tmp_path / "study.json"
    conf.write_text(json.dumps({"brinkman": {"m": 32}}))
    code, out, _ = _cli(capsys, "brinkman", "--config", conf, "--out", tmp_path)
    assert code == 0
    summary = json.loads((tmp_path / "brinkman_summary.json").read_text())
    assert summary["m"] == 32
    lhs, rhs = summary["energy_identity"]
    assert lhs == pytest.approx(rhs, rel=1e-6)
    assert (tmp_path / "brinkman_slice.csv").exists()


def test_exit_code_config(tmp_path, capsys):
    conf = tmp_path / "bad.json"
    conf.write_text(json.dumps({"alpha": 0.3}))
    assert _cli(capsys, "study", "convergence", "--config", conf)[0] == 2
    bad = tmp_path / "overlap.json"
    bad.write_text(json.dumps({"n": 2, "positions": [[0.5, 0.5, 0.5], [0.6, 0.5, 0.5]],
                               "velocities": [[0, 0, 0], [0, 0, 0]],
                               "box": [[0, 0, 0], [1, 1, 1]]}))
    assert _cli(capsys, "solve", bad)[0] == 2


def test_exit_code_divergence(tmp_path, capsys):
    _cli(capsys, "sample", "--n", 400, "--out", tmp_path)
    code, _, err = _cli(capsys, "solve", tmp_path / "configuration.json", "--scheme", "reflections",
                        "--out", tmp_path)
    assert code == 3
    assert "reflections" in err


def test_exit_code_io(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _cli(capsys, "sample", "--n", 10, "--out", blocker / "sub")[0] == 4
    assert _cli(capsys, "solve", tmp_path / "missing.json")[0] == 4


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "brinkman_lab", "sample", "--n", "8", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "configuration.json").exists()
