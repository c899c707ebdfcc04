from __future__ import annotations

import json
import subprocess
import sys

import pytest

from panelbreaks.cli import run
from panelbreaks.panel import write_panel
from panelbreaks.simlab import DgpSpec, generate


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    spec = DgpSpec(n_units=60, n_periods=30, p_w=1, n_factors=1, breaks=(15,),
                   deltas=((0.0,), (2.0,)), seed=3)
    data, _ = generate(spec, 0)
    path = tmp_path_factory.mktemp("cli") / "panel.csv"
    path.write_text(write_panel(data))
    return str(path)


@pytest.fixture(scope="module")
def large_csv(tmp_path_factory):
    spec = DgpSpec(n_units=3557, n_periods=64, p_w=2, n_factors=2, seed=1)
    path = tmp_path_factory.mktemp("cli") / "large.csv"
    path.write_text(write_panel(generate(spec, 0)[0]))
    return str(path)


def _json(capsys, argv):
    assert run(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_repeated_runs_are_byte_identical(panel_csv, tmp_path):
    outs = []
    for i in range(2):
        dest = tmp_path / f"out{i}.json"
        assert run(["test", "supf", "--data", panel_csv, "--w", "w1", "--output", str(dest)]) == 0
        outs.append(dest.read_bytes())
    assert outs[0] == outs[1]


def test_json_document_echoes_configuration(panel_csv, capsys):
    doc = _json(capsys, ["estimate", "--data", panel_csv, "--w", "w1", "--breaks", "1"])
    assert doc["command"] == "estimate" and "version" in doc
    assert doc["config"]["breaks"] == 1 and doc["config"]["trim"] == 0.15
    assert doc["result"]["breaks"] == [15]


def test_config_file_overrides_flags(panel_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trim": 0.2}))
    doc = _json(capsys, ["test", "supf", "--data", panel_csv, "--w", "w1", "--trim", "0.1",
                         "--config", str(cfg)])
    assert doc["config"]["trim"] == 0.2 and doc["result"]["epsilon"] == 0.2


def test_text_tables(panel_csv, capsys):
    assert run(["estimate", "--data", panel_csv, "--w", "w1", "--breaks", "1",
                "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert "Delta_1" in out and "***" in out and "lower" in out
    assert run(["test", "supf", "--data", panel_csv, "--w", "w1", "--format", "text"]) == 0
    assert "critical value" in capsys.readouterr().out


def test_ci_with_known_dates(panel_csv, capsys):
    doc = _json(capsys, ["ci", "--data", panel_csv, "--w", "w1", "--dates", "15"])
    iv = doc["result"]["intervals"][0]
    assert iv["lo"] <= 15 <= iv["hi"]


def test_khat_reports_log(panel_csv, capsys):
    doc = _json(capsys, ["khat", "--data", panel_csv, "--w", "w1"])
    assert doc["result"]["k_hat"] == 1


def test_cv_simulate_writes_table(tmp_path, capsys):
    dest = tmp_path / "cv.csv"
    doc = _json(capsys, ["cv", "simulate", "--kind", "supF", "--k", "1", "--pw", "1",
                         "--trims", "0.2", "--cv-reps", "1000", "--cv-grid", "200",
                         "--table", str(dest)])
    assert dest.read_text().startswith("# panelbreaks")
    assert doc["cv_provenance"]["source"] == "simulated"


def test_exit_codes(panel_csv, tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(["estimate", "--data", str(empty), "--w", "w1", "--breaks", "1"]) == 1
    assert run(["estimate", "--data", str(tmp_path / "nope.csv"), "--w", "w1",
                "--breaks", "1"]) == 1
    assert run(["estimate", "--data", panel_csv, "--w", "w1", "--breaks", "9",
                "--trim", "0.15"]) == 2
    assert run(["frobnicate"]) == 1
    capsys.readouterr()


def test_module_entry_point(panel_csv):
    proc = subprocess.run([sys.executable, "-m", "panelbreaks", "test", "seqf", "--data",
                           panel_csv, "--w", "w1", "--k", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["kind"].startswith("seqF")


def test_seven_breaks_on_full_size_panel(large_csv, capsys):
    doc = _json(capsys, ["estimate", "--data", large_csv, "--w", "w1,w2", "--breaks", "7",
                         "--trim", "0.05"])
    assert len(doc["result"]["breaks"]) == 7


def test_wdmax_nine_breaks_unit_weights_on_full_size_panel(large_csv, capsys):
    doc = _json(capsys, ["test", "wdmax", "--data", large_csv, "--w", "w1,w2", "--kmax", "9",
                         "--trim", "0.05", "--weights", "unit"])
    res = doc["result"]
    assert res["k"] == 9 and res["p_w"] == 2 and res["epsilon"] == 0.05
    assert res["cv_provenance"]["source"] == "embedded"
