import json

import pytest

from pmqkd.cli import cli_main
from pmqkd.datasets import data_dir


@pytest.fixture()
def params_file(tmp_path):
    doc = {
        "protocol": {
            "mu_total": 0.2, "nu_total": 0.1,
            "r_signal": 0.5, "r_weak": 0.3, "r_vacuum": 0.2,
            "n_rounds": 50_100,
        },
        "channel": {"eta_ch": 0.2, "eta_d": 0.5, "p_d": 1e-4, "e_d0": 0.053},
        "drift": {"drift_rate": 0.0},
    }
    path = tmp_path / "params.json"
    path.write_text(json.dumps(doc))
    return path


def test_simulate_is_deterministic(tmp_path, params_file, capsys):
    out1, out2, out3 = (tmp_path / f"tally{i}.json" for i in range(3))
    base = ["simulate", "--params", str(params_file), "--trains", "100",
            "--phase-reference", "oracle"]
    assert cli_main(base + ["--seed", "1", "--out", str(out1)]) == 0
    assert cli_main(base + ["--seed", "1", "--out", str(out2)]) == 0
    assert cli_main(base + ["--seed", "1", "--out", str(out3), "--workers", "4"]) == 0
    assert out1.read_bytes() == out2.read_bytes() == out3.read_bytes()
    assert cli_main(base + ["--seed", "2", "--out", str(out1)]) == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_simulate_writes_train_log(tmp_path, params_file):
    out = tmp_path / "tally.json"
    log = tmp_path / "trains.csv"
    rc = cli_main(["simulate", "--params", str(params_file), "--trains", "20",
                   "--seed", "3", "--out", str(out), "--train-log", str(log)])
    assert rc == 0
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "train_index,phi_delta_true,phi_delta_est,j_delta,group0_errors"
    assert len(lines) == 21


def test_analyze_pipeline(tmp_path, params_file):
    tally = tmp_path / "tally.json"
    report = tmp_path / "report.json"
    assert cli_main(["simulate", "--params", str(params_file), "--trains", "2000",
                     "--seed", "5", "--out", str(tally),
                     "--phase-reference", "oracle"]) == 0
    assert cli_main(["analyze", "--tally", str(tally), "--params", str(params_file),
                     "--out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["key_length"] >= 0
    assert doc["epsilon_total"] > 0
    assert doc["estimate"]["y1_star_lower"] > 0


def test_curves_monotone(tmp_path, capsys):
    out = tmp_path / "curves.csv"
    assert cli_main(["curves", "--distances", "0:200:20", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "distance_km,eta_tot,R_pm,R_mdi,R_plob,R_tgw"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 11
    for col in range(2, 6):
        vals = [float(r[col]) for r in rows]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_curves_stdout(capsys):
    assert cli_main(["curves", "--distances", "100,200"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("distance_km,")


def test_reproduce_prints_published_qber(capsys):
    assert cli_main(["reproduce", "--dataset", "101km"]) == 0
    out = capsys.readouterr().out
    assert "5.31" in out
    assert "computed vs published" in out


def test_reproduce_json_mode(capsys):
    assert cli_main(["reproduce", "--dataset", "302km", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["dataset"] == "302km"
    assert any(row["quantity"] == "key length" for row in doc["comparison"])


def test_reproduce_unknown_dataset(capsys):
    assert cli_main(["reproduce", "--dataset", "does-not-exist"]) == 1


def test_unknown_flag_exits_one(capsys):
    assert cli_main(["curves", "--no-such-flag"]) == 1


def test_missing_params_file(tmp_path, capsys):
    rc = cli_main(["simulate", "--params", str(tmp_path / "nope.json"),
                   "--trains", "1", "--seed", "0",
                   "--out", str(tmp_path / "t.json")])
    assert rc == 1


def test_selftest(capsys):
    assert cli_main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "selftest passed" in out


def test_bundled_example_params_work(tmp_path):
    example = data_dir() / "params_example.json"
    out = tmp_path / "tally.json"
    rc = cli_main(["simulate", "--params", str(example), "--trains", "10",
                   "--seed", "1", "--out", str(out)])
    assert rc == 0
    assert out.exists()
