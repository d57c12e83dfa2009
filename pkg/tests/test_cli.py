import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dmzfilter.cli import RUN_HEADER, build_parser, run_cli

CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def config(tmp_path):
    doc = json.loads((CONFIGS / "linear_gaussian.json").read_text())
    doc["basis"]["n_order"] = 20
    doc["time"]["t_end"] = 0.5
    path = tmp_path / "lin.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def table(tmp_path, config):
    out = tmp_path / "tables" / "lin.yypt"
    assert run_cli(["offline", "--config", str(config), "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_offline_writes_table(table):
    assert table.read_bytes()[:4] == b"YYPT"


def test_overwrite_needs_force(table, config, capsys):
    before = table.read_bytes()
    assert run_cli(["offline", "--config", str(config), "--out", str(table)]) == 1
    assert "--force" in capsys.readouterr().err
    assert run_cli(["offline", "--config", str(config), "--out", str(table), "--force"]) == 0
    assert table.read_bytes() == before


def test_run_output_and_determinism(tmp_path, config, table):
    outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for out in outs:
        assert run_cli(["run", "--config", str(config), "--table", str(table), "--out", str(out), "--seed", "3"]) == 0
    a, b = _rows(outs[0]), _rows(outs[1])
    assert tuple(a[0]) == RUN_HEADER and len(a) == 52
    assert [r[:-1] for r in a] == [r[:-1] for r in b]
    data = np.array(a[1:], dtype=float)
    assert data[0, 2] == 0.0 and data[0, 7] == 0.0
    np.testing.assert_allclose(data[:, 0], 0.01 * np.arange(51), atol=1e-12)
    assert np.all(data[:, 4] > 0) and np.all(data[1:, 7] > 0)


def test_simulate(tmp_path, config):
    out = tmp_path / "deep" / "path.csv"
    assert run_cli(["simulate", "--config", str(config), "--out", str(out), "--seed", "1"]) == 0
    rows = _rows(out)
    assert rows[0] == ["t", "x_true", "y_obs"] and len(rows) == 52


def test_overrides_change_header(tmp_path, config, table, capsys):
    out = tmp_path / "run.csv"
    code = run_cli(["run", "--config", str(config), "--table", str(table), "--out", str(out), "--n-order", "25"])
    assert code == 1 and "does not match" in capsys.readouterr().err
    code = run_cli(["run", "--config", str(config), "--table", str(table), "--out", str(out), "--t-end", "0.4"])
    assert code == 1 and "intervals" in capsys.readouterr().err
    assert not out.exists()


def test_missing_files(tmp_path, config, capsys):
    assert run_cli(["offline", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "x")]) == 1
    code = run_cli(["run", "--config", str(config), "--table", str(tmp_path / "none"), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_corrupt_table(tmp_path, config, table):
    table.write_bytes(table.read_bytes()[:-8])
    assert run_cli(["run", "--config", str(config), "--table", str(table), "--out", str(tmp_path / "r.csv")]) == 1


def test_invalid_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"f": "x +", "g": "1", "q": "1", "s": "1", "h": "x", "sigma0": "1"},
                               "time": {"t_end": 1, "dt": 0.01}}))
    assert run_cli(["offline", "--config", str(bad), "--out", str(tmp_path / "t")]) == 1


@pytest.mark.parametrize(
    "argv",
    [[], ["nonsense"], ["offline"], ["offline", "--config", "c", "--out", "o", "--bogus"], ["run", "--dt", "abc"]],
)
def test_usage_errors(argv, capsys):
    assert run_cli(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_numerical_failure_exit_code(tmp_path):
    cfg = CONFIGS / "cubic.json"
    table = tmp_path / "cubic.yypt"
    assert run_cli(["offline", "--config", str(cfg), "--out", str(table), "--t-end", "5"]) == 0
    code = run_cli(["run", "--config", str(cfg), "--table", str(table), "--out", str(tmp_path / "r.csv"),
                    "--t-end", "5", "--seed", "3"])
    assert code == 2


def test_converge(tmp_path):
    out = tmp_path / "conv.csv"
    argv = ["converge", "--config", str(CONFIGS / "cubic.json"), "--out", str(out), "--t-end", "0.5",
            "--k-list", "5,10,20", "--nx", "201"]
    assert run_cli(argv) == 0
    rows = _rows(out)
    assert rows[0] == ["k", "error"] and [r[0] for r in rows[1:]] == ["5", "10", "20"]
    assert json.loads(out.with_suffix(".json").read_text())["order"] > 0.5
    assert run_cli(argv[:-4] + ["--k-list", "10,15"] + argv[-2:] + ["--force"]) == 1


def test_truncate(tmp_path):
    out = tmp_path / "trunc.csv"
    argv = ["truncate", "--config", str(CONFIGS / "cubic.json"), "--out", str(out), "--t-end", "0.2",
            "--radii", "3,4,5", "--nx-per-unit", "20"]
    assert run_cli(argv) == 0
    rows = _rows(out)
    assert rows[0] == ["R", "tail_gap"] and len(rows) == 3
    assert json.loads(out.with_suffix(".json").read_text())["decay_rate"] > 0
    assert run_cli(argv[:-2] + ["--nx-per-unit", "abc", "--force"]) == 1


@pytest.mark.parametrize("command", ["offline", "simulate", "run", "converge", "truncate"])
def test_help(command, capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([command, "--help"])
    assert info.value.code == 0
    assert "--config" in capsys.readouterr().out


def test_console_entry_point(tmp_path, config):
    out = tmp_path / "p.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "dmzfilter.cli", "simulate", "--config", str(config), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and out.exists()
    proc = subprocess.run([sys.executable, "-m", "dmzfilter.cli", "run"], capture_output=True, text=True)
    assert proc.returncode == 1
