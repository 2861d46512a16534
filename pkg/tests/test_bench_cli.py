import json

import numpy as np
import pytest

from ddlmpc import ArgumentError
from ddlmpc.bench import BenchConfig, exp_locality, exp_optimality, exp_scaling
from ddlmpc.cli import main


def test_config_validation():
    with pytest.raises(ArgumentError):
        BenchConfig(n=0)
    with pytest.raises(ArgumentError):
        BenchConfig.from_mapping({"bogus": 1})
    assert BenchConfig.from_mapping({"d_list": [1, 2]}).d_list == (1, 2)


def test_optimality_zero_steps():
    res = exp_optimality(BenchConfig(n=4, steps=0))
    assert res.csv.strip() == ("t,x_d3lmpc_theta1,x_d3lmpc_omega1,x_centralized_theta1,"
                               "x_centralized_omega1,abs_diff,cost_d3lmpc,cost_centralized")


def test_optimality_small_and_deterministic():
    cfg = BenchConfig(n=5, d=1, horizon=3, steps=4)
    a, b = exp_optimality(cfg), exp_optimality(cfg)
    assert a.csv == b.csv
    assert a.summary["max_state_diff"] <= 1e-4


def test_locality_small():
    res = exp_locality(BenchConfig(n=12, horizon=3, steps=0, d_list=(1, 2, 3)))
    lengths = [int(r.split(",")[-1]) for r in res.csv.strip().splitlines()[1:]]
    assert lengths == sorted(set(lengths))
    costs = [res.summary["optimal_costs"][d] for d in (1, 2, 3)]
    assert costs[2] <= costs[0] + 1e-8


def test_scaling_small():
    res = exp_scaling(BenchConfig(horizon=3, n_list=(9, 12), instances=1, scaling_steps=2, d=1))
    rows = [r.split(",") for r in res.csv.strip().splitlines()[1:]]
    assert rows[0][4] == rows[1][4]  # local data length
    assert int(rows[1][5]) > int(rows[0][5])
    assert rows[0][7] == rows[1][7]  # interior dimensions


def run_cli(args, capsys):
    code = main(args)
    return code, capsys.readouterr()


def test_cli_pipeline(tmp_path, capsys):
    out = str(tmp_path)
    assert run_cli(["gen-system", "--n", "4", "--d", "1", "--horizon", "3", "--out", out],
                   capsys)[0] == 0
    doc = json.loads((tmp_path / "system.json").read_text())
    assert doc["topology"]["nodes"] == 4
    sysf = str(tmp_path / "system.json")
    assert run_cli(["collect-data", "--system", sysf, "--d", "1", "--horizon", "3", "--out", out],
                   capsys)[0] == 0
    code, _ = run_cli(["run-mpc", "--system", sysf, "--data", str(tmp_path / "data.csv"),
                       "--d", "1", "--horizon", "3", "--steps", "3", "--out", out], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert np.isfinite(summary["cost"])
    first = (tmp_path / "closed_loop.csv").read_text()
    run_cli(["run-mpc", "--system", sysf, "--data", str(tmp_path / "data.csv"), "--d", "1",
             "--horizon", "3", "--steps", "3", "--out", out], capsys)
    assert (tmp_path / "closed_loop.csv").read_text() == first
    assert run_cli(["plot", str(tmp_path / "closed_loop.csv"), "--out", out], capsys)[0] == 0
    assert (tmp_path / "closed_loop.svg").read_text().startswith("<?xml")


def test_cli_exit_codes(tmp_path, capsys):
    code, cap = run_cli(["run-mpc", "--bogus"], capsys)
    assert code == 2 and cap.err.startswith("error: ")
    assert json.loads(cap.err[len("error: "):])["code"] == 2
    out = str(tmp_path)
    run_cli(["gen-system", "--n", "4", "--out", out], capsys)
    sysf = str(tmp_path / "system.json")
    run_cli(["collect-data", "--system", sysf, "--length", "30", "--out", out], capsys)
    code, cap = run_cli(["run-mpc", "--system", sysf, "--data", str(tmp_path / "data.csv"),
                         "--out", out], capsys)
    assert code == 3 and "PE" in cap.err
    run_cli(["collect-data", "--system", sysf, "--d", "1", "--horizon", "3", "--out", out], capsys)
    code, cap = run_cli(["run-mpc", "--system", sysf, "--data", str(tmp_path / "data.csv"),
                         "--d", "1", "--horizon", "3", "--steps", "2", "--max-iter", "3",
                         "--out", out], capsys)
    assert code == 4 and json.loads(cap.err[len("error: "):])["kind"] == "NonConvergenceError"
    assert run_cli(["exp-locality", "--n", "0"], capsys)[0] == 2


def test_cli_config_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 3}))
    assert run_cli(["gen-system", "--config", str(cfg), "--out", str(tmp_path)], capsys)[0] == 0
    assert json.loads((tmp_path / "system.json").read_text())["topology"]["nodes"] == 3
