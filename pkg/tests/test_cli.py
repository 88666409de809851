import json

import pytest
import yaml

from megacontroller import cli


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_writes_artifacts_and_kpis(tmp_path, capsys):
    out = tmp_path / "sim"
    code, stdout, _ = run(["simulate", "--scenario", "shockwave", "--planner", "none", "--duration", 40,
                           "--baseline", "--out", out], capsys)
    assert code == cli.EXIT_OK
    assert (out / "trajectories.csv").exists() and (out / "scenario.yaml").exists()
    kpis = yaml.safe_load((out / "kpis.yaml").read_text())
    assert set(kpis) == {"kpis", "baseline", "delta_pct"}
    assert "delta" in stdout


def test_simulate_uses_output_environment_variable(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    code, stdout, _ = run(["simulate", "--scenario", "freeflow", "--duration", 20], capsys)
    assert code == cli.EXIT_OK
    assert any(p.name.startswith("simulate-") for p in tmp_path.iterdir())


def test_bad_controller_is_a_config_error(tmp_path, capsys):
    code, _, err = run(["simulate", "--controller", "warp", "--duration", 10, "--out", tmp_path], capsys)
    assert code == cli.EXIT_CONFIG and "error" in err


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "freeflow", "duration": 15.0, "seed": 4}))
    out = tmp_path / "o"
    assert run(["simulate", "--config", cfg, "--seed", 5, "--out", out], capsys)[0] == cli.EXIT_OK
    assert yaml.safe_load((out / "config.yaml").read_text())["seed"] == 5
    cfg.write_text(yaml.safe_dump({"nonsense_key": 1}))
    assert run(["simulate", "--config", cfg, "--out", out], capsys)[0] == cli.EXIT_CONFIG


def test_single_cell_sweep_matches_simulate_and_resumes(tmp_path, capsys):
    common = ["--duration", 30]
    code, _, _ = run(["sweep", "--scenarios", "shockwave", "--planners", "none", "--controllers", "accel",
                      "--seeds", "0", *common, "--out", tmp_path / "sw"], capsys)
    assert code == cli.EXIT_OK
    cells = sorted(p.name for p in (tmp_path / "sw" / "cells").glob("*.json"))
    assert cells == ["shockwave__baseline__none__s0.json", "shockwave__none__accel__s0.json"]
    rec = json.loads((tmp_path / "sw" / "cells" / cells[1]).read_text())
    run(["simulate", "--scenario", "shockwave", "--planner", "none", "--controller", "accel", "--seed", 0,
         *common, "--out", tmp_path / "one"], capsys)
    kpis = yaml.safe_load((tmp_path / "one" / "kpis.yaml").read_text())["kpis"]
    for k, v in kpis.items():
        assert rec["kpis"][k] == pytest.approx(v, rel=1e-12)
    _, stdout, _ = run(["sweep", "--scenarios", "shockwave", "--planners", "none", "--controllers", "accel",
                        "--seeds", "0", *common, "--out", tmp_path / "sw"], capsys)
    assert "2 cells, 2 already complete" in stdout
    assert (tmp_path / "sw" / "report.csv").exists()


def test_macro_outputs(tmp_path, capsys):
    run(["simulate", "--scenario", "shockwave", "--duration", 30, "--out", tmp_path / "r"], capsys)
    code, stdout, _ = run(["macro", tmp_path / "r", "--h-t", 10, "--h-x", 100], capsys)
    assert code == cli.EXIT_OK and "boxes" in stdout
    for name in ("rho", "q", "u", "phi", "psi"):
        assert (tmp_path / "r" / "macro" / f"{name}.csv").exists()
        assert (tmp_path / "r" / "macro" / f"{name}.svg").exists()
    assert run(["macro", tmp_path / "missing"], capsys)[0] == cli.EXIT_CONFIG


def test_optimize_grad_check(tmp_path, capsys):
    code, stdout, _ = run(["optimize", "--grad-check", "--n-vehicles", 4, "--n-av", 1, "--duration", 60,
                           "--out", tmp_path], capsys)
    assert code == cli.EXIT_OK and "gradient check passed" in stdout


def test_optimize_zero_iterations_returns_start(tmp_path, capsys):
    code, _, _ = run(["optimize", "--iterations", 0, "--n-vehicles", 4, "--n-av", 1, "--duration", 60,
                      "--out", tmp_path], capsys)
    assert code == cli.EXIT_OK
    summary = yaml.safe_load((tmp_path / "summary.yaml").read_text())
    assert (tmp_path / "schedule.csv").exists() and (tmp_path / "trace.csv").exists()
    assert summary["objective"] == pytest.approx(summary["initial_objective"])


def test_optimize_mpc_mode(tmp_path, capsys):
    code, stdout, _ = run(["optimize", "--mode", "mpc", "--duration", 30, "--out", tmp_path], capsys)
    assert code == cli.EXIT_OK and (tmp_path / "mpc_rollout.csv").exists()
    assert "min gap margin" in stdout


def test_gen_leader(tmp_path, capsys):
    from megacontroller.leader import load_leader_trajectory

    path = tmp_path / "lead.csv"
    assert run(["gen-leader", "--duration", 50, "--seed", 2, "--out", path], capsys)[0] == cli.EXIT_OK
    lead = load_leader_trajectory(path)
    assert lead.duration == pytest.approx(50.0, abs=0.1)


def test_benchmark_rate_gate(capsys):
    code, stdout, _ = run(["benchmark", "--vehicles", 6, "--duration", 10, "--repeat", 1], capsys)
    assert code == cli.EXIT_OK and "steps/s" in stdout
    code, _, err = run(["benchmark", "--vehicles", 6, "--duration", 10, "--repeat", 1, "--min-rate", 1e12],
                       capsys)
    assert code != cli.EXIT_OK and "below" in err
