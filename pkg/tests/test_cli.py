import json

import numpy as np

from ldx.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_env_and_solve(tmp_path, capsys):
    spec = tmp_path / "launch.json"
    code, _, _ = run(capsys, "gen-env", "--kind", "launch", "--states", "3", "--seed", "2",
                     "--out", str(spec))
    assert code == 0 and json.loads(spec.read_text())["num_states"] == 3
    code, out, _ = run(capsys, "solve", str(spec), "--iters", "200")
    doc = json.loads(out)
    assert code == 0 and doc["objective"] > 0
    assert abs(np.sum(doc["allocation"]) - 1) < 1e-9


def test_solve_linear(tmp_path, capsys):
    from ldx.linear import one_hot_embedding
    from ldx.specfile import save_linear
    from ldx.mdp import TabularMdp

    lin = one_hot_embedding(TabularMdp(np.ones((1, 2, 1)), [[1.0, 0.0]], 0.0, False, 0.5))
    save_linear(lin, tmp_path / "lin.json")
    code, out, _ = run(capsys, "solve", str(tmp_path / "lin.json"), "--iters", "500")
    doc = json.loads(out)
    assert code == 0 and doc["kind"] == "linear"
    assert np.allclose(doc["allocation"], 0.5, atol=2e-2)


def test_run_and_seed_env(capsys, monkeypatch):
    code, out, _ = run(capsys, "run", "--env", "gridworld", "--algo", "uniform", "--budget", "300")
    a = json.loads(out)
    assert code == 0 and a["budget"] == 300 and a["seed"] == 0
    monkeypatch.setenv("LDX_SEED", "17")
    _, out, _ = run(capsys, "run", "--env", "gridworld", "--algo", "uniform", "--budget", "300")
    assert json.loads(out)["seed"] == 17


def test_run_mode_error(capsys):
    code, _, err = run(capsys, "run", "--env", "hard_instance", "--budget", "300")
    assert code == 2 and "generative" in err


def test_rate_fixed(capsys):
    code, out, _ = run(capsys, "rate", "--env", "hard_instance", "--agent", "fixed",
                       "--budgets", "200,400,600", "--reps", "500")
    doc = json.loads(out)
    assert code == 0 and len(doc["points"]) == 3 and "slope" in doc["fit"]


def test_bench_exit_codes(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"env": "gridworld", "algos": ["uniform"], "budgets": [200], "reps": 2}))
    out_dir = tmp_path / "o"
    monkeypatch.setenv("LDX_SEED", "3")
    code, out, _ = run(capsys, "bench", "--config", str(cfg), "--out", str(out_dir))
    assert code == 0 and "uniform" in out
    assert json.loads((out_dir / "config.effective.json").read_text())["seed"] == 3
    assert (out_dir / "rows.csv").exists() and (out_dir / "manifest.json").exists()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"env": "hard_instance", "algos": ["uniform"], "budgets": [200], "reps": 1}))
    code, _, err = run(capsys, "bench", "--config", str(bad), "--out", str(tmp_path / "b"))
    assert code == 1 and "failed" in err
    bad.write_text(json.dumps({"env": "gridworld", "algos": ["uniform"], "budgets": [3, 2]}))
    code, _, err = run(capsys, "bench", "--config", str(bad))
    assert code == 2 and "budgets" in err
