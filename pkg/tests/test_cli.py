import json
import subprocess
import sys

import numpy as np
import pytest

from sspinn.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from sspinn.config import ConfigError, from_dict, load_config
from sspinn.field_model import save_checkpoint
from sspinn.optim import build_layout
from sspinn.runner import read_csv

TINY = {
    "problem": "burgers",
    "seed": 4,
    "network": {"hidden": [5, 5]},
    "collocation": {"n_near": 12, "n_far": 8, "n_boundary": 1},
    "schedule": {"adam_iters": 10, "lbfgs_iters": 10, "log_every": 5},
    "export": {"n": [41]},
}


def _write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d, indent=2))
    return p


def _solve(tmp_path, d=TINY, out="run", *extra):
    cfg = _write(tmp_path, d)
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_solve_writes_run_directory(tmp_path, capsys):
    code, out = _solve(tmp_path)
    assert code == EXIT_OK
    for name in ("config.json", "collocation.csv", "loss_history.csv", "timing.csv", "checkpoint_adam.npz",
                 "checkpoint_final.npz", "profile.csv", "oracle_comparison.csv", "metadata.json"):
        assert (out / name).exists(), name
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["status"] == "ok" and "lam" in meta["scalars"]
    assert meta["wall_time_s"] > 0
    assert "run directory" in capsys.readouterr().out


def test_every_csv_carries_the_config_hash(tmp_path):
    _, out = _solve(tmp_path)
    h = json.loads((out / "metadata.json").read_text())["config_hash"]
    for f in out.glob("*.csv"):
        assert read_csv(f)[0] == h


def test_rerun_same_seed_identical(tmp_path):
    _, a = _solve(tmp_path, TINY, "a")
    _, b = _solve(tmp_path, TINY, "b")
    assert (a / "loss_history.csv").read_bytes() == (b / "loss_history.csv").read_bytes()
    ma = json.loads((a / "metadata.json").read_text())
    mb = json.loads((b / "metadata.json").read_text())
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb


def test_eval_reproduces_snapshot_bitwise(tmp_path):
    _, out = _solve(tmp_path)
    code = main(["eval", str(out / "checkpoint_final.npz"), "--out", str(tmp_path / "ev")])
    assert code == EXIT_OK
    assert (tmp_path / "ev" / "profile.csv").read_bytes() == (out / "profile.csv").read_bytes()
    assert (tmp_path / "ev" / "field_U.csv").exists()
    _, header, rows = read_csv(tmp_path / "ev" / "oracle_comparison.csv")
    assert header == ["y", "U", "U_oracle", "abs_error"] and len(rows) == 41


def test_eval_grid_override(tmp_path):
    _, out = _solve(tmp_path)
    assert main(["eval", str(out / "checkpoint_final.npz"), "--out", str(tmp_path / "ev"), "--grid", "17"]) == 0
    _, _, rows = read_csv(tmp_path / "ev" / "field_U.csv")
    assert len(rows) == 17


def test_eval_zero_checkpoint_gives_zero_fields(tmp_path):
    cfg = from_dict(dict(TINY, problem="boussinesq", problem_options={"L": 4.0}, export={"n": [9, 9]}))
    problem = cfg.make_problem()
    dims = {f: [5, 5] for f in problem.field_names()}
    layout, theta = build_layout(problem, dims, cfg.seed, 0.25)
    z = np.zeros_like(theta)
    ck = tmp_path / "zero.npz"
    save_checkpoint(ck, layout, z, cfg.seed, {"config": cfg.to_dict(), "config_hash": cfg.hash()})
    assert main(["eval", str(ck), "--out", str(tmp_path / "ev")]) == EXIT_OK
    for name in problem.field_names():
        _, header, rows = read_csv(tmp_path / "ev" / f"field_{name}.csv")
        vals = np.array([float(r[-1]) for r in rows])
        assert len(vals) == 81 and np.all(vals == 0.0)
    assert len(list((tmp_path / "ev").glob("residual_*.csv"))) == 6


def test_invalid_json_reports_line_and_column(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "problem": "burgers",\n  "seed": ,\n}\n')
    assert main(["solve", "--config", str(p)]) == EXIT_CONFIG
    assert f"{p}:3:" in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.where.startswith(f"{p}:3:")


@pytest.mark.parametrize("patch,where", [
    ({"seed": None}, "seed"),
    ({"problem": "navier"}, "problem_options"),
    ({"network": {"hidden": []}}, "network.hidden"),
    ({"collocation": {"n_near": -1}}, "collocation.n_near"),
    ({"surprise": 1}, "surprise"),
    ({"schedule": {"adam_iters": -3}}, "schedule"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, where):
    d = {**TINY, **patch}
    if patch.get("seed", 0) is None:
        d.pop("seed")
    assert main(["solve", "--config", str(_write(tmp_path, d))]) == EXIT_CONFIG
    assert where in capsys.readouterr().err


def test_hash_mismatch_rejected(tmp_path):
    code, out = _solve(tmp_path)
    assert code == EXIT_OK
    other = dict(TINY, seed=5)
    code, _ = _solve(tmp_path, other, "run")
    assert code == EXIT_CONFIG


def test_eval_rejects_non_checkpoint(tmp_path):
    bad = tmp_path / "x.npz"
    np.savez(bad, a=np.zeros(3))
    assert main(["eval", str(bad), "--out", str(tmp_path / "ev")]) == EXIT_CONFIG


def test_nan_abort_exit_code(tmp_path):
    d = dict(TINY, schedule={"adam_iters": 5, "lbfgs_iters": 0, "lr": 1e300})
    code, out = _solve(tmp_path, d)
    assert code == EXIT_NUMERIC
    assert (out / "checkpoint_aborted.npz").exists()
    assert json.loads((out / "metadata.json").read_text())["status"] == "aborted"


def test_single_value_sweep_equals_solve(tmp_path):
    d = dict(TINY, problem_options={"lam_fixed": 0.5})
    cfg = _write(tmp_path, d)
    assert main(["sweep", "--config", str(cfg), "--parameter", "lam", "--values", "0.4",
                 "--out", str(tmp_path / "sw")]) == EXIT_OK
    d2 = dict(TINY, problem_options={"lam_fixed": 0.4})
    _, out = _solve(tmp_path, d2, "single")
    a = (tmp_path / "sw" / "run_000" / "loss_history.csv").read_bytes()
    assert a == (out / "loss_history.csv").read_bytes()
    _, header, rows = read_csv(tmp_path / "sw" / "sweep.csv")
    assert header == ["lam", "final_loss", "status"] and rows[0][-1] == "ok"


def test_sweep_bad_parameter(tmp_path):
    cfg = _write(tmp_path, TINY)
    assert main(["sweep", "--config", str(cfg), "--parameter", "a", "--values", "0.1",
                 "--out", str(tmp_path / "sw")]) == EXIT_CONFIG


def test_check_verb(capsys):
    assert main(["check", "--n-random", "3"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS") for line in lines)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sspinn", "solve", "--config", str(tmp_path / "missing.json")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG
