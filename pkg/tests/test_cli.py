import csv
import subprocess
import sys

import numpy as np
import pytest

from safeturn import cli, harness
from safeturn.agent import STATE_DIM
from safeturn.network import QNetwork
from safeturn.sim import CollisionError

WORKED = """\
sigma_M  5
sigma_c  4
sigma_n  3
alpha_c  0.8
alpha_n  0.6
k        3
kappa_c  2
kappa_n  7.6667
m        1
delta    0.01
bound    0.008507
result   pass
"""


@pytest.fixture
def quiet_config(tmp_path):
    path = tmp_path / "quiet.toml"
    path.write_text("seed = 1\n[sim]\nemission_prob_per_second = 0.0\n")
    return path


def test_budget_worked_example(capsys):
    assert cli.main(["budget", "5", "4", "3", "2", "1", "0.01"]) == 0
    assert capsys.readouterr().out == WORKED


def test_budget_more_agents_fails(capsys):
    assert cli.main(["budget", "5", "4", "3", "2", "5", "0.01"]) == 0
    out = capsys.readouterr().out
    assert "0.042" in out and out.rstrip().endswith("fail")


def test_budget_pure_control_is_an_error(capsys):
    assert cli.main(["budget", "5", "5", "3", "2", "1", "0.01"]) == 2
    assert "alpha_n" in capsys.readouterr().err


def test_train_then_eval(tmp_path, quiet_config, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(quiet_config), "--episodes", "1",
                     "--output-dir", str(out), "--quiet"]) == 0
    rows = list(csv.DictReader(open(out / "train.csv")))
    assert len(rows) == 1 and rows[0]["outcome"] == "success" and float(rows[0]["d"]) == 50.0
    assert "collisions 0" in capsys.readouterr().out
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--episodes", "3",
                     "--output-dir", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "collisions" in printed and "timeout" in printed
    assert (out / "eval_summary.csv").exists()


def test_eval_policies(tmp_path, capsys):
    assert cli.main(["eval", "--policy", "wait", "--episodes", "2", "--output-dir", str(tmp_path)]) == 0
    assert "timeout_rate  1.0" in capsys.readouterr().out
    assert cli.main(["eval", "--policy", "random", "--episodes", "2", "--seed", "4",
                     "--output-dir", str(tmp_path)]) == 0


def test_baseline_command(tmp_path, quiet_config, capsys):
    assert cli.main(["baseline", "--config", str(quiet_config), "--episodes", "2",
                     "--margins", "0", "5", "--output-dir", str(tmp_path)]) == 0
    assert len(list(csv.DictReader(open(tmp_path / "baseline.csv")))) == 2


def test_paper_scale_flag():
    args = cli.build_parser().parse_args(["train", "--paper-scale", "--reward", "braking"])
    cfg = cli.resolve_config(args)
    assert (cfg.episodes, cfg.eval_episodes, cfg.reward) == (20_000, 1_000, "braking")


def test_flags_override_config(quiet_config):
    args = cli.build_parser().parse_args(["train", "--config", str(quiet_config), "--z", "-5",
                                          "--k", "2", "--seed", "8"])
    cfg = cli.resolve_config(args)
    assert (cfg.z, cfg.k, cfg.seed) == (-5.0, 2.0, 8)
    assert cfg.sim.emission_prob_per_second == 0.0


@pytest.mark.parametrize("argv", [
    ["train", "--z", "3"],
    ["train", "--k", "-1"],
    ["eval", "--policy", "greedy"],
    ["eval", "--checkpoint", "/nonexistent/net.npz"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--output-dir", str(tmp_path)]) == 2


def test_bad_config_file_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[sim]\nwarp = 9\n")
    assert cli.main(["train", "--config", str(bad)]) == 2


def test_mismatched_checkpoint_exit_2(tmp_path):
    path = tmp_path / "small.npz"
    QNetwork((STATE_DIM + 1, 8, 4), rng=np.random.default_rng(0)).save(path)
    assert cli.main(["eval", "--checkpoint", str(path), "--output-dir", str(tmp_path)]) == 2


def test_collision_exits_3_with_dump(tmp_path, monkeypatch, capsys):
    def crash(*args, **kwargs):
        raise CollisionError("ego collided with t4", 3, ("ego", "t4"))

    monkeypatch.setattr(harness, "run_episode", crash)
    code = cli.main(["eval", "--policy", "wait", "--episodes", "1", "--output-dir", str(tmp_path)])
    assert code == 3
    err = capsys.readouterr().err
    assert "SAFETY VIOLATION" in err and "collision_" in err
    assert list(tmp_path.glob("collision_*.json"))


def test_console_entry_point():
    done = subprocess.run([sys.executable, "-m", "safeturn.cli", "budget", "5", "4", "3", "2",
                           "1", "0.01"], capture_output=True, text=True, check=True)
    assert done.stdout == WORKED
