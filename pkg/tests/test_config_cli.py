from __future__ import annotations

import csv
from pathlib import Path

import pytest

from graphsched.agents import CURVE_COLUMNS
from graphsched.cli import main
from graphsched.config import ConfigError, dump_config, load_config, parse_config

ROOT = Path(__file__).resolve().parent.parent

TINY_RMC = """
[run]
env = rmc
seed = 3
out = {out}

[rmc]
target_wp1 = 2
target_wp2 = 2
max_steps = 40

[encoder]
rounds = 1
message_dim = 4
hidden = 8

[heads]
hidden = 8

[schedule]
episodes = 4
eval_every = 2
envs_per_update = 2
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_shipped_configs_load():
    rmc = load_config(ROOT / "configs" / "rmc.ini")
    assert rmc.env == "rmc" and rmc.net.rounds == 3 and rmc.schedule.stop_success == 0.9
    immc = load_config(ROOT / "configs" / "imm.ini")
    assert immc.env == "imm" and immc.instance == "shipped"


def test_dump_round_trip(tmp_path):
    cfg = parse_config(TINY_RMC.format(out=tmp_path), tmp_path)
    again = parse_config(dump_config(cfg), tmp_path)
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_defaults_per_env():
    assert parse_config("[run]\nenv = imm\nseed = 1\n").net.rounds == 2
    assert parse_config("[run]\nseed = 1\n").net.rounds == 3


@pytest.mark.parametrize(
    "text, msg",
    [
        ("[run]\nenv = rmc\n", "seed is required"),
        ("[run]\nseed = 1\n[bogus]\nx = 1\n", "unknown section"),
        ("[run]\nseed = 1\n[ppo]\nlearning_rate = 1\n", "unknown key"),
        ("[run]\nseed = 1\n[ppo]\ngamma = 2\n", "gamma"),
        ("[run]\nseed = 1\nenv = chess\n", "env must be"),
        ("[run]\nseed = x\n", "seed"),
        ("[run]\nseed = 1\nenv = imm\n[imm]\ninstance = missing.txt\n", "does not exist"),
    ],
)
def test_bad_configs(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text, Path("/nonexistent"))


def test_instance_path_relative_to_config(tmp_path):
    (tmp_path / "one.txt").write_text("jobs=1 machines=4\n1; M2,M3,M1,M4; 14,12,20,10\n")
    cfg = load_config(write(tmp_path, "[run]\nenv = imm\nseed = 0\n[imm]\ninstance = one.txt\n"))
    assert Path(cfg.instance) == (tmp_path / "one.txt").resolve()


def test_train_zero_episodes(tmp_path):
    cfg = write(tmp_path, TINY_RMC.format(out=tmp_path / "o"))
    assert main(["train", "--config", str(cfg), "--episodes", "0"]) == 0
    text = (tmp_path / "o" / "curves.csv").read_text()
    assert text == ",".join(CURVE_COLUMNS) + "\n"


def test_train_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, TINY_RMC.format(out=tmp_path / "a"))
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
    assert len(rows(a / "curves.csv")) == 8
    assert len(rows(a / "eval.csv")) == 2
    assert (a / "checkpoints" / "agents.json").exists()
    assert (a / "checkpoints" / "best" / "agents.json").exists()
    # the manifest reproduces the run
    manifest = load_config(a / "run-manifest.ini")
    assert manifest.schedule.episodes == 4 and manifest.seed == 3


def test_eval_rows(tmp_path):
    cfg = write(tmp_path, TINY_RMC.format(out=tmp_path / "a"))
    assert main(["train", "--config", str(cfg)]) == 0
    ck = tmp_path / "a" / "checkpoints"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ck), "--out", str(tmp_path / "e")]) == 0
    assert len(rows(tmp_path / "e" / "report.csv")) == 1
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "e")]) != 0


def test_baseline_rows(tmp_path):
    (tmp_path / "one.txt").write_text("jobs=1 machines=4\n1; M2,M3,M1,M4; 14,12,20,10\n")
    cfg = write(tmp_path, f"[run]\nenv = imm\nseed = 0\nout = {tmp_path / 'o'}\n[imm]\ninstance = one.txt\n")
    assert main(["baseline", "--config", str(cfg), "--rule", "FIFO", "--seeds", "3"]) == 0
    r = rows(tmp_path / "o" / "report.csv")
    assert len(r) == 3 and {x["makespan"] for x in r} == {"56"}
    assert main(["baseline", "--config", str(cfg), "--rule", "LPT"]) != 0


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nenv = rmc\n")
    assert main(["train", "--config", str(cfg)]) != 0
    assert "seed is required" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--configs", "3"]) == 0
    out = capsys.readouterr().out
    assert "dense" in out and "encoder" in out
