"""Run configuration files.

INI-style text read with :mod:`configparser`. Sections and keys::

    [run]       env = rmc|imm, seed = <int> (required), out = <dir>
    [rmc]       target_wp1, target_wp2, max_steps, processing_ticks = a,b,c,
                move_cap_per_tick (empty = unlimited), delivery_bonus,
                step_penalty, terminal_bonus
    [imm]       instance = shipped|<path relative to the config file>,
                max_steps, completion_bonus, step_penalty, terminal_scale
    [encoder]   rounds, message_dim, hidden = w1,w2,...
    [heads]     hidden = w1,w2,..., activation
    [ppo]       every PPOConfig field
    [schedule]  episodes, eval_every, envs_per_update, eval_episodes,
                stop_success (empty = never stop early)

Missing sections and keys take their defaults; unknown keys are errors.
:func:`dump_config` writes every key, so its output reloads to an equal
configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .agents import NetConfig, TrainSchedule
from .envs.imm import SHIPPED_INSTANCE, ImmConfig, ImmEnv, load_instance
from .envs.rmc import RmcConfig, RmcEnv
from .ppo import PPOConfig


class ConfigError(ValueError):
    pass


DEFAULT_ROUNDS = {"rmc": 3, "imm": 2}


@dataclass
class RunConfig:
    env: str = "rmc"
    seed: int = 0
    out: str = "runs/default"
    rmc: RmcConfig = field(default_factory=RmcConfig)
    imm: ImmConfig = field(default_factory=ImmConfig)
    instance: str = "shipped"
    net: NetConfig = field(default_factory=NetConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)

    def instance_path(self) -> Path:
        return SHIPPED_INSTANCE if self.instance == "shipped" else Path(self.instance)

    def env_factory(self):
        if self.env == "rmc":
            cfg = self.rmc
            return lambda: RmcEnv(cfg)
        inst = load_instance(self.instance_path())
        cfg = self.imm
        return lambda: ImmEnv(inst, cfg)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        return _bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return _ints(raw)
    if default is None or name in ("move_cap_per_tick", "stop_success"):
        if raw == "":
            return None
        return int(raw) if name == "move_cap_per_tick" else float(raw)
    return raw


def _section(cp: configparser.ConfigParser, name: str, obj, rename: dict | None = None):
    if not cp.has_section(name):
        return obj
    rename = rename or {}
    known = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in cp.items(name):
        attr = rename.get(key, key)
        if attr not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            updates[attr] = _coerce(attr, raw, getattr(obj, attr))
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    allowed = {"run", "rmc", "imm", "encoder", "heads", "ppo", "schedule"}
    for s in cp.sections():
        if s not in allowed:
            raise ConfigError(f"unknown section [{s}]")
    if not cp.has_option("run", "seed"):
        raise ConfigError("[run] seed is required")
    run = dict(cp.items("run"))
    for key in run:
        if key not in ("env", "seed", "out"):
            raise ConfigError(f"[run] unknown key {key!r}")
    env = run.get("env", "rmc").strip()
    if env not in ("rmc", "imm"):
        raise ConfigError(f"[run] env must be rmc or imm, got {env!r}")
    try:
        seed = int(run["seed"])
    except ValueError as exc:
        raise ConfigError(f"[run] seed: {exc}") from exc

    rmc = _section(cp, "rmc", RmcConfig())
    imm_keys = dict(cp.items("imm")) if cp.has_section("imm") else {}
    instance = imm_keys.pop("instance", "shipped").strip()
    if cp.has_section("imm"):
        cp.remove_option("imm", "instance")
    imm = _section(cp, "imm", ImmConfig())
    if instance != "shipped":
        p = Path(instance)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"[imm] instance file {p} does not exist")
        instance = str(p.resolve())

    net = NetConfig(rounds=DEFAULT_ROUNDS[env])
    net = _section(cp, "encoder", net, {"hidden": "encoder_hidden"})
    if cp.has_section("heads"):
        net = _section(cp, "heads", net, {"hidden": "head_hidden"})
    ppo = _section(cp, "ppo", PPOConfig())
    schedule = _section(cp, "schedule", TrainSchedule(seed=seed))
    if cp.has_option("schedule", "seed"):
        raise ConfigError("[schedule] seed belongs in [run]")
    schedule = replace(schedule, seed=seed)
    return RunConfig(env, seed, run.get("out", "runs/default").strip(), rmc, imm, instance, net, ppo, schedule)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), path.parent)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = ["[run]", f"env = {cfg.env}", f"seed = {cfg.seed}", f"out = {cfg.out}", ""]
    lines.append("[rmc]")
    lines += [f"{f.name} = {_fmt(getattr(cfg.rmc, f.name))}" for f in fields(cfg.rmc)]
    lines += ["", "[imm]", f"instance = {cfg.instance}"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.imm, f.name))}" for f in fields(cfg.imm)]
    lines += ["", "[encoder]", f"rounds = {cfg.net.rounds}", f"message_dim = {cfg.net.message_dim}",
              f"hidden = {_fmt(cfg.net.encoder_hidden)}", "",
              "[heads]", f"hidden = {_fmt(cfg.net.head_hidden)}", f"activation = {cfg.net.activation}", ""]
    lines.append("[ppo]")
    lines += [f"{f.name} = {_fmt(getattr(cfg.ppo, f.name))}" for f in fields(cfg.ppo)]
    lines += ["", "[schedule]"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.schedule, f.name))}" for f in fields(cfg.schedule) if f.name != "seed"]
    return "\n".join(lines) + "\n"
