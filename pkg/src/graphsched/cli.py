"""Command-line entry point: ``graphsched {train,eval,baseline,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path


from . import baselines
from .agents import CURVE_COLUMNS, EVAL_COLUMNS, LOG_COLUMNS, evaluate, load_checkpoint, make_bindings, save_checkpoint, train
from .config import ConfigError, RunConfig, dump_config, load_config
from .envs.imm import ImmEnv, validate_schedule
from .gradcheck import run_gradcheck

log = logging.getLogger("graphsched")

MANIFEST = "run-manifest.ini"


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in columns})


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, schedule=replace(cfg.schedule, seed=args.seed))
    if getattr(args, "episodes", None) is not None and args.cmd == "train":
        cfg = replace(cfg, schedule=replace(cfg.schedule, episodes=args.episodes))
    if getattr(args, "out", None):
        cfg = replace(cfg, out=args.out)
    return cfg


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(dump_config(cfg))
    factory = cfg.env_factory()
    bindings = make_bindings(factory(), cfg.net, cfg.seed)
    result = train(factory, bindings, cfg.ppo, cfg.schedule)
    _write_csv(out / "curves.csv", CURVE_COLUMNS, result.curve)
    _write_csv(out / "eval.csv", EVAL_COLUMNS, result.evals)
    _write_csv(out / "train_log.csv", LOG_COLUMNS, result.log)
    save_checkpoint(result.bindings, out / "checkpoints")
    if result.best_bindings is not None:
        save_checkpoint(result.best_bindings, out / "checkpoints" / "best")
    log.info("trained %d episodes; best eval %s", result.episodes_run, result.best_eval)
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: Path, episodes: int) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    factory = cfg.env_factory()
    bindings = load_checkpoint(checkpoint, factory())
    runs = []
    for k in range(episodes):
        seed = cfg.seed + k
        env = factory()
        _, res = evaluate(lambda: env, bindings, 1, seed=seed)
        r = res[0]
        valid = True
        if isinstance(env, ImmEnv):
            valid = validate_schedule(env.trace, env.instance).valid
        runs.append(baselines.RunSummary("trained", seed, r.makespan, r.steps, r.success, valid))
    baselines.write_report(runs, out / "report.csv")
    baselines.write_comparison(baselines.compare(runs), out / "comparison.csv")
    return 0


def cmd_baseline(cfg: RunConfig, rule: str, seeds: int) -> int:
    rule = baselines.DispatchRule.parse(rule)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    factory = cfg.env_factory()
    runs = [baselines.run_dispatch(factory(), rule, cfg.seed + k) for k in range(seeds)]
    baselines.write_report(runs, out / "report.csv")
    baselines.write_comparison(baselines.compare(runs), out / "comparison.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphsched", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="run configuration file")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
        sp.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")

    t = sub.add_parser("train", help="train one agent per resource")
    common(t)
    t.add_argument("--episodes", type=int)
    e = sub.add_parser("eval", help="greedy rollouts of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=1)
    b = sub.add_parser("baseline", help="dispatching-rule rollouts")
    common(b)
    b.add_argument("--rule", required=True, help="FIFO, SPT or RANDOM")
    b.add_argument("--seeds", type=int, default=1)
    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--configs", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "gradcheck":
            report = run_gradcheck(args.configs, args.seed)
            for name, err in report.items():
                print(f"{name}: max relative error {err:.3e}")
            return 0 if max(report.values()) < 1e-4 else 1
        cfg = _resolve(args)
        if args.cmd == "train":
            return cmd_train(cfg)
        if args.cmd == "eval":
            return cmd_eval(cfg, Path(args.checkpoint), args.episodes)
        return cmd_baseline(cfg, args.rule, args.seeds)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, RuntimeError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
