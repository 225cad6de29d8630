"""Command-line entry point: ``aircombat {train,evaluate,sweep,play}``.

Every command writes into a fresh run directory under the output root
(``--out``, else ``$AIRCOMBAT_OUTPUT_ROOT``, else ``./runs``). Existing
directories are never overwritten; a numeric suffix is added instead.

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 shape mismatch, 4 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agent import GreedyPolicy, RandomPolicy, train
from .checkpoint import load_network
from .env import AirCombatEnv
from .evaluation import (episode_seed, format_summary, play_episode, run_tournament,
                         stacking_sweep, training_curves, write_match_records,
                         write_summary, write_table)
from .exceptions import ConfigError, ShapeError, TrainingDivergenceError
from .runconfig import SCHEMA, RunConfig

log = logging.getLogger("aircombat")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SHAPE, EXIT_DIVERGED = 0, 1, 2, 3, 4
OUTPUT_ROOT_ENV = "AIRCOMBAT_OUTPUT_ROOT"
MANIFEST = "manifest.json"


# ---------------------------------------------------------------- run directories

def output_root(cli_value=None) -> Path:
    return Path(cli_value or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


def make_run_dir(root, name: str) -> Path:
    """Create ``root/name``; on collision try ``name-1``, ``name-2``, ..."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k in range(10_000):
        path = root / (name if k == 0 else f"{name}-{k}")
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise ConfigError(f"could not find a free run directory for {name!r} in {root}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class RunManifest:
    """``manifest.json``: config echo, config hash, timestamps, artifact inventory."""

    def __init__(self, run_dir: Path, command: str, config: RunConfig, argv=None):
        self.path = Path(run_dir) / MANIFEST
        self.data = {
            "command": command,
            "argv": list(argv or []),
            "config": {k: config.values[k] for k in SCHEMA},
            "config_hash": config.content_hash(),
            "started": _now(),
            "finished": None,
            "status": "running",
            "artifacts": [],
        }
        self.write()

    def write(self) -> None:
        _atomic_write(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finalize(self, status: str, **extra) -> None:
        root = self.path.parent
        inventory = []
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp"):
                inventory.append({"path": p.relative_to(root).as_posix(),
                                  "bytes": p.stat().st_size,
                                  "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        self.data.update(status=status, finished=_now(), artifacts=inventory, **extra)
        self.write()


def start_run(args, command: str, config: RunConfig, run_dir=None):
    if run_dir is None:
        name = config["run.name"] or command
        run_dir = make_run_dir(output_root(args.out), name)
    run_dir = Path(run_dir)
    (run_dir / "config.txt").write_text(config.to_text())
    manifest = RunManifest(run_dir, command, config, sys.argv[1:])
    log.info("run directory %s", run_dir)
    return run_dir, manifest


# ---------------------------------------------------------------- policies

def load_policy(spec: str, n_inputs: int, seed: int):
    """``random`` (seeded uniform actions) or a checkpoint path (greedy)."""
    if spec == "random":
        return RandomPolicy(np.random.SeedSequence([seed, 0xE7A1])), "random"
    net, _, _ = load_network(spec, expected_inputs=n_inputs)
    return GreedyPolicy(net), Path(spec).name


# ---------------------------------------------------------------- commands

def cmd_train(args, config: RunConfig) -> int:
    run_dir, manifest = start_run(args, "train", config)
    env_cfg = config.env_config()
    tcfg = config.train_config()

    def progress(ep):
        if ep["episode"] % 100 == 0:
            log.info("episode %d step %d score %.2f eps %.3f", ep["episode"], ep["step"],
                     ep["score"], ep["epsilon"])

    try:
        _, tlog = train(env_cfg, tcfg, config.selfplay_config(), run_dir=run_dir,
                        resume=args.resume, callback=progress)
    except TrainingDivergenceError as exc:
        manifest.finalize("diverged", divergence=_jsonable(exc.payload))
        raise
    tlog.write(run_dir)
    table = training_curves([tlog], tcfg.log_window)
    write_table(run_dir / "curve.csv", table)
    _plot_curve(run_dir / "curve.png", tlog, tcfg.log_window)
    best = tlog.best_smoothed()
    manifest.finalize("ok", best_smoothed_score=None if math.isnan(best) else best,
                      episodes=len(tlog.episodes))
    print(run_dir)
    return EXIT_OK


def cmd_evaluate(args, config: RunConfig) -> int:
    env_cfg = config.env_config(terminate_on_advantage=True)
    n_inputs = env_cfg.obs_size
    base = config["eval.base_seed"]
    pol_a, label_a = load_policy(args.agent, n_inputs, base)
    pol_b, label_b = load_policy(args.enemy, n_inputs, base + 1)
    run_dir, manifest = start_run(args, "evaluate", config)
    summary, records = run_tournament(pol_a, pol_b, env_cfg, episodes=config["eval.episodes"],
                                      base_seed=base, mirror_pairs=config["eval.mirror_pairs"])
    write_summary(run_dir / "summary.csv", summary, label_a, label_b)
    write_match_records(run_dir / "matches.csv", records)
    report = format_summary(summary, label_a, label_b)
    (run_dir / "report.txt").write_text(report)
    manifest.finalize("ok", wins=summary.wins, losses=summary.losses, ties=summary.ties)
    print(report, end="")
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        if not (run_dir / MANIFEST).exists():
            raise ConfigError(f"{run_dir} is not a sweep run directory")
        old = json.loads((run_dir / MANIFEST).read_text())
        if old["config_hash"] != config.content_hash():
            raise ConfigError("resume config differs from the original sweep config; "
                              f"pass --config {run_dir / 'config.txt'}")
        run_dir, manifest = start_run(args, "sweep", config, run_dir=run_dir)
    else:
        run_dir, manifest = start_run(args, "sweep", config)
    tcfg = config.train_config()

    def progress(key, best, status):
        log.info("cell var=%s n=%s seed=%s: %s %s", *key, status, best)

    result = stacking_sweep(config["sweep.variances"], config["sweep.stack_ns"], tcfg,
                            config["sweep.seeds"], env_cfg=config.env_config(),
                            var_psi=config["noise.var_psi"], cache_dir=run_dir / "cells",
                            progress=progress)
    result.write(run_dir)
    for var in result.variances:
        for n in result.stack_ns:
            logs = [result.logs[(var, n, s)] for s in result.seeds if (var, n, s) in result.logs]
            if logs:
                write_table(run_dir / f"curve_var{var:g}_stack{n}.csv",
                            training_curves(logs, tcfg.log_window))
    failed = [k for k, s in result.status.items() if s != "ok"]
    manifest.finalize("ok" if not failed else "partial",
                      failed_cells=[list(k) for k in failed])
    print(result.report(), end="")
    return EXIT_OK


def cmd_play(args, config: RunConfig) -> int:
    env_cfg = config.env_config(terminate_on_advantage=config["play.stop_on_advantage"])
    base = config["play.base_seed"]
    pol_a, label_a = load_policy(args.agent, env_cfg.obs_size, base)
    pol_b, label_b = load_policy(args.enemy, env_cfg.obs_size, base + 1)
    run_dir, manifest = start_run(args, "play", config)
    env = AirCombatEnv(env_cfg, record=True)
    rows = []
    for i in range(config["play.episodes"]):
        seed = episode_seed(base, i)
        status, steps, sa, se = play_episode(env, pol_a, pol_b, seed=seed)
        trace = run_dir / f"trace_{i:04d}.csv"
        env.write_trace(trace)
        rms = perceived_rms_deviation(trace)
        plot_trace(trace, run_dir / f"trace_{i:04d}.png", title=f"{label_a} vs {label_b}, "
                   f"episode {i} ({status.value})")
        rows.append([i, seed, status.value, steps, repr(float(sa)), repr(float(se)), repr(rms)])
    with open(run_dir / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "seed", "status", "steps", "agent_score", "enemy_score",
                    "perceived_rms_deviation"])
        w.writerows(rows)
    manifest.finalize("ok")
    print(run_dir)
    return EXIT_OK


# ---------------------------------------------------------------- traces and plots

def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for key in rows[0]:
        if key == "status":
            cols[key] = [r[key] for r in rows]
        else:
            cols[key] = np.array([float(r[key]) for r in rows])
    return cols


def perceived_rms_deviation(path) -> float:
    """RMS distance between the enemy's true and agent-perceived positions."""
    t = read_trace(path)
    d2 = (t["agent_sees_x"] - t["enemy_x"]) ** 2 + (t["agent_sees_y"] - t["enemy_y"]) ** 2
    return float(np.sqrt(d2.mean()))


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_trace(trace_path, image_path, title="") -> None:
    """Static plot of true tracks and the enemy track as the agent perceived it."""
    t = read_trace(trace_path)
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(t["agent_x"], t["agent_y"], "-", color="tab:blue", label="agent (true)")
    ax.plot(t["enemy_x"], t["enemy_y"], "-", color="tab:red", label="enemy (true)")
    ax.plot(t["agent_sees_x"], t["agent_sees_y"], ".", color="tab:orange", ms=3,
            label="enemy (perceived by agent)")
    ax.plot(t["agent_x"][:1], t["agent_y"][:1], "o", color="tab:blue")
    ax.plot(t["enemy_x"][:1], t["enemy_y"][:1], "o", color="tab:red")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.savefig(image_path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_curve(image_path, tlog, window) -> None:
    if not tlog.episodes:
        return
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(tlog.scores, color="0.8", lw=0.5, label="episode score")
    smooth = tlog.smoothed(window)
    ax.plot(np.arange(len(tlog.scores) - len(smooth), len(tlog.scores)), smooth,
            color="tab:blue", label=f"moving average ({window})")
    ax.set_xlabel("episode")
    ax.set_ylabel("score")
    ax.legend(loc="best")
    fig.savefig(image_path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ---------------------------------------------------------------- argument parsing

def _flag_names() -> dict:
    """Map each config key to its flags: ``--section-key`` plus ``--key`` when unique."""
    counts = {}
    for key in SCHEMA:
        counts[key.split(".", 1)[1]] = counts.get(key.split(".", 1)[1], 0) + 1
    out = {}
    for key in SCHEMA:
        section, name = key.split(".", 1)
        flags = ["--" + f"{section}_{name}".replace("_", "-")]
        short = "--" + name.replace("_", "-")
        if counts[name] == 1 and short not in flags and name not in ("seed", "name"):
            flags.append(short)
        out[key] = flags
    out["run.seed"] = ["--seed"]
    out["run.name"] = ["--name"]
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aircombat", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")
    group = common.add_argument_group("config keys")
    for key, flags in _flag_names().items():
        group.add_argument(*flags, dest="cfg:" + key, default=None, metavar="V",
                           help=f"{key} (default {SCHEMA[key]!r})")

    p = sub.add_parser("train", parents=[common], help="train an agent")
    p.add_argument("--resume", help="checkpoint to continue training from")

    for name, help_text in (("evaluate", "Monte Carlo tournament between two agents"),
                            ("play", "roll out episodes and write traces and plots")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("agent", help="checkpoint path or 'random'")
        p.add_argument("enemy", help="checkpoint path or 'random'")
        p.add_argument("--episodes", dest=f"cfg:{'eval' if name == 'evaluate' else 'play'}"
                       ".episodes", metavar="N", default=None)

    p = sub.add_parser("sweep", parents=[common], help="stack count versus noise sweep")
    p.add_argument("--resume", help="existing sweep run directory to complete")

    sub.add_parser("config", parents=[common], help="print the effective config")
    return parser


def resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig.defaults()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val
    for attr, val in vars(args).items():
        if attr.startswith("cfg:") and val is not None:
            overrides[attr[4:]] = val
    return config.with_overrides(overrides) if overrides else config


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "play": cmd_play}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "config":
            print(config.to_text(), end="")
            return EXIT_OK
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShapeError as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc} {_jsonable(exc.payload)}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
