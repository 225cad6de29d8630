"""Monte Carlo tournaments, the stacking-versus-noise sweep and curve tables."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import AirCombatEnv, EnvConfig, Status
from .exceptions import ContractError, TrainingDivergenceError
from .observation import NoiseModel

log = logging.getLogger(__name__)


class MatchResult(enum.Enum):
    AGENT_WIN = "win"
    ENEMY_WIN = "lose"
    TIE = "tie"


@dataclass(frozen=True)
class MatchRecord:
    episode: int
    result: MatchResult
    steps: int
    agent_score: float
    enemy_score: float
    seed: int
    status: str = ""
    mirrored: bool = False


@dataclass(frozen=True)
class TournamentSummary:
    wins: int
    losses: int
    ties: int

    @property
    def episodes(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def win_probability(self) -> float:
        """wins / (wins + losses); NaN when no episode was decided."""
        decided = self.wins + self.losses
        return self.wins / decided if decided else float("nan")

    @classmethod
    def from_records(cls, records) -> TournamentSummary:
        results = [r.result for r in records]
        return cls(results.count(MatchResult.AGENT_WIN),
                   results.count(MatchResult.ENEMY_WIN),
                   results.count(MatchResult.TIE))

    def format_probability(self) -> str:
        p = self.win_probability
        return "undefined" if math.isnan(p) else f"{p:.2f}"


_STATUS_RESULT = {
    Status.AGENT_WIN: MatchResult.AGENT_WIN,
    Status.ENEMY_WIN: MatchResult.ENEMY_WIN,
    Status.CRASH: MatchResult.TIE,
    Status.TIMEOUT: MatchResult.TIE,
}


def play_episode(env: AirCombatEnv, policy_a, policy_b, seed=None,
                 swap_sides=False, initial_states=None):
    """Roll out one episode; returns ``(status, steps, agent_score, enemy_score)``."""
    obs_a, obs_e = env.reset(seed=seed, initial_states=initial_states,
                             swap_sides=swap_sides)
    score_a = score_e = 0.0
    while True:
        res = env.step(policy_a(obs_a), policy_b(obs_e))
        score_a += res.reward_agent
        score_e += res.reward_enemy
        obs_a, obs_e = res.obs_agent, res.obs_enemy
        if res.done:
            return res.status, env.steps, score_a, score_e


def episode_seed(base_seed: int, index: int) -> int:
    """Deterministic, well-mixed 63-bit seed for one tournament episode."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(2, np.uint64)[0]
               >> np.uint64(1))


def run_tournament(policy_a: Callable, policy_b: Callable, cfg: EnvConfig,
                   episodes: int = 1000, base_seed: int = 0,
                   mirror_pairs: bool = False, initial_states=None):
    """Play ``episodes`` independent matches of ``policy_a`` (agent seat) vs ``policy_b``.

    Episode ``i`` is seeded from ``(base_seed, i)``. With ``mirror_pairs``
    episodes come in pairs sharing one seed, the second with sides swapped,
    so any positional luck is shared equally between the two policies.

    Returns ``(TournamentSummary, list[MatchRecord])``.
    """
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    if not cfg.terminate_on_advantage:
        raise ContractError("tournaments need terminate_on_advantage=True")
    env = AirCombatEnv(cfg)
    records = []
    for i in range(episodes):
        if mirror_pairs:
            seed, swap = episode_seed(base_seed, i // 2), bool(i % 2)
        else:
            seed, swap = episode_seed(base_seed, i), False
        status, steps, sa, se = play_episode(env, policy_a, policy_b, seed, swap,
                                             initial_states)
        records.append(MatchRecord(i, _STATUS_RESULT[status], steps, sa, se, seed,
                                   status.value, swap))
    return TournamentSummary.from_records(records), records


MATCH_HEADER = ("episode", "result", "status", "steps", "agent_score",
                "enemy_score", "seed", "mirrored")


def write_match_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MATCH_HEADER)
        for r in sorted(records, key=lambda r: r.episode):
            w.writerow([r.episode, r.result.value, r.status, r.steps,
                        repr(float(r.agent_score)), repr(float(r.enemy_score)), r.seed, int(r.mirrored)])


def write_summary(path, summary: TournamentSummary, label_a="agent", label_b="enemy") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "enemy", "win", "lose", "tie", "win_probability"])
        w.writerow([label_a, label_b, summary.wins, summary.losses, summary.ties,
                    summary.format_probability()])


def format_summary(summary: TournamentSummary, label_a="agent", label_b="enemy") -> str:
    return (f"{label_a} vs {label_b}: {summary.episodes} episodes\n"
            f"  win  {summary.wins}\n  lose {summary.losses}\n  tie  {summary.ties}\n"
            f"  win probability win/(win+lose) = {summary.format_probability()}\n")


# ---------------------------------------------------------------- curves

def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over full windows only.

    A sequence shorter than ``window`` collapses to its overall mean.
    """
    if window < 1:
        raise ContractError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return values
    if len(values) < window:
        return np.array([values.mean()])
    csum = np.cumsum(np.concatenate([[0.0], values]))
    return (csum[window:] - csum[:-window]) / window


def training_curves(logs: Sequence, window: int = 100) -> dict:
    """Smooth several per-episode score logs and aggregate them across seeds.

    ``logs`` holds score sequences or TrainingLog objects. Curves are aligned
    on episode index and cut to the shortest run. The result maps column
    names to equal-length arrays: ``episode``, ``seed_<k>``, ``mean``, ``std``
    and, for TrainingLog inputs, ``step`` (mean environment step).
    """
    if window < 1:
        raise ContractError("window must be >= 1")
    if not logs:
        return {"episode": np.array([]), "mean": np.array([]), "std": np.array([])}
    score_seqs, step_seqs = [], []
    for entry in logs:
        if hasattr(entry, "episodes"):
            score_seqs.append(entry.scores)
            step_seqs.append(np.array([e["step"] for e in entry.episodes], dtype=float))
        else:
            score_seqs.append(np.asarray(entry, dtype=float))
    n = min(len(s) for s in score_seqs)
    smoothed = [moving_average(s[:n], window) if n >= window else
                moving_average(s[:n], 1) for s in score_seqs]
    m = len(smoothed[0])
    table = {"episode": np.arange(n - m, n)}
    if step_seqs and len(step_seqs) == len(score_seqs):
        table["step"] = np.mean([s[:n][n - m:] for s in step_seqs], axis=0)
    for k, curve in enumerate(smoothed):
        table[f"seed_{k}"] = curve
    stacked = np.vstack(smoothed)
    table["mean"] = stacked.mean(axis=0)
    table["std"] = stacked.std(axis=0)
    return table


def write_table(path, table: dict) -> None:
    cols = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(table[c] for c in cols)):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        for v in row])


# ---------------------------------------------------------------- stacking sweep

def normalized_stacking_score(row: Sequence[float]) -> float:
    """100 * best score over stacked columns / score of the first (unstacked) column.

    A row with a single column scores exactly 100.
    """
    row = [float(v) for v in row]
    if len(row) == 1:
        return 100.0
    best = max((v for v in row[1:] if not math.isnan(v)), default=float("nan"))
    return 100.0 * best / row[0]


@dataclass
class SweepResult:
    variances: list
    stack_ns: list
    seeds: list
    cells: dict = field(default_factory=dict)   # (var, n, seed) -> best smoothed score
    status: dict = field(default_factory=dict)  # (var, n, seed) -> "ok" | "diverged" | error text
    logs: dict = field(default_factory=dict)    # (var, n, seed) -> TrainingLog

    def matrix(self) -> np.ndarray:
        """Seed-averaged best scores, rows = noise variances, columns = stack counts."""
        out = np.full((len(self.variances), len(self.stack_ns)), np.nan)
        for i, var in enumerate(self.variances):
            for j, n in enumerate(self.stack_ns):
                vals = [self.cells[(var, n, s)] for s in self.seeds
                        if self.status.get((var, n, s)) == "ok"]
                if vals:
                    out[i, j] = float(np.mean(vals))
        return out

    def normalized(self) -> np.ndarray:
        return np.array([normalized_stacking_score(row) for row in self.matrix()])

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        mat, norm = self.matrix(), self.normalized()
        with open(directory / "table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["noise_var_xy"] + [f"stack_{n}" for n in self.stack_ns]
                       + ["normalized_stacking_score"])
            for var, row, nz in zip(self.variances, mat, norm):
                w.writerow([_fmt(var)] + [_fmt(v) for v in row] + [_fmt(nz)])
        with open(directory / "cells.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["noise_var_xy", "stack_n", "seed", "best_smoothed_score", "status"])
            for (var, n, s), val in sorted(self.cells.items()):
                w.writerow([_fmt(var), n, s, _fmt(val), self.status[(var, n, s)]])
        (directory / "table.txt").write_text(self.report())

    def report(self) -> str:
        mat, norm = self.matrix(), self.normalized()
        head = ["noise var"] + [f"stack={n}" for n in self.stack_ns] + ["normalized"]
        lines = ["  ".join(f"{h:>10}" for h in head)]
        for var, row, nz in zip(self.variances, mat, norm):
            best = np.nanargmax(row) if not np.all(np.isnan(row)) else -1
            cells = [(f"*{v:.2f}" if j == best else f"{v:.2f}") for j, v in enumerate(row)]
            lines.append("  ".join(f"{c:>10}" for c in [_fmt(var)] + cells + [f"{nz:.2f}%"]))
        failed = [k for k, s in self.status.items() if s != "ok"]
        if failed:
            lines.append("failed cells: " + ", ".join(
                f"var={v} n={n} seed={s} ({self.status[(v, n, s)]})" for v, n, s in sorted(failed)))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.4f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def cell_dir(root, var, n, seed) -> Path:
    return Path(root) / f"var{_fmt(var)}_stack{n}_seed{seed}"


def stacking_sweep(noise_variances, stack_ns, train_cfg, seeds, env_cfg: EnvConfig | None = None,
                   var_psi: float = 1.0, cache_dir=None, window: int | None = None,
                   progress: Callable | None = None) -> SweepResult:
    """Train one agent per (variance, stack count, seed) cell, without self-play.

    Each cell records the best moving-average episode score. With
    ``cache_dir`` every finished cell is persisted and reused on the next
    call, so an interrupted sweep resumes where it stopped.
    """
    from .agent import TrainingLog, train

    if not noise_variances or not stack_ns or not seeds:
        raise ContractError("sweep grids must be non-empty")
    env_cfg = env_cfg or EnvConfig()
    window = window or train_cfg.log_window
    result = SweepResult(list(noise_variances), list(stack_ns), list(seeds))
    for var in noise_variances:
        for n in stack_ns:
            for seed in seeds:
                key = (var, n, seed)
                cdir = cell_dir(cache_dir, var, n, seed) if cache_dir else None
                info = None
                if cdir is not None and (cdir / "done.json").exists():
                    info = json.loads((cdir / "done.json").read_text())
                # errored cells are retried; divergence is a result and is kept
                if info is not None and info["status"] in ("ok", "diverged"):
                    result.status[key] = info["status"]
                    result.cells[key] = float(info["best"]) if info["best"] is not None else float("nan")
                    if info["status"] == "ok":
                        result.logs[key] = TrainingLog.read(cdir, window)
                    continue
                cfg = replace(env_cfg, noise=NoiseModel(env_cfg.noise.mu, var, var_psi),
                              stack_n=n, rng_seed=seed, terminate_on_advantage=False)
                tcfg = replace(train_cfg, seed=seed)
                if cdir is not None:
                    cdir.mkdir(parents=True, exist_ok=True)
                try:
                    _, tlog = train(cfg, tcfg, run_dir=cdir)
                    best = tlog.best_smoothed(window)
                    result.cells[key], result.status[key] = best, "ok"
                    result.logs[key] = tlog
                except TrainingDivergenceError as exc:
                    log.warning("cell %s diverged: %s", key, exc.payload)
                    result.cells[key], result.status[key] = float("nan"), "diverged"
                except Exception as exc:  # noqa: BLE001 - isolate per-cell failures
                    log.exception("cell %s failed", key)
                    result.cells[key], result.status[key] = float("nan"), f"error: {exc}"
                if cdir is not None:
                    if key in result.logs:
                        result.logs[key].write(cdir)
                    best = result.cells[key]
                    (cdir / "done.json").write_text(json.dumps(
                        {"status": result.status[key],
                         "best": None if math.isnan(best) else best}, sort_keys=True))
                if progress is not None:
                    progress(key, result.cells[key], result.status[key])
    return result
