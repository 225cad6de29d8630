"""Acceptance criteria, one test each, at the stated tolerances.

Criteria 6 to 8 train about twenty agents for 300k steps each (roughly an
hour on one CPU core). Finished runs are cached under
``$AIRCOMBAT_ACCEPTANCE_CACHE`` (default ``<repo>/.acceptance_cache``);
training is deterministic, so a cached result equals a fresh one.
"""
import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from aircombat import cli
from aircombat.agent import GreedyPolicy, TrainConfig, train
from aircombat.checkpoint import load_network
from aircombat.env import EnvConfig, Transition
from aircombat.evaluation import TournamentSummary, run_tournament, stacking_sweep
from aircombat.observation import (NoiseModel, RawObservation, corrupt_enemy, normalize,
                                   observe)
from aircombat.qnet import QNetwork, double_dqn_target, loss_and_gradients
from aircombat.reward import compute_reward
from aircombat.selfplay import SelfPlayConfig
from aircombat.sim import (AircraftState, Arena, KinematicsParams, action_from_index,
                           compute_geometry, step_aircraft, wrap_angle)

REPO = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("AIRCOMBAT_ACCEPTANCE_CACHE", REPO / ".acceptance_cache"))

LONG = TrainConfig(total_timesteps=300_000, dtype="float32")
SEEDS = (0, 1, 2)


# ---------------------------------------------------------------- 1. reward oracle

def reference_reward(R, ata_a, ata_e, aa_a, aa_e):
    """The reward pseudo-code line by line, with |ATA| in the formulas."""
    if 0 <= R < 10:
        r = -1
    elif 10 <= R <= 100:
        if abs(ata_a) <= 30 and abs(aa_a) < 60:
            r = 1 - abs(ata_a) / 30
        elif abs(ata_e) <= 30 and abs(aa_e) < 60:
            r = abs(ata_e) / 30 - 1
        else:
            r = 0
    else:
        r = 0
    return r


def test_criterion_01_reward_grid(criterion):
    from aircombat.sim import CombatGeometry
    t0 = time.perf_counter()
    rs = (0, 5, 9.99, 10, 50, 100, 100.01, 150)
    atas = (-45, -30, 0, 15, 30, 45)
    aas = (0, 59, 60, 90)
    mismatches = cases = 0
    for R in rs:
        for ata_a in atas:
            for aa_a in aas:
                for ata_e in atas:
                    for aa_e in aas:
                        g = CombatGeometry(R, ata_a, ata_e, aa_a, aa_e)
                        cases += 1
                        mismatches += compute_reward(g) != reference_reward(
                            R, ata_a, ata_e, aa_a, aa_e)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 1.0
    criterion(1, ok, f"reward grid: {cases} cases, {mismatches} mismatches, {dt:.2f}s (< 1 s)")
    assert ok


# ---------------------------------------------------------------- 2. kinematics

def _rotate(s, theta, dx=0.0, dy=0.0):
    c, si = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    return AircraftState(c * s.x - si * s.y + dx, si * s.x + c * s.y + dy,
                         wrap_angle(s.psi + theta), s.v)


def test_criterion_02_kinematics(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    p, big = KinematicsParams(), Arena(-1e6, 1e6, -1e6, 1e6)
    worst_inv = worst_line = 0.0
    speed_ok = True
    for _ in range(10_000):
        a = AircraftState(*rng.uniform(-200, 200, 2), rng.uniform(-180, 180), rng.uniform(4, 8))
        e = AircraftState(*rng.uniform(-200, 200, 2), rng.uniform(-180, 180), rng.uniform(4, 8))
        g = compute_geometry(a, e)
        theta, dx, dy = rng.uniform(-180, 180), *rng.uniform(-100, 100, 2)
        h = compute_geometry(_rotate(a, theta, dx, dy), _rotate(e, theta, dx, dy))
        worst_inv = max(worst_inv, abs(g.r - h.r))
        for name in ("ata_a", "ata_e", "aa_a", "aa_e"):
            d = abs(getattr(g, name) - getattr(h, name))
            worst_inv = max(worst_inv, min(d, 360 - d))  # -180 and 180 are one angle
        # straight line: no turn and no speed change moves v along the heading
        s = step_aircraft(a, action_from_index(4), p, big)
        worst_line = max(worst_line, abs(s.x - a.x - a.v * math.cos(math.radians(a.psi))),
                         abs(s.y - a.y - a.v * math.sin(math.radians(a.psi))))
        # clipping: any action sequence keeps v within [4, 8], pinned at the ends
        s = a
        for k in rng.integers(9, size=5):
            s = step_aircraft(s, action_from_index(int(k)), p, big)
            speed_ok &= 4.0 <= s.v <= 8.0
    top = AircraftState(0, 0, 0, 8.0)
    bottom = AircraftState(0, 0, 0, 4.0)
    speed_ok &= step_aircraft(top, action_from_index(5), p, big).v == 8.0
    speed_ok &= step_aircraft(bottom, action_from_index(3), p, big).v == 4.0
    dt = time.perf_counter() - t0
    ok = worst_inv < 1e-9 and worst_line < 1e-9 and speed_ok and dt < 5.0
    criterion(2, ok, f"kinematics: invariance max|d|={worst_inv:.1e}, straight line "
                     f"max|d|={worst_line:.1e}, speed clip {'ok' if speed_ok else 'VIOLATED'}, "
                     f"{dt:.2f}s (< 5 s)")
    assert ok


# ---------------------------------------------------------------- 3. noise statistics

def test_criterion_03_noise(criterion):
    t0 = time.perf_counter()
    enemy = AircraftState(10.0, -20.0, 45.0, 6.0)
    worst = 0.0
    for var in (1, 5, 10, 20, 40):
        rng = np.random.default_rng(var)
        nm = NoiseModel(var_xy=var, var_psi=var)
        d = np.array([(s.x - enemy.x, s.y - enemy.y, wrap_angle(s.psi - enemy.psi))
                      for s in (corrupt_enemy(enemy, nm, rng) for _ in range(100_000))])
        worst = max(worst, *np.abs(d.var(axis=0) / var - 1))
    agent = AircraftState(-30.0, 40.0, -120.0, 5.0)
    obs, _ = observe(agent, enemy, NoiseModel(), np.random.default_rng(0), Arena(),
                     KinematicsParams())
    g = compute_geometry(agent, enemy)
    free = normalize(RawObservation(g.r, g.ata_a, g.ata_e, agent.psi, enemy.psi, agent.v,
                                    enemy.v), Arena(), KinematicsParams())
    exact = bool(np.array_equal(obs, free))
    dt = time.perf_counter() - t0
    ok = worst < 0.05 and exact and dt < 10.0
    criterion(3, ok, f"noise: worst relative variance error {worst:.3%} (< 5%), zero-noise "
                     f"pipeline {'exact' if exact else 'DIFFERS'}, {dt:.2f}s (< 10 s)")
    assert ok


# ---------------------------------------------------------------- 4. gradients

def test_criterion_04_gradient_check(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        n_in = int(rng.integers(2, 8))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
        net = QNetwork(n_in, hidden, 9, rng=rng)
        net.flat[...] = rng.normal(0, 0.8, net.flat.size)
        s = rng.normal(size=(5, n_in))
        a = rng.integers(9, size=5)
        y = rng.normal(size=5)
        _, grad = loss_and_gradients(net, s, a, y)
        fd = np.empty_like(grad)
        for i in range(net.flat.size):
            keep = net.flat[i]
            vals = []
            for x in (keep + 1e-6, keep - 1e-6):
                net.flat[i] = x
                q = net.forward(s)[np.arange(5), a]
                vals.append(np.mean((q - y) ** 2))
            net.flat[i] = keep
            fd[i] = (vals[0] - vals[1]) / 2e-6
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(grad - fd) / denom)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 30.0
    criterion(4, ok, f"gradient check: 20 nets, max relative error {worst:.2e} (< 1e-4), "
                     f"{dt:.2f}s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- 5. double DQN target

def _two_state_net(wv, wa):
    net = QNetwork(2, (2,), 3)
    net.params["W0"][...] = np.eye(2)
    net.params["Wv"][...] = wv
    net.params["Wa"][...] = wa
    return net


def test_criterion_05_double_dqn_fixture(criterion):
    online = _two_state_net([[1], [2]], [[0, 1, 2], [3, 0, 0]])
    target = _two_state_net([[0.5], [0.5]], [[2, 0, 1], [0, 0, 3]])
    s0, s1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    # online Q: s0 [0, 1, 2], s1 [4, 1, 1]; target Q: s0 [1.5, -.5, .5], s1 [-.5, -.5, 2.5]
    cases = [(Transition(s0, 0, 1.0, s1, False), 1 + 0.99 * -0.5),
             (Transition(s1, 0, 1.0, s0, False), 1 + 0.99 * 0.5),
             (Transition(s0, 1, -1.0, s1, True), -1.0)]
    err = max(abs(double_dqn_target(online, target, t, 0.99) - y) for t, y in cases)
    x = np.random.default_rng(0).random((10, 2))
    before = online.forward(x)
    online.params["ba"] += 7.25
    shift = float(np.max(np.abs(online.forward(x) - before)))
    ok = err <= 1e-12 and shift <= 1e-12
    criterion(5, ok, f"double DQN targets max error {err:.1e}, dueling shift invariance "
                     f"{shift:.1e} (both <= 1e-12)")
    assert ok


# ---------------------------------------------------------------- 6, 7. stacking sweep

def _sweep(variances):
    return stacking_sweep(variances, [1, 8], LONG, list(SEEDS), var_psi=1.0,
                          cache_dir=CACHE / "sweep", window=100)


@pytest.mark.slow
def test_criterion_06_stacking_trend(criterion):
    res = _sweep([20.0])
    (s1, s8), = res.matrix()
    gain = s8 / s1 - 1
    ok = bool(gain >= 0.20)
    per_seed = {n: [round(res.cells[(20.0, n, s)], 2) for s in SEEDS] for n in (1, 8)}
    criterion(6, ok, f"stacking at var 20: stack=1 {s1:.2f}, stack=8 {s8:.2f}, gain "
                     f"{gain:+.1%} (>= +20%); per seed {per_seed}")
    assert ok


@pytest.mark.slow
def test_criterion_07_stacking_monotone(criterion):
    res = _sweep([1.0, 5.0, 20.0])
    norm = res.normalized()
    ok = bool(np.all(np.diff(norm) >= 0))
    rows = ", ".join(f"var {v:g}: {s1:.2f}/{s8:.2f} -> {nz:.1f}%"
                     for v, (s1, s8), nz in zip(res.variances, res.matrix(), norm))
    criterion(7, ok, f"normalized stacking score non-decreasing in variance: {rows}")
    assert ok


# ---------------------------------------------------------------- 8. self-play

def _trained(name, selfplay, env_cfg):
    run_dir = CACHE / "selfplay" / name
    ckpt = run_dir / "final.ckpt"
    if not ckpt.exists():
        run_dir.mkdir(parents=True, exist_ok=True)
        _, log = train(env_cfg, LONG, selfplay, run_dir=run_dir)
        log.write(run_dir)
    net, _, _ = load_network(ckpt, expected_inputs=env_cfg.obs_size)
    return net


@pytest.mark.slow
def test_criterion_08_selfplay_benefit(criterion):
    env_cfg = EnvConfig(noise=NoiseModel(var_xy=10.0, var_psi=1.0))
    sp = _trained("selfplay_lam0.2", SelfPlayConfig(swap_every=50_000, lam=0.2), env_cfg)
    base = _trained("no_selfplay", None, env_cfg)
    summary, _ = run_tournament(GreedyPolicy(sp), GreedyPolicy(base),
                                replace(env_cfg, terminate_on_advantage=True),
                                episodes=200, base_seed=2024, mirror_pairs=True)
    decided = summary.wins + summary.losses
    ok = summary.win_probability > 0.55 and decided >= 100
    criterion(8, ok, f"self-play vs no self-play at var 10: win {summary.wins} lose "
                     f"{summary.losses} tie {summary.ties}, p={summary.win_probability:.3f} "
                     f"(> 0.55), decided {decided} (>= 100)")
    assert ok


# ---------------------------------------------------------------- 9. table arithmetic

def test_criterion_09_table_arithmetic(criterion):
    published = [(726, 99, 175, "0.88"), (753, 102, 145, "0.88"),
                 (758, 109, 133, "0.87"), (574, 309, 117, "0.65")]
    got = [TournamentSummary(w, l, t).format_probability() for w, l, t, _ in published]
    ok = got == [p for *_, p in published] and got[0] == "0.88"
    criterion(9, ok, f"win/(win+lose) from counts: {got} (published "
                     f"{[p for *_, p in published]})")
    assert ok


# ---------------------------------------------------------------- 10. determinism

def _files(run_dir):
    return {p.relative_to(run_dir).as_posix(): p.read_bytes()
            for p in sorted(Path(run_dir).rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def test_criterion_10_determinism(criterion, tmp_path):
    small = ["--total-timesteps", "1500", "--batch-size", "16", "--hidden-sizes", "16,16",
             "--noise-var-xy", "10", "--stack-n", "2", "--checkpoint-every", "500",
             "--episode-length", "100", "--seed", "5"]
    compared, diffs = 0, []
    for k in (0, 1):
        assert cli.main(["train", *small, "--out", str(tmp_path / f"r{k}"), "--name", "t"]) == 0
    ckpt = tmp_path / "r0" / "t" / "final.ckpt"
    cfg_file = tmp_path / "r0" / "t" / "config.txt"
    for k in (0, 1):
        assert cli.main(["evaluate", str(ckpt), "random", "--config", str(cfg_file),
                         "--eval-episodes", "40", "--out", str(tmp_path / f"r{k}"),
                         "--name", "e"]) == 0
        assert cli.main(["sweep", "--batch-size", "16", "--hidden-sizes", "16,16",
                         "--sweep-variances", "1,10", "--sweep-stack-ns", "1,2",
                         "--sweep-seeds", "0,1", "--episode-length", "100",
                         "--total-timesteps", "600", "--log-window", "2",
                         "--out", str(tmp_path / f"r{k}"), "--name", "s"]) == 0
    for name in ("t", "e", "s"):
        a, b = _files(tmp_path / "r0" / name), _files(tmp_path / "r1" / name)
        compared += len(a)
        diffs += [f"{name}/{f}" for f in sorted(set(a) | set(b)) if a.get(f) != b.get(f)]
    # the echoed config reproduces the run
    assert cli.main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r2"),
                     "--name", "t"]) == 0
    replay = _files(tmp_path / "r2" / "t")
    diffs += [f"replay/{f}" for f, blob in _files(tmp_path / "r0" / "t").items()
              if replay.get(f) != blob]
    m0 = json.loads((tmp_path / "r0" / "t" / "manifest.json").read_text())
    m1 = json.loads((tmp_path / "r1" / "t" / "manifest.json").read_text())
    if m0["artifacts"] != m1["artifacts"] or m0["config_hash"] != m1["config_hash"]:
        diffs.append("manifest inventory")
    ok = not diffs and compared > 10
    criterion(10, ok, f"determinism: {compared} files from train/evaluate/sweep compared "
                      f"byte for byte, config replay included, differences: {diffs or 'none'}")
    assert ok
