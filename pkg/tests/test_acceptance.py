"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s or check captured output).

Criterion 7 trains the desk-scale model (2000 demonstration episodes plus
2000 refinement episodes, roughly an hour on one core). The resulting
checkpoint is cached under tests/_cache keyed by the exact configuration;
delete that directory to force a retrain. Criteria 8 and 9 reuse it.
"""

import dataclasses
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import adaptnav.autodiff as ad
from adaptnav import cli, metrics, orca, policy, reward, sim, training, value_net
from adaptnav.env_model import AdaptiveGruStack, GruCell, halt_depth
from adaptnav.policy import OrcaPolicy, ValuePolicy, build_action_space
from adaptnav.sim import AgentState, SimConfig
from adaptnav.training import TrainConfig

from test_reward import make_obstacle, mc_collision_probability

CACHE_DIR = Path(__file__).parent / "_cache"

DESK_TRAIN = TrainConfig(seed=0)  # defaults are the desk-scale budget
DESK_SIM = SimConfig(n_obstacles=5, visibility="invisible")
DESK_REWARD = reward.RewardParams()
EVAL_EPISODES = 100
EVAL_SEED = 7000


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _specimen_net(seed):
    hyper = value_net.default_hyper(hidden_dim=8, gate_hidden=10, model_dim=12,
                                    n_heads=2, head_hidden=[10, 7, 5])
    return value_net.ValueNetwork(hyper=hyper, seed=seed)


def _checked_points(make_build_and_params, n_points, max_coords, tol,
                    kink_floor=1e-4):
    """Run grad_check at n_points random draws, skipping draws whose forward
    pass sits within a finite-difference step of a relu kink or whose output
    is gradient-dead."""
    worst = 0.0
    checked = 0
    seed = 0
    while checked < n_points:
        seed += 1
        assert seed < 40 * n_points, "could not find enough smooth points"
        build, params = make_build_and_params(seed)
        out = build()
        if ad.relu_kink_margin(out) < kink_floor:
            continue
        out.backward()
        alive = any(p.grad is not None and np.abs(p.grad).max() > 0
                    for p in params)
        for p in params:
            p.grad = None
        if not alive:
            continue
        err = ad.grad_check(build, params, max_coords=max_coords,
                            rng=np.random.default_rng(seed))
        worst = max(worst, err)
        checked += 1
        assert err < tol, f"seed {seed}: gradient error {err:.2e}"
    return worst


def test_criterion_1_gradient_correctness():
    started = time.time()
    tol = 1e-4
    results = {}

    def gru_point(seed):
        cell = GruCell(np.random.default_rng(seed), 12, 8, 10, "g")
        rng = np.random.default_rng(1000 + seed)
        h0 = rng.normal(size=(3, 8))
        s = rng.normal(size=(3, 12))

        def build():
            h = cell.step(ad.Tensor(h0), ad.Tensor(s))
            return ad.mean_all(ad.mul(h, h))

        return build, cell.parameters()

    results["gru_cell"] = _checked_points(gru_point, 10, 120, tol)

    def halting_point(seed):
        stack = AdaptiveGruStack(np.random.default_rng(seed), input_dim=12,
                                 hidden_dim=8, gate_hidden=10)
        s = np.random.default_rng(2000 + seed).normal(size=(3, 12))

        def build():
            out = stack.forward(s, fixed_depth=3)
            return ad.mean_all(ad.mul(out.features, out.features))

        return build, stack.halting.parameters()

    results["halting_unit"] = _checked_points(halting_point, 10, 51, tol)

    def attention_point(seed):
        net = _specimen_net(seed)
        s = np.random.default_rng(3000 + seed).normal(size=(4, 12))

        def build():
            v, _ = net.value_tensor(s)
            return ad.mul(v, v)

        return build, net.encoder.parameters()

    results["attention_block"] = _checked_points(attention_point, 10, 120, tol)

    def head_point(seed):
        net = _specimen_net(100 + seed)
        s = np.random.default_rng(4000 + seed).normal(size=(4, 12))

        def build():
            v, _ = net.value_tensor(s)
            return ad.mul(v, v)

        return build, net.head.parameters()

    results["value_head"] = _checked_points(head_point, 10, 120, tol)

    def full_loss_point(seed):
        net = _specimen_net(200 + seed)
        rng = np.random.default_rng(5000 + seed)
        states = [rng.normal(size=(4, 12)), rng.normal(size=(6, 12))]
        targets = ad.Tensor(rng.normal(size=(2, 1)) * 0.5)

        def build():
            return ad.mse(net.batch_values(states), targets)

        return build, net.parameters()

    results["full_value_loss"] = _checked_points(full_loss_point, 10, 150, tol)

    elapsed = time.time() - started
    worst = max(results.values())
    ok = worst < tol and elapsed < 120.0
    report(1, ok, f"max rel err {worst:.2e} over {results} in {elapsed:.0f}s")
    assert worst < tol
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 2. reward oracle


def test_criterion_2_reward_matches_monte_carlo_oracle():
    params = DESK_REWARD
    worst = 0.0
    for trial in range(20):
        gen = np.random.default_rng(8800 + trial)
        obstacles = [make_obstacle(*gen.uniform(-1.5, 1.5, size=2),
                                   vx=float(gen.uniform(-1, 1)),
                                   vy=float(gen.uniform(-1, 1)))
                     for _ in range(gen.integers(1, 5))]
        agent = AgentState(*gen.uniform(-1.0, 1.0, size=2), 0.0, 0.0, 4.0, 0.0)
        action = tuple(gen.uniform(-1, 1, size=2) * 0.7)
        field = reward.build_field(obstacles, params)
        grid_p = reward.collision_probability(agent, action, field, params)
        mc_p = mc_collision_probability(obstacles, agent, action, params, gen,
                                        n_samples=100_000)
        worst = max(worst, abs(grid_p - mc_p))
        assert abs(grid_p - mc_p) <= 0.02, (trial, grid_p, mc_p)

    # branch values are exact
    robot = AgentState(0.0, 0.0, 0.0, 0.0, 0.2, 0.0)
    arrive, kind = reward.evaluate(
        sim.SimState(robot, [], 0.0, SimConfig(n_obstacles=0)), (0.8, 0.0), params)
    assert (arrive, kind) == (1.0, "arrival")
    blocked = sim.SimState(AgentState(0.0, 0.0, 0.0, 0.0, 4.0, 0.0, radius=0.2),
                           [make_obstacle(0.5, 0.0, radius=0.2)], 0.0,
                           SimConfig(n_obstacles=1))
    collide, kind = reward.evaluate(blocked, (0.8, 0.0), params)
    assert (collide, kind) == (-0.25, "collision")
    for p, beta in ((0.1, 2.0), (0.3, 1.0), (0.05, 4.0)):
        assert reward.collision_penalty(p, beta) == -0.25 * p * beta

    report(2, True, f"20 scenes, worst |grid-MC| {worst:.4f} <= 0.02; "
                    f"branches 1 / -0.25 / -0.25*p*beta exact")


# ---------------------------------------------------------------------------
# 3. halting rule


def test_criterion_3_halting_minimality_fuzz():
    depths_seen = set()
    for trial in range(1000):
        gen = np.random.default_rng(trial)
        stack = AdaptiveGruStack(np.random.default_rng(31_000 + trial),
                                 input_dim=12, hidden_dim=8, gate_hidden=10)
        stack.halting.b.data[...] += gen.uniform(-4.0, 4.0)
        s = gen.normal(size=(int(gen.integers(1, 8)), 12))
        out = stack.forward(s)
        assert 1 <= out.depth <= 3
        assert out.depth == halt_depth(out.halt_probs, stack.eps)
        if out.depth > 1:
            assert sum(out.halt_probs[:out.depth - 1]) < 1.0 - stack.eps
        depths_seen.add(out.depth)
    assert depths_seen == {1, 2, 3}, f"fuzz only reached depths {depths_seen}"
    report(3, True, "1000 cases: depth is minimal with cumulative confidence "
                    ">= 0.95 or capped at 3; all depths exercised")


# ---------------------------------------------------------------------------
# 4. permutation invariance


def test_criterion_4_permutation_invariance():
    net = value_net.ValueNetwork(seed=3)  # full-size network
    worst = 0.0
    gen = np.random.default_rng(42)
    for _ in range(100):
        n = int(gen.integers(2, 11))
        obs = sim.observe(sim.reset(SimConfig(n_obstacles=n),
                                    int(gen.integers(100_000))))
        v = net.state_value(obs)
        perm = np.concatenate([[0], gen.permutation(np.arange(1, n + 1))])
        delta = abs(v - net.state_value(obs[perm]))
        worst = max(worst, delta)
        assert delta <= 1e-9
    report(4, True, f"100 trials, worst |dv| {worst:.2e} <= 1e-9")


# ---------------------------------------------------------------------------
# 5. ORCA safety


def test_criterion_5_all_orca_crowd_is_collision_free():
    episodes = 100
    agents_total = 0
    agents_arrived = 0
    collisions = 0
    cfg = SimConfig(n_obstacles=5, visibility="visible")
    driver = OrcaPolicy()
    for episode in range(episodes):
        state = sim.reset(cfg, seed=50_000 + episode)
        arrived = [False] * 6
        for _ in range(int(cfg.time_limit / cfg.dt)):
            state, _ = sim.step(state, driver.act(state))
            if sim.pairwise_min_separation(state) < 0.0:
                collisions += 1
            for i, agent in enumerate([state.robot] + state.obstacles):
                if agent.goal_distance() < cfg.arrival_threshold:
                    arrived[i] = True
            if all(arrived):
                break
        agents_total += 6
        agents_arrived += sum(arrived)
    arrival_rate = agents_arrived / agents_total
    ok = collisions == 0 and arrival_rate >= 0.95
    report(5, ok, f"{episodes} visible episodes: {collisions} collision steps, "
                  f"{arrival_rate:.3f} of agents reached goals")
    assert collisions == 0
    assert arrival_rate >= 0.95


# ---------------------------------------------------------------------------
# 6. action space


def test_criterion_6_action_space_contract():
    for v_pref in (1.0, 0.7):
        actions = build_action_space(v_pref)
        speeds = np.unique(np.round([math.hypot(*a) for a in actions], 12))
        assert len(actions) == 80
        assert len(speeds) == 5
        assert abs(speeds[-1] - v_pref) < 1e-12
    report(6, True, "80 actions; 5 exponential speeds; max speed = v_pref")


# ---------------------------------------------------------------------------
# 7-9. desk-scale training, generalization, depth ablation


def _desk_digest() -> str:
    key = repr((DESK_TRAIN, DESK_SIM, DESK_REWARD, value_net.default_hyper(),
                "desk-v1"))
    return hashlib.sha1(key.encode()).hexdigest()[:12]


@pytest.fixture(scope="session")
def desk_checkpoint():
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"desk_{_desk_digest()}.json"
    if not path.exists():
        training.train(DESK_TRAIN, DESK_SIM, DESK_REWARD,
                       checkpoint_path=path,
                       curve_path=path.with_suffix(".curve.csv"))
    return path


def _eval_policy(ckpt_path, n_obstacles, fixed_depth=None):
    net = value_net.ValueNetwork.load(ckpt_path)
    pol = ValuePolicy(net, reward_params=DESK_REWARD, gamma=DESK_TRAIN.gamma,
                      fixed_depth=fixed_depth)
    cfg = dataclasses.replace(DESK_SIM, n_obstacles=n_obstacles)
    return metrics.run_eval(pol, cfg, EVAL_EPISODES, EVAL_SEED,
                            reward_params=DESK_REWARD)


def _eval_orca(n_obstacles):
    cfg = dataclasses.replace(DESK_SIM, n_obstacles=n_obstacles)
    return metrics.run_eval(OrcaPolicy(), cfg, EVAL_EPISODES, EVAL_SEED)


def test_criterion_7_desk_scale_training(desk_checkpoint):
    trained = _eval_policy(desk_checkpoint, n_obstacles=5)
    baseline = _eval_orca(n_obstacles=5)
    ok = trained.success_rate >= 0.80 and trained.success_rate > baseline.success_rate
    report(7, ok, f"policy success {trained.success_rate:.2f} "
                  f"(collision {trained.collision_rate:.2f}, "
                  f"timeout {trained.timeout_rate:.2f}, "
                  f"time {trained.mean_nav_time and round(trained.mean_nav_time, 2)}s) "
                  f"vs ORCA {baseline.success_rate:.2f} on 5-obstacle invisible")
    assert trained.success_rate >= 0.80
    assert trained.success_rate > baseline.success_rate


def test_criterion_8_generalizes_to_ten_obstacles(desk_checkpoint):
    trained = _eval_policy(desk_checkpoint, n_obstacles=10)
    baseline = _eval_orca(n_obstacles=10)
    ok = trained.success_rate >= 0.5 and trained.success_rate > baseline.success_rate
    report(8, ok, f"policy success {trained.success_rate:.2f} vs ORCA "
                  f"{baseline.success_rate:.2f} at 10 obstacles, unchanged policy")
    assert trained.success_rate >= 0.5
    assert trained.success_rate > baseline.success_rate


def test_criterion_9_adaptive_depth_vs_fixed(desk_checkpoint):
    table = {}
    for mode in ("adaptive", 1, 2, 3):
        fixed = None if mode == "adaptive" else mode
        table[mode] = _eval_policy(desk_checkpoint, n_obstacles=5,
                                   fixed_depth=fixed).success_rate
    best_fixed = max(table[m] for m in (1, 2, 3))
    ok = table["adaptive"] >= best_fixed - 0.05
    report(9, ok, "success by depth mode: " +
           ", ".join(f"{m}={table[m]:.2f}" for m in table) +
           f"; adaptive within 0.05 of best fixed ({best_fixed:.2f})")
    assert table["adaptive"] >= best_fixed - 0.05


# ---------------------------------------------------------------------------
# 10. determinism


def test_criterion_10_train_and_eval_are_bytewise_deterministic(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(
        "n_obstacles = 2\nil_episodes = 2\nil_epochs = 1\nrl_episodes = 3\n"
        "batch = 8\nseed = 0\n")
    train_outputs = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"ckpt_{tag}.json"
        curve = tmp_path / f"curve_{tag}.csv"
        # full-size network exercised through the real CLI entry point
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(ckpt),
                         "--curve", str(curve)]) == 0
        train_outputs.append(ckpt.read_bytes() + curve.read_bytes())

    eval_outputs = []
    for tag in ("a", "b"):
        out = tmp_path / f"metrics_{tag}.json"
        assert cli.main(["eval", "--ckpt", str(tmp_path / "ckpt_a.json"),
                         "-n", "3", "--obstacles", "2", "--seed", "11",
                         "--json", str(out)]) == 0
        eval_outputs.append(out.read_bytes())

    ok = train_outputs[0] == train_outputs[1] and eval_outputs[0] == eval_outputs[1]
    report(10, ok, "repeated train and eval commands reproduce byte-identical "
                   "checkpoint, curve CSV, and metrics JSON")
    assert train_outputs[0] == train_outputs[1]
    assert eval_outputs[0] == eval_outputs[1]
