"""Value-network training: imitation bootstrap from the reciprocal-avoidance
demonstrator, then episodic temporal-difference refinement with a target
network, replay memory, and one Adam batch step per episode."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics, policy, reward, sim, value_net

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    batch_size: int = 100
    lr: float = 0.001
    il_episodes: int = 2000
    il_epochs: int = 50
    rl_episodes: int = 2000
    target_sync: int = 50
    memory_capacity: int = 100_000
    eps_start: float = 0.5
    eps_end: float = 0.1
    seed: int = 0
    il_safety_margin: float = 0.1
    reward_mode: str = "adaptive"
    world_frame: bool = False
    shared_gru: bool = False
    tf_residual: bool = False
    persistent_hidden: bool = False
    fixed_depth: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


class ReplayMemory:
    """Capacity-bounded ring of (joint state, value target) pairs."""

    def __init__(self, capacity: int):
        self.buffer: deque = deque(maxlen=capacity)

    def push(self, state: np.ndarray, target: float) -> None:
        self.buffer.append((state, float(target)))

    def __len__(self) -> int:
        return len(self.buffer)

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform without replacement within one batch."""
        k = min(batch_size, len(self.buffer))
        idx = rng.choice(len(self.buffer), size=k, replace=False)
        states = [self.buffer[int(i)][0] for i in idx]
        targets = [self.buffer[int(i)][1] for i in idx]
        return states, targets


def il_target(gamma: float, dt: float, v_pref: float, steps_to_go: int,
              terminal_reward: float) -> float:
    """Terminal-backup imitation target: gamma^(time_to_go * v_pref) * R_T."""
    return gamma ** (steps_to_go * dt * v_pref) * terminal_reward


_TERMINAL_REWARD = {"Arrival": reward.ARRIVAL_REWARD,
                    "Collision": reward.COLLISION_REWARD,
                    "Timeout": 0.0}


def epsilon_schedule(episode: int, total: int, start: float, end: float) -> float:
    """Linear decay over the first half of training, then constant."""
    half = max(total // 2, 1)
    if episode >= half:
        return end
    return start + (end - start) * episode / half


class DivergenceGuard:
    """Aborts training when the loss stays above the ceiling for too long."""

    def __init__(self, ceiling: float = 1e3, patience: int = 100):
        self.ceiling = ceiling
        self.patience = patience
        self.streak = 0

    def check(self, loss: float) -> None:
        self.streak = self.streak + 1 if loss > self.ceiling else 0
        if self.streak >= self.patience:
            raise RuntimeError(
                f"training diverged: loss above {self.ceiling} for "
                f"{self.patience} consecutive updates")


def run_imitation(config: TrainConfig, sim_config: sim.SimConfig,
                  reward_params: reward.RewardParams,
                  memory: ReplayMemory) -> dict:
    """Fill the memory with demonstrator episodes and terminal-backup targets.

    Raises if the demonstration set contains no successful episode, since a
    value function regressed on failures alone cannot bootstrap a policy.
    """
    demo = policy.OrcaPolicy(safety_margin=config.il_safety_margin)
    successes = 0
    outcomes = {"Arrival": 0, "Collision": 0, "Timeout": 0}
    for episode in range(config.il_episodes):
        record = metrics.run_episode(demo, sim_config, seed=config.seed + episode,
                                     reward_params=reward_params,
                                     reward_mode=config.reward_mode)
        outcomes[record.outcome.kind] += 1
        successes += record.success
        terminal_reward = _TERMINAL_REWARD[record.outcome.kind]
        steps = len(record.actions)
        # every visited state is stored, terminal included (zero-step discount)
        for t in range(steps + 1):
            obs = sim.observe(record.states[t], world_frame=config.world_frame)
            target = il_target(config.gamma, sim_config.dt,
                               sim_config.robot_v_pref, steps - t, terminal_reward)
            memory.push(obs, target)
    if successes == 0:
        raise RuntimeError("imitation set has no successes")
    return {"episodes": config.il_episodes, "outcomes": outcomes,
            "samples": len(memory)}


def _optimize_batch(net: value_net.ValueNetwork, memory: ReplayMemory,
                    rng: np.random.Generator, config: TrainConfig) -> float:
    states, targets = memory.sample(rng, config.batch_size)
    pred = net.batch_values(states, fixed_depth=config.fixed_depth)
    loss = ad.mse(pred, ad.Tensor(np.array(targets).reshape(-1, 1)))
    value = loss.item()
    loss.backward()
    ad.adam_step(net.parameters(), lr=config.lr)
    return value


def train_imitation(net: value_net.ValueNetwork, config: TrainConfig,
                    memory: ReplayMemory) -> float:
    """Supervised regression epochs over the full demonstration memory."""
    rng = np.random.default_rng(config.seed + 1)
    guard = DivergenceGuard()
    last = math.nan
    n = len(memory)
    batches = max(n // config.batch_size, 1)
    for epoch in range(config.il_epochs):
        epoch_loss = 0.0
        for _ in range(batches):
            last = _optimize_batch(net, memory, rng, config)
            guard.check(last)
            epoch_loss += last
        log.info("imitation epoch %d/%d loss %.6f",
                 epoch + 1, config.il_epochs, epoch_loss / batches)
    return last


def train_rl(net: value_net.ValueNetwork, config: TrainConfig,
             sim_config: sim.SimConfig, reward_params: reward.RewardParams,
             memory: ReplayMemory, curve_path=None) -> list[dict]:
    """Episodic refinement: roll out epsilon-greedy, push TD targets computed
    against the lagged target network, take one batch step per episode."""
    rng = np.random.default_rng(config.seed + 2)
    actor = policy.ValuePolicy(net, reward_params=reward_params,
                               gamma=config.gamma, epsilon=0.0,
                               rng=np.random.default_rng(config.seed + 3),
                               fixed_depth=config.fixed_depth,
                               reward_mode=config.reward_mode)
    target_arrays = net.snapshot()
    guard = DivergenceGuard()
    df = policy.discount_factor(config.gamma, sim_config.dt,
                                sim_config.robot_v_pref)
    rows: list[dict] = []
    recent = deque(maxlen=100)

    for episode in range(config.rl_episodes):
        eps = epsilon_schedule(episode, config.rl_episodes,
                               config.eps_start, config.eps_end)
        actor.epsilon = eps
        record = metrics.run_episode(
            actor, sim_config, seed=config.seed + 100_000 + episode,
            reward_params=reward_params, reward_mode=config.reward_mode)
        recent.append(1.0 if record.success else 0.0)

        steps = len(record.actions)
        observations = [sim.observe(s, world_frame=config.world_frame)
                        for s in record.states]
        if steps > 1:
            next_values = net.values(observations[1:steps],
                                     arrays=target_arrays,
                                     fixed_depth=config.fixed_depth)
        else:
            next_values = np.zeros(0)
        for t in range(steps):
            if t == steps - 1:
                target = record.rewards[t]
            else:
                target = record.rewards[t] + df * float(next_values[t])
            memory.push(observations[t], target)

        loss = _optimize_batch(net, memory, rng, config)
        guard.check(loss)
        if (episode + 1) % config.target_sync == 0:
            target_arrays = net.snapshot()
        rows.append({"episode": episode, "epsilon": eps, "loss": loss,
                     "rolling_success": sum(recent) / len(recent)})
        if (episode + 1) % 100 == 0:
            log.info("rl episode %d/%d eps %.3f loss %.6f success(100) %.2f",
                     episode + 1, config.rl_episodes, eps, loss,
                     rows[-1]["rolling_success"])

    if curve_path is not None:
        write_curve_csv(rows, curve_path)
    return rows


def write_curve_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["episode", "epsilon", "loss", "rolling_success"])
        for row in rows:
            writer.writerow([row["episode"], repr(row["epsilon"]),
                             repr(row["loss"]), repr(row["rolling_success"])])


def train(config: TrainConfig, sim_config: sim.SimConfig,
          reward_params: reward.RewardParams | None = None,
          checkpoint_path=None, curve_path=None,
          net: value_net.ValueNetwork | None = None) -> tuple[value_net.ValueNetwork, dict]:
    """Full pipeline: imitation bootstrap then TD refinement; saves a
    checkpoint whose hyper block records the network and frame settings."""
    rparams = reward_params or reward.RewardParams()
    if net is None:
        hyper = value_net.default_hyper(
            shared_gru=config.shared_gru, tf_residual=config.tf_residual,
            world_frame=config.world_frame,
            persistent_hidden=config.persistent_hidden)
        net = value_net.ValueNetwork(hyper=hyper, seed=config.seed)

    memory = ReplayMemory(config.memory_capacity)
    il_stats = run_imitation(config, sim_config, rparams, memory)
    log.info("imitation demos: %s", il_stats)
    il_loss = train_imitation(net, config, memory)
    rows = train_rl(net, config, sim_config, rparams, memory,
                    curve_path=curve_path)
    if checkpoint_path is not None:
        net.save(checkpoint_path)
    summary = {
        "il": il_stats,
        "il_final_loss": il_loss,
        "rl_episodes": len(rows),
        "final_rolling_success": rows[-1]["rolling_success"] if rows else None,
    }
    return net, summary
