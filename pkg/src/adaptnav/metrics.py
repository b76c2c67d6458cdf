"""Episode rollouts, aggregate navigation metrics, and parameter sweeps."""

from __future__ import annotations

import copy
import csv
import dataclasses
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import orca, reward, sim

METRICS_SCHEMA_VERSION = 1


@dataclass
class EpisodeRecord:
    outcome: sim.EpisodeOutcome
    states: list[sim.SimState]            # length = steps + 1, first is reset
    actions: list[tuple[float, float]]
    rewards: list[float]
    depths: list[int | None]
    min_separations: list[float]

    @property
    def success(self) -> bool:
        return self.outcome.kind == "Arrival"


def run_episode(policy, config: sim.SimConfig, seed: int,
                reward_params: reward.RewardParams | None = None,
                reward_mode: str = "adaptive",
                orca_params: orca.OrcaParams | None = None) -> EpisodeRecord:
    """Roll one seeded episode to its terminal and record everything needed
    for metrics, training targets, and rendering."""
    params = reward_params or reward.RewardParams()
    state = sim.reset(config, seed)
    policy.reset_episode()
    states = [state]
    actions: list[tuple[float, float]] = []
    rewards: list[float] = []
    depths: list[int | None] = []
    seps: list[float] = []

    while True:
        action = policy.act(state)
        r_pred = reward.nonterminal_reward(state, action, params, mode=reward_mode)
        state, events = sim.step(state, action, orca_params=orca_params)
        if events.collision:
            r, kind = reward.COLLISION_REWARD, "Collision"
        elif events.arrival:
            r, kind = reward.ARRIVAL_REWARD, "Arrival"
        elif events.timeout:
            r, kind = r_pred, "Timeout"
        else:
            r, kind = r_pred, None
        states.append(state)
        actions.append(action)
        rewards.append(r)
        depths.append(getattr(policy, "last_depth", None))
        seps.append(sim.min_separation(state))
        if kind is not None:
            outcome = sim.EpisodeOutcome(kind=kind, nav_time=state.t,
                                         min_separations=list(seps))
            return EpisodeRecord(outcome=outcome, states=states, actions=actions,
                                 rewards=rewards, depths=depths,
                                 min_separations=seps)


@dataclass
class MetricsReport:
    n_episodes: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_nav_time: float | None
    danger_frequency: float
    gru_usage: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        total = self.success_rate + self.collision_rate + self.timeout_rate
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"outcome rates sum to {total}, expected 1")

    def to_dict(self) -> dict:
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "mean_nav_time": self.mean_nav_time,
            "danger_frequency": self.danger_frequency,
            "gru_usage": {str(k): v for k, v in sorted(self.gru_usage.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate(records: list[EpisodeRecord],
              danger_threshold: float) -> MetricsReport:
    n = len(records)
    kinds = [r.outcome.kind for r in records]
    successes = [r for r in records if r.outcome.kind == "Arrival"]
    nav_time = (sum(r.outcome.nav_time for r in successes) / len(successes)
                if successes else None)
    total_steps = sum(len(r.actions) for r in records)
    danger_steps = sum(1 for r in records for s in r.min_separations
                       if s < danger_threshold)
    usage: dict[int, int] = {}
    for r in records:
        for d in r.depths:
            if d is not None:
                usage[d] = usage.get(d, 0) + 1
    return MetricsReport(
        n_episodes=n,
        success_rate=kinds.count("Arrival") / n,
        collision_rate=kinds.count("Collision") / n,
        timeout_rate=kinds.count("Timeout") / n,
        mean_nav_time=nav_time,
        danger_frequency=danger_steps / total_steps if total_steps else 0.0,
        gru_usage=usage,
    )


def run_eval(policy, config: sim.SimConfig, n_episodes: int, seed: int,
             reward_params: reward.RewardParams | None = None,
             reward_mode: str = "adaptive") -> MetricsReport:
    """Seeded evaluation: episode i uses scenario seed (seed + i)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    records = [run_episode(policy, config, seed + i,
                           reward_params=reward_params, reward_mode=reward_mode)
               for i in range(n_episodes)]
    return aggregate(records, config.danger_threshold)


def write_trajectory_csv(record: EpisodeRecord, path) -> None:
    """Per-step agent kinematics; agent_id 0 is the robot."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "agent_id", "px", "py", "vx", "vy", "radius"])
        for step, state in enumerate(record.states):
            agents = [state.robot] + state.obstacles
            for agent_id, a in enumerate(agents):
                writer.writerow([step, agent_id, f"{a.px:.9f}", f"{a.py:.9f}",
                                 f"{a.vx:.9f}", f"{a.vy:.9f}", f"{a.radius:.9f}"])


def write_halting_histogram(report: MetricsReport, path) -> None:
    doc = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "gru_usage": {str(k): v for k, v in sorted(report.gru_usage.items())},
        "total": sum(report.gru_usage.values()),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


SWEEP_SIM_KEYS = {"n_obstacles", "visibility", "circle_radius", "time_limit"}
SWEEP_REWARD_KEYS = {"dt_agent", "dt_obstacle", "beta", "delta_xy",
                     "delta_theta", "grid_resolution"}


def sweep(param_grid: dict[str, list], base_config: sim.SimConfig,
          policy_factory, n_episodes: int = 100, seed: int = 0,
          reward_params: reward.RewardParams | None = None) -> list[dict]:
    """Evaluate the cartesian product of a parameter grid.

    Keys may override simulation fields (e.g. n_obstacles) or reward
    hyper-parameters. policy_factory(sim_config, reward_params) builds the
    policy per grid point, so trained or analytic baselines both fit.
    """
    if not param_grid:
        raise ValueError("param_grid must not be empty")
    unknown = set(param_grid) - SWEEP_SIM_KEYS - SWEEP_REWARD_KEYS
    if unknown:
        raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
    base_reward = reward_params or reward.RewardParams()
    names = list(param_grid)
    rows = []
    for combo in itertools.product(*(param_grid[k] for k in names)):
        point = dict(zip(names, combo))
        cfg = dataclasses.replace(
            base_config, **{k: v for k, v in point.items() if k in SWEEP_SIM_KEYS})
        rparams = dataclasses.replace(
            base_reward, **{k: v for k, v in point.items() if k in SWEEP_REWARD_KEYS})
        policy = policy_factory(cfg, rparams)
        report = run_eval(policy, cfg, n_episodes, seed, reward_params=rparams)
        row = dict(point)
        row.update({
            "success_rate": report.success_rate,
            "collision_rate": report.collision_rate,
            "timeout_rate": report.timeout_rate,
            "mean_nav_time": report.mean_nav_time,
            "danger_frequency": report.danger_frequency,
        })
        rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("no sweep rows to write")
    fields = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
