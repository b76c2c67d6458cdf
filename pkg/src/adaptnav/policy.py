"""Discrete velocity actions and one-step lookahead action selection.

The greedy rule scores every action with its predicted reward plus the
discounted value of the constant-velocity lookahead state; terminal
lookahead states score on reward alone. The discount exponent is scaled by
dt * v_pref so value targets are invariant to the preferred speed.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import orca, reward, sim

SPEED_LEVELS = 5
HEADING_COUNT = 16


def build_action_space(v_pref: float) -> list[tuple[float, float]]:
    """80 velocities: 5 exponentially spaced speeds in (0, v_pref] crossed
    with 16 evenly spaced headings over [0, 2*pi)."""
    if v_pref <= 0.0:
        raise ValueError("v_pref must be positive")
    speeds = [(math.exp(k / SPEED_LEVELS) - 1.0) / (math.e - 1.0) * v_pref
              for k in range(1, SPEED_LEVELS + 1)]
    headings = [2.0 * math.pi * j / HEADING_COUNT for j in range(HEADING_COUNT)]
    return [(s * math.cos(h), s * math.sin(h)) for s in speeds for h in headings]


def discount_factor(gamma: float, dt: float, v_pref: float) -> float:
    return gamma ** (dt * v_pref)


def propagate(state: sim.SimState, action, dt: float) -> sim.SimState:
    """Constant-velocity lookahead; never touches the live simulation."""
    ax, ay = float(action[0]), float(action[1])
    robot = replace(state.robot, px=state.robot.px + ax * dt,
                    py=state.robot.py + ay * dt, vx=ax, vy=ay)
    obstacles = [replace(ob, px=ob.px + ob.vx * dt, py=ob.py + ob.vy * dt)
                 for ob in state.obstacles]
    return sim.SimState(robot=robot, obstacles=obstacles,
                        t=state.t + dt, config=state.config)


def lookahead_scores(value_fn, state: sim.SimState, actions,
                     reward_params: reward.RewardParams, gamma: float,
                     world_frame: bool = False, reward_mode: str = "adaptive",
                     h0: np.ndarray | None = None):
    """Score R(s, a) + gamma^(dt*v_pref) * V(s') for every action.

    value_fn maps a list of joint-state arrays to an array of values (and
    depths); terminal lookaheads skip it. Returns (scores, depths) where
    depths[i] is None for actions resolved without a network call.
    """
    dt = state.config.dt
    field = reward.build_field(state.obstacles, reward_params) \
        if reward_mode == "adaptive" else None
    df = discount_factor(gamma, dt, state.robot.v_pref)

    scores = np.empty(len(actions))
    depths: list[int | None] = [None] * len(actions)
    pending_idx: list[int] = []
    pending_obs: list[np.ndarray] = []
    for i, action in enumerate(actions):
        r, terminal = reward.evaluate(state, action, reward_params,
                                      field=field, mode=reward_mode)
        scores[i] = r
        if terminal is None:
            pending_idx.append(i)
            pending_obs.append(sim.observe(propagate(state, action, dt),
                                           world_frame=world_frame))
    if pending_idx:
        values, val_depths = value_fn(pending_obs, h0=h0)
        for i, v, d in zip(pending_idx, values, val_depths):
            scores[i] += df * float(v)
            depths[i] = d
    return scores, depths


def select_action(value_fn, state: sim.SimState, actions, epsilon: float,
                  rng: np.random.Generator,
                  reward_params: reward.RewardParams, gamma: float,
                  world_frame: bool = False, reward_mode: str = "adaptive",
                  h0: np.ndarray | None = None):
    """Epsilon-greedy over the lookahead scores; ties go to the lowest index.

    Returns (action, depth_of_chosen_evaluation_or_None).
    """
    if epsilon > 0.0 and rng.random() < epsilon:
        idx = int(rng.integers(len(actions)))
        return actions[idx], None
    scores, depths = lookahead_scores(value_fn, state, actions, reward_params,
                                      gamma, world_frame=world_frame,
                                      reward_mode=reward_mode, h0=h0)
    best = int(np.argmax(scores))
    return actions[best], depths[best]


class ValuePolicy:
    """Greedy (or epsilon-greedy) policy over a value network."""

    def __init__(self, net, reward_params: reward.RewardParams | None = None,
                 gamma: float = 0.9, epsilon: float = 0.0,
                 rng: np.random.Generator | None = None,
                 fixed_depth: int | None = None,
                 reward_mode: str = "adaptive",
                 arrays: dict | None = None):
        self.net = net
        self.reward_params = reward_params or reward.RewardParams()
        self.gamma = gamma
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.fixed_depth = fixed_depth
        self.reward_mode = reward_mode
        self.arrays = arrays
        self.world_frame = bool(net.hyper.get("world_frame", False))
        self.persistent_hidden = bool(net.hyper.get("persistent_hidden", False))
        self.last_depth: int | None = None
        self._action_cache: dict[float, list[tuple[float, float]]] = {}
        self._h: np.ndarray | None = None

    def reset_episode(self) -> None:
        self.last_depth = None
        self._h = None

    def actions_for(self, v_pref: float) -> list[tuple[float, float]]:
        if v_pref not in self._action_cache:
            self._action_cache[v_pref] = build_action_space(v_pref)
        return self._action_cache[v_pref]

    def _value_fn(self, observations, h0=None):
        return self.net.values(observations, arrays=self.arrays,
                               fixed_depth=self.fixed_depth,
                               return_depths=True, h0=h0)

    def act(self, state: sim.SimState) -> tuple[float, float]:
        actions = self.actions_for(state.robot.v_pref)
        h0 = self._h if self.persistent_hidden else None
        action, depth = select_action(
            self._value_fn, state, actions, self.epsilon, self.rng,
            self.reward_params, self.gamma, world_frame=self.world_frame,
            reward_mode=self.reward_mode, h0=h0)
        self.last_depth = depth
        if self.persistent_hidden:
            self._h = self._chosen_hidden(state, action)
        return action

    def _chosen_hidden(self, state, action) -> np.ndarray:
        import adaptnav.autodiff as ad
        obs = sim.observe(propagate(state, action, state.config.dt),
                          world_frame=self.world_frame)
        with ad.no_grad():
            out = self.net.stack.forward(obs, fixed_depth=self.fixed_depth,
                                         h0=self._h)
        return out.features.data.copy()


class OrcaPolicy:
    """Robot driven by the reciprocal-avoidance controller (the baseline and
    the imitation demonstrator)."""

    def __init__(self, params: orca.OrcaParams | None = None,
                 safety_margin: float | None = None):
        base = params or orca.OrcaParams()
        if safety_margin is not None:
            base = orca.OrcaParams(time_horizon=base.time_horizon,
                                   neighbor_dist=base.neighbor_dist,
                                   max_neighbors=base.max_neighbors,
                                   safety_margin=safety_margin, dt=base.dt)
        self.params = base
        self.last_depth: int | None = None

    def reset_episode(self) -> None:
        pass

    def act(self, state: sim.SimState) -> tuple[float, float]:
        params = self.params
        if params.dt != state.config.dt:
            params = orca.OrcaParams(time_horizon=params.time_horizon,
                                     neighbor_dist=params.neighbor_dist,
                                     max_neighbors=params.max_neighbors,
                                     safety_margin=params.safety_margin,
                                     dt=state.config.dt)
        return orca.demo_action(state.robot, state.obstacles, params)


class StraightPolicy:
    """Head straight at the goal at preferred speed (test baseline)."""

    last_depth = None

    def reset_episode(self) -> None:
        pass

    def act(self, state: sim.SimState) -> tuple[float, float]:
        rb = state.robot
        dx, dy = rb.gx - rb.px, rb.gy - rb.py
        dist = math.hypot(dx, dy)
        if dist < 1e-12:
            return (0.0, 0.0)
        speed = min(rb.v_pref, dist / state.config.dt)
        return (dx / dist * speed, dy / dist * speed)


class StillPolicy:
    """Never moves (test baseline for timeouts)."""

    last_depth = None

    def reset_episode(self) -> None:
        pass

    def act(self, state: sim.SimState) -> tuple[float, float]:
        return (0.0, 0.0)
