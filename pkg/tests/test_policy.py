import math

import numpy as np
import pytest

from adaptnav import policy, reward, sim
from adaptnav.policy import (ValuePolicy, build_action_space, discount_factor,
                             propagate, select_action)
from adaptnav.sim import AgentState, SimConfig, SimState


def test_action_space_has_80_actions():
    actions = build_action_space(1.0)
    assert len(actions) == 80


def test_action_space_max_speed_is_v_pref():
    for v_pref in (1.0, 1.3, 0.7):
        speeds = np.unique(np.round([math.hypot(*a)
                                     for a in build_action_space(v_pref)], 12))
        assert len(speeds) == 5
        assert abs(speeds[-1] - v_pref) < 1e-12
        assert speeds[0] > 0.0


def test_action_space_headings_form_regular_16gon():
    actions = build_action_space(1.0)
    full_speed = [a for a in actions if abs(math.hypot(*a) - 1.0) < 1e-12]
    angles = sorted(math.atan2(ay, ax) % (2 * math.pi) for ax, ay in full_speed)
    assert len(angles) == 16
    gaps = np.diff(angles + [angles[0] + 2 * math.pi])
    assert np.allclose(gaps, 2 * math.pi / 16, atol=1e-12)


def test_action_space_speeds_are_exponential():
    speeds = np.unique(np.round([math.hypot(*a)
                                 for a in build_action_space(1.0)], 12))
    expected = [(math.exp(k / 5) - 1.0) / (math.e - 1.0) for k in range(1, 6)]
    assert np.allclose(speeds, expected, atol=1e-12)


def test_discount_factor_uses_dt_times_v_pref():
    assert discount_factor(0.9, 0.25, 2.0) == pytest.approx(0.9 ** 0.5, abs=1e-15)
    assert discount_factor(0.9, 0.25, 1.0) == pytest.approx(0.9 ** 0.25, abs=1e-15)


def make_state(robot, obstacles, dt=0.25):
    cfg = SimConfig(n_obstacles=len(obstacles), dt=dt)
    return SimState(robot=robot, obstacles=list(obstacles), t=0.0, config=cfg)


def test_propagate_zero_velocities_is_identity():
    robot = AgentState(1.0, 2.0, 0.0, 0.0, 4.0, 4.0)
    ob = AgentState(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    state = make_state(robot, [ob])
    nxt = propagate(state, (0.0, 0.0), 0.25)
    assert (nxt.robot.px, nxt.robot.py) == (1.0, 2.0)
    assert (nxt.obstacles[0].px, nxt.obstacles[0].py) == (0.0, 0.0)


def test_propagate_moves_obstacles_at_constant_velocity():
    ob = AgentState(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    state = make_state(AgentState(0, 0, 0, 0, 1, 1), [ob])
    nxt = propagate(state, (0.0, 0.0), 0.25)
    assert (nxt.obstacles[0].px, nxt.obstacles[0].py) == (0.25, 0.0)


def test_propagate_is_linear_in_dt():
    ob = AgentState(0.3, -0.4, 0.6, 0.8, 0.0, 0.0)
    state = make_state(AgentState(0, 0, 0, 0, 1, 1), [ob])
    twice = propagate(propagate(state, (0.5, 0.1), 0.25), (0.5, 0.1), 0.25)
    once = propagate(state, (0.5, 0.1), 0.5)
    assert twice.robot.px == once.robot.px and twice.robot.py == once.robot.py
    assert twice.obstacles[0].px == once.obstacles[0].px


def test_propagate_never_mutates_the_input():
    state = make_state(AgentState(0.0, 0.0, 0.0, 0.0, 1.0, 1.0), [])
    propagate(state, (0.9, 0.0), 0.25)
    assert (state.robot.px, state.robot.vx) == (0.0, 0.0)


def constant_value_fn(value):
    def fn(observations, h0=None):
        return np.full(len(observations), value), [1] * len(observations)
    return fn


def test_select_action_epsilon_one_is_seeded_uniform():
    state = make_state(AgentState(0.0, 0.0, 0.0, 0.0, 4.0, 0.0), [])
    actions = build_action_space(1.0)
    gen_a = np.random.default_rng(7)
    gen_b = np.random.default_rng(7)
    picks = [select_action(constant_value_fn(0.0), state, actions, 1.0,
                           gen_a, reward.RewardParams(), 0.9)[0]
             for _ in range(8)]
    again = [select_action(constant_value_fn(0.0), state, actions, 1.0,
                           gen_b, reward.RewardParams(), 0.9)[0]
             for _ in range(8)]
    assert picks == again
    assert len(set(picks)) > 1


def test_select_action_prefers_arrival_over_collision():
    # action A runs into the blocker, action B reaches the goal
    robot = AgentState(0.0, 0.0, 0.0, 0.0, 0.2, 0.0, radius=0.2, v_pref=1.0)
    blocker = AgentState(-0.5, 0.0, 0.0, 0.0, -0.5, 0.0, radius=0.2)
    state = make_state(robot, [blocker])
    actions = [(-0.8, 0.0), (0.8, 0.0)]
    for value in (0.0, 0.5, 1.0):
        chosen, _ = select_action(constant_value_fn(value), state, actions, 0.0,
                                  np.random.default_rng(0),
                                  reward.RewardParams(), 0.9)
        assert chosen == (0.8, 0.0)


def test_select_action_argmax_affine_invariant_when_rewards_vanish():
    robot = AgentState(0.0, 0.0, 0.0, 0.0, 40.0, 0.0)
    state = make_state(robot, [])  # empty scene: R = 0 for every action
    actions = build_action_space(1.0)

    def ranked_fn(scale_factor, shift):
        def fn(observations, h0=None):
            # deterministic ranking from the lookahead x-progress
            base = np.array([obs[0, 4] for obs in observations])
            return scale_factor * (-base) + shift, [1] * len(observations)
        return fn

    base_choice, _ = select_action(ranked_fn(1.0, 0.0), state, actions, 0.0,
                                   np.random.default_rng(0),
                                   reward.RewardParams(), 0.9)
    for scale_factor, shift in ((2.5, 0.0), (1.0, 3.0), (0.3, -1.0)):
        choice, _ = select_action(ranked_fn(scale_factor, shift), state, actions,
                                  0.0, np.random.default_rng(0),
                                  reward.RewardParams(), 0.9)
        assert choice == base_choice


def test_select_action_degenerate_single_action():
    state = make_state(AgentState(0.0, 0.0, 0.0, 0.0, 4.0, 0.0), [])
    only = [(0.5, 0.0)]
    chosen, _ = select_action(constant_value_fn(0.3), state, only, 0.0,
                              np.random.default_rng(0), reward.RewardParams(), 0.9)
    assert chosen == (0.5, 0.0)


def test_select_action_ties_break_to_lowest_index():
    state = make_state(AgentState(0.0, 0.0, 0.0, 0.0, 40.0, 0.0), [])
    actions = [(0.0, 0.5), (0.5, 0.0), (0.0, -0.5)]
    chosen, _ = select_action(constant_value_fn(0.7), state, actions, 0.0,
                              np.random.default_rng(0), reward.RewardParams(), 0.9)
    assert chosen == actions[0]


def test_select_action_all_terminal_candidates():
    robot = AgentState(0.0, 0.0, 0.0, 0.0, 0.1, 0.0, radius=0.2)
    state = make_state(robot, [])
    actions = [(0.2, 0.0), (0.3, 0.0)]  # both land within the arrival radius

    def exploding(observations, h0=None):
        raise AssertionError("terminal candidates must not be evaluated")

    chosen, depth = select_action(exploding, state, actions, 0.0,
                                  np.random.default_rng(0),
                                  reward.RewardParams(), 0.9)
    assert chosen == (0.2, 0.0) and depth is None


def test_value_policy_act_respects_speed_limit(tiny_net):
    cfg = SimConfig(n_obstacles=3, seed=5)
    state = sim.reset(cfg, 5)
    pol = ValuePolicy(tiny_net)
    for _ in range(5):
        ax, ay = pol.act(state)
        assert math.hypot(ax, ay) <= state.robot.v_pref + 1e-9
        state, _ = sim.step(state, (ax, ay))
    assert pol.last_depth in (1, 2, 3, None)


def test_value_policy_greedy_is_deterministic(tiny_net):
    cfg = SimConfig(n_obstacles=4, seed=8)
    state = sim.reset(cfg, 8)
    a = ValuePolicy(tiny_net).act(state)
    b = ValuePolicy(tiny_net).act(state)
    assert a == b


def test_value_policy_fixed_depth_records_depth(tiny_net):
    cfg = SimConfig(n_obstacles=3, seed=6)
    state = sim.reset(cfg, 6)
    pol = ValuePolicy(tiny_net, fixed_depth=2)
    pol.act(state)
    assert pol.last_depth == 2


def test_persistent_hidden_policy_runs(tiny_net):
    tiny_net.hyper["persistent_hidden"] = True
    cfg = SimConfig(n_obstacles=2, seed=3)
    state = sim.reset(cfg, 3)
    pol = ValuePolicy(tiny_net)
    pol.reset_episode()
    for _ in range(3):
        action = pol.act(state)
        state, _ = sim.step(state, action)
    assert pol._h is not None and pol._h.shape == (3, tiny_net.hyper["hidden_dim"])
