"""Discrete-time 2-D crowd simulation: circle-crossing scenarios, kinematic
stepping with ORCA-driven obstacles, joint-state observation, terminals.

Conventions: a scenario places every agent on a circle with an antipodal
goal. The robot starts at the bottom of the circle. In "invisible" mode the
obstacles never receive the robot as an ORCA neighbor, so they behave as if
it did not exist; "visible" mode makes them avoid it reciprocally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import orca

EGO_DIM = 7          # vx, vy, px, py, gx, gy, v_pref
OBSTACLE_DIM = 5     # vx, vy, px, py, v_pref
JOINT_DIM = EGO_DIM + OBSTACLE_DIM

_PLACEMENT_GAP = 0.1  # clearance beyond touching radii at reset


class PlacementError(RuntimeError):
    pass


@dataclass
class AgentState:
    px: float
    py: float
    vx: float
    vy: float
    gx: float
    gy: float
    v_pref: float = 1.0
    radius: float = 0.3

    @property
    def theta(self) -> float:
        """Heading derived from the current velocity."""
        return math.atan2(self.vy, self.vx)

    def goal_distance(self) -> float:
        return math.hypot(self.gx - self.px, self.gy - self.py)


# Obstacles carry the same kinematic fields plus an internal goal for their
# ORCA controller, so they share the dataclass.
ObstacleState = AgentState


@dataclass(frozen=True)
class SimConfig:
    n_obstacles: int = 5
    circle_radius: float = 4.0
    dt: float = 0.25
    time_limit: float = 20.0
    visibility: str = "invisible"
    seed: int = 0
    arrival_threshold: float = 0.1
    danger_threshold: float = 0.2
    robot_radius: float = 0.3
    obstacle_radius: float = 0.3
    robot_v_pref: float = 1.0
    obstacle_v_pref: float = 1.0
    angle_jitter: float = math.pi / 10.0
    randomize_attributes: bool = False

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.time_limit < self.dt:
            raise ValueError("time_limit must be at least dt")
        if self.arrival_threshold <= 0.0:
            raise ValueError("arrival_threshold must be positive")
        if self.visibility not in ("visible", "invisible"):
            raise ValueError(f"visibility must be visible|invisible, got {self.visibility!r}")


@dataclass
class SimState:
    robot: AgentState
    obstacles: list[AgentState]
    t: float
    config: SimConfig


@dataclass(frozen=True)
class StepEvents:
    collision: bool
    arrival: bool
    timeout: bool

    @property
    def terminal(self) -> bool:
        return self.collision or self.arrival or self.timeout


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: str                     # Arrival | Collision | Timeout
    nav_time: float
    min_separations: list[float] = field(default_factory=list)


def reset(config: SimConfig, seed: int | None = None) -> SimState:
    """Seeded circle-crossing scenario with no initial overlaps.

    Each obstacle draws a uniform random angle on the circle, perturbed by
    the configured jitter, with an antipodal goal; conflicting placements
    are redrawn a bounded number of times before the whole layout retries.
    Uniform angles follow the benchmark convention and keep the crowd's
    center crossings desynchronized.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    r = config.circle_radius
    robot = AgentState(0.0, -r, 0.0, 0.0, 0.0, r,
                       v_pref=config.robot_v_pref, radius=config.robot_radius)

    for _ in range(25):
        obstacles: list[AgentState] = []
        ok = True
        for _ in range(config.n_obstacles):
            if config.randomize_attributes:
                radius = float(rng.uniform(0.25, 0.45))
                v_pref = float(rng.uniform(0.5, 1.5))
            else:
                radius = config.obstacle_radius
                v_pref = config.obstacle_v_pref
            placed = False
            for _ in range(60):
                ang = rng.uniform(0.0, 2.0 * math.pi) \
                    + rng.uniform(-config.angle_jitter, config.angle_jitter)
                px, py = r * math.cos(ang), r * math.sin(ang)
                clear = True
                for other in [robot] + obstacles:
                    need = radius + other.radius + _PLACEMENT_GAP
                    if math.hypot(px - other.px, py - other.py) <= need:
                        clear = False
                        break
                if clear:
                    obstacles.append(AgentState(px, py, 0.0, 0.0, -px, -py,
                                                v_pref=v_pref, radius=radius))
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            return SimState(robot=robot, obstacles=obstacles, t=0.0, config=config)
    raise PlacementError("cannot place agents without overlap")


def _obstacle_commands(state: SimState,
                       params: orca.OrcaParams) -> list[tuple[float, float]]:
    commands = []
    for i, ob in enumerate(state.obstacles):
        neighbors = [o for j, o in enumerate(state.obstacles) if j != i]
        if state.config.visibility == "visible":
            neighbors.append(state.robot)
        commands.append(orca.compute_velocity(ob, neighbors, params))
    return commands


def step(state: SimState, robot_action: tuple[float, float],
         orca_params: orca.OrcaParams | None = None) -> tuple[SimState, StepEvents]:
    """Advance one dt: robot takes the commanded velocity, obstacles take
    ORCA velocities computed from the pre-step snapshot; all positions
    integrate exactly p' = p + v*dt."""
    cfg = state.config
    ax, ay = float(robot_action[0]), float(robot_action[1])
    if math.hypot(ax, ay) > state.robot.v_pref + 1e-9:
        raise ValueError(f"robot action speed {math.hypot(ax, ay)} exceeds "
                         f"v_pref {state.robot.v_pref}")

    params = orca_params if orca_params is not None else orca.OrcaParams(dt=cfg.dt)
    commands = _obstacle_commands(state, params)

    robot = replace(state.robot, px=state.robot.px + ax * cfg.dt,
                    py=state.robot.py + ay * cfg.dt, vx=ax, vy=ay)
    obstacles = [replace(ob, px=ob.px + vx * cfg.dt, py=ob.py + vy * cfg.dt,
                         vx=vx, vy=vy)
                 for ob, (vx, vy) in zip(state.obstacles, commands)]
    new_state = SimState(robot=robot, obstacles=obstacles,
                         t=state.t + cfg.dt, config=cfg)

    collision = any(
        math.hypot(robot.px - ob.px, robot.py - ob.py) < robot.radius + ob.radius
        for ob in obstacles)
    arrival = robot.goal_distance() < cfg.arrival_threshold
    timeout = new_state.t >= cfg.time_limit - 1e-12
    return new_state, StepEvents(collision=collision, arrival=arrival, timeout=timeout)


def observe(state: SimState, world_frame: bool = False) -> np.ndarray:
    """Joint state matrix, one row per obstacle plus the leading robot row.

    Row 0 holds the 7 ego fields and zero-padded obstacle slots; row i pairs
    the ego fields with obstacle i's 5 fields. By default every vector is
    expressed in a robot-centric frame whose x-axis points at the goal;
    world_frame=True keeps raw world coordinates.
    """
    rb = state.robot
    n = len(state.obstacles)
    out = np.zeros((n + 1, JOINT_DIM), dtype=np.float64)

    if world_frame:
        ego = (rb.vx, rb.vy, rb.px, rb.py, rb.gx, rb.gy, rb.v_pref)
        rows = [(ob.vx, ob.vy, ob.px, ob.py, ob.v_pref) for ob in state.obstacles]
    else:
        ang = math.atan2(rb.gy - rb.py, rb.gx - rb.px)
        c, s = math.cos(ang), math.sin(ang)

        def rot(x: float, y: float) -> tuple[float, float]:
            return (c * x + s * y, -s * x + c * y)

        gvx, gvy = rot(rb.vx, rb.vy)
        ggx, ggy = rot(rb.gx - rb.px, rb.gy - rb.py)
        ego = (gvx, gvy, 0.0, 0.0, ggx, ggy, rb.v_pref)
        rows = []
        for ob in state.obstacles:
            ovx, ovy = rot(ob.vx, ob.vy)
            opx, opy = rot(ob.px - rb.px, ob.py - rb.py)
            rows.append((ovx, ovy, opx, opy, ob.v_pref))

    out[:, :EGO_DIM] = ego
    for i, row in enumerate(rows):
        out[i + 1, EGO_DIM:] = row
    out[0, EGO_DIM:] = 0.0
    return out


def min_separation(state: SimState) -> float:
    """Smallest surface-to-surface robot-obstacle gap; +inf with no obstacles."""
    if not state.obstacles:
        return math.inf
    rb = state.robot
    return min(math.hypot(rb.px - ob.px, rb.py - ob.py) - rb.radius - ob.radius
               for ob in state.obstacles)


def pairwise_min_separation(state: SimState) -> float:
    """Smallest gap over all agent pairs, robot included (crowd-wide check)."""
    agents = [state.robot] + state.obstacles
    best = math.inf
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            a, b = agents[i], agents[j]
            gap = math.hypot(a.px - b.px, a.py - b.py) - a.radius - b.radius
            best = min(best, gap)
    return best
