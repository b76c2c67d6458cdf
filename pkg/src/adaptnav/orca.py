"""Reciprocal collision avoidance on velocity half-planes with a 2-D LP.

Each neighbor induces one half-plane of permitted velocities; the agent picks
the feasible velocity closest to its goal-directed preference, falling back
to the least-violating velocity when the constraint set is empty. Pure float
arithmetic throughout: this runs in the simulator's innermost loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_EPS = 1e-10


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 5.0
    neighbor_dist: float = 10.0
    max_neighbors: int = 10
    safety_margin: float = 0.01
    dt: float = 0.25


@dataclass(frozen=True)
class HalfPlane:
    """Permitted velocities satisfy normal . (v - point) >= 0."""

    point: tuple[float, float]
    normal: tuple[float, float]

    def __post_init__(self):
        nx, ny = self.normal
        norm = math.hypot(nx, ny)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"half-plane normal must be unit length, got {norm}")

    @property
    def direction(self) -> tuple[float, float]:
        # boundary direction; feasible side lies to its left
        return (self.normal[1], -self.normal[0])

    def violation(self, vx: float, vy: float) -> float:
        """Positive when (vx, vy) lies outside the permitted side."""
        return -(self.normal[0] * (vx - self.point[0])
                 + self.normal[1] * (vy - self.point[1]))


def _det(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def _from_direction(point: tuple[float, float],
                    direction: tuple[float, float]) -> HalfPlane:
    dx, dy = direction
    norm = math.hypot(dx, dy)
    return HalfPlane(point, (-dy / norm, dx / norm))


def compute_halfplanes(agent, neighbors, params: OrcaParams) -> list[HalfPlane]:
    """One permitted-velocity half-plane per retained neighbor.

    Neighbors are the nearest max_neighbors within neighbor_dist. Each body
    is inflated by safety_margin. Avoidance effort is split evenly between
    the two agents (the reciprocal half-step).
    """
    ranked = sorted(
        ((math.hypot(o.px - agent.px, o.py - agent.py), i, o)
         for i, o in enumerate(neighbors)),
        key=lambda t: (t[0], t[1]),
    )
    planes: list[HalfPlane] = []
    inv_horizon = 1.0 / params.time_horizon
    inv_dt = 1.0 / params.dt
    for dist, _, other in ranked[:params.max_neighbors]:
        if dist > params.neighbor_dist:
            break
        rel_px = other.px - agent.px
        rel_py = other.py - agent.py
        rel_vx = agent.vx - other.vx
        rel_vy = agent.vy - other.vy
        dist_sq = rel_px * rel_px + rel_py * rel_py
        comb_r = agent.radius + other.radius + 2.0 * params.safety_margin
        comb_r_sq = comb_r * comb_r

        if dist_sq > comb_r_sq:
            # no current overlap: velocity obstacle truncated at time_horizon
            wx = rel_vx - inv_horizon * rel_px
            wy = rel_vy - inv_horizon * rel_py
            w_len_sq = wx * wx + wy * wy
            dot1 = wx * rel_px + wy * rel_py
            if dot1 < 0.0 and dot1 * dot1 > comb_r_sq * w_len_sq:
                # project on the cut-off disc
                w_len = math.sqrt(w_len_sq)
                ux, uy = wx / w_len, wy / w_len
                direction = (uy, -ux)
                mag = comb_r * inv_horizon - w_len
                u = (mag * ux, mag * uy)
            else:
                # project on the nearer leg of the cone
                leg = math.sqrt(max(dist_sq - comb_r_sq, 0.0))
                if _det(rel_px, rel_py, wx, wy) > 0.0:
                    direction = ((rel_px * leg - rel_py * comb_r) / dist_sq,
                                 (rel_px * comb_r + rel_py * leg) / dist_sq)
                else:
                    direction = (-(rel_px * leg + rel_py * comb_r) / dist_sq,
                                 -(-rel_px * comb_r + rel_py * leg) / dist_sq)
                dot2 = rel_vx * direction[0] + rel_vy * direction[1]
                u = (dot2 * direction[0] - rel_vx, dot2 * direction[1] - rel_vy)
        else:
            # already overlapping: resolve within one simulation step
            wx = rel_vx - inv_dt * rel_px
            wy = rel_vy - inv_dt * rel_py
            w_len = math.hypot(wx, wy)
            if w_len > _EPS:
                ux, uy = wx / w_len, wy / w_len
            else:
                ux, uy = 1.0, 0.0
            direction = (uy, -ux)
            mag = comb_r * inv_dt - w_len
            u = (mag * ux, mag * uy)

        point = (agent.vx + 0.5 * u[0], agent.vy + 0.5 * u[1])
        planes.append(_from_direction(point, direction))
    return planes


def _lp1(planes: list[HalfPlane], index: int, radius: float,
         opt: tuple[float, float], direction_opt: bool,
         current: tuple[float, float]) -> tuple[float, float] | None:
    """Optimize along the boundary line of planes[index] inside the disc."""
    px, py = planes[index].point
    dx, dy = planes[index].direction
    dot = px * dx + py * dy
    discriminant = dot * dot + radius * radius - (px * px + py * py)
    if discriminant < 0.0:
        return None
    root = math.sqrt(discriminant)
    t_left = -dot - root
    t_right = -dot + root

    for j in range(index):
        qx, qy = planes[j].point
        ex, ey = planes[j].direction
        denom = _det(dx, dy, ex, ey)
        numer = _det(ex, ey, px - qx, py - qy)
        if abs(denom) <= _EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        t = t_right if (opt[0] * dx + opt[1] * dy) > 0.0 else t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(planes: list[HalfPlane], radius: float, opt: tuple[float, float],
         direction_opt: bool) -> tuple[tuple[float, float], int | None]:
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    else:
        speed_sq = opt[0] * opt[0] + opt[1] * opt[1]
        if speed_sq > radius * radius:
            inv = radius / math.sqrt(speed_sq)
            result = (opt[0] * inv, opt[1] * inv)
        else:
            result = opt
    for i, plane in enumerate(planes):
        if plane.violation(result[0], result[1]) > 0.0:
            fixed = _lp1(planes, i, radius, opt, direction_opt, result)
            if fixed is None:
                return result, i
            result = fixed
    return result, None


def solve_lp2(constraints: list[HalfPlane], v_pref: tuple[float, float],
              max_speed: float) -> tuple[tuple[float, float], int | None]:
    """Feasible velocity closest to v_pref inside the speed disc.

    Returns (velocity, None) on success. If the constraints are jointly
    infeasible, returns the partial result and the index of the first
    unsatisfiable constraint so the caller can run the fallback pass.
    """
    if max_speed <= 0.0:
        raise ValueError("max_speed must be positive")
    return _lp2(constraints, max_speed, v_pref, direction_opt=False)


def _lp3(planes: list[HalfPlane], begin: int, radius: float,
         current: tuple[float, float]) -> tuple[float, float]:
    """Least-violating velocity when the half-plane set is infeasible."""
    result = current
    distance = 0.0
    for i in range(begin, len(planes)):
        if planes[i].violation(result[0], result[1]) <= distance:
            continue
        dx, dy = planes[i].direction
        px, py = planes[i].point
        projected: list[HalfPlane] = []
        for j in range(i):
            ex, ey = planes[j].direction
            qx, qy = planes[j].point
            denom = _det(dx, dy, ex, ey)
            if abs(denom) <= _EPS:
                if dx * ex + dy * ey > 0.0:
                    continue
                point = ((px + qx) / 2.0, (py + qy) / 2.0)
            else:
                t = _det(ex, ey, px - qx, py - qy) / denom
                point = (px + t * dx, py + t * dy)
            projected.append(_from_direction(point, (ex - dx, ey - dy)))
        candidate, fail = _lp2(projected, radius, (-dy, dx), direction_opt=True)
        if fail is None:
            result = candidate
        distance = planes[i].violation(result[0], result[1])
    return result


_TIE_BREAK_ROT = 1e-6


def compute_velocity(agent, neighbors, params: OrcaParams) -> tuple[float, float]:
    """New velocity for an agent with a goal, bounded by its preferred speed.

    The preferred velocity points at the goal with speed min(v_pref, dist/dt)
    and is rotated by a fixed 1e-6 rad so exactly symmetric encounters break
    deterministically instead of stalling on a degenerate LP tie.
    """
    gx = agent.gx - agent.px
    gy = agent.gy - agent.py
    dist = math.hypot(gx, gy)
    if dist > _EPS:
        speed = min(agent.v_pref, dist / params.dt)
        pref = (gx / dist * speed, gy / dist * speed)
    else:
        pref = (0.0, 0.0)
    c, s = math.cos(_TIE_BREAK_ROT), math.sin(_TIE_BREAK_ROT)
    pref = (c * pref[0] - s * pref[1], s * pref[0] + c * pref[1])

    planes = compute_halfplanes(agent, neighbors, params)
    velocity, fail = solve_lp2(planes, pref, agent.v_pref)
    if fail is not None:
        velocity = _lp3(planes, fail, agent.v_pref, velocity)

    speed = math.hypot(velocity[0], velocity[1])
    if speed > agent.v_pref:
        inv = agent.v_pref / speed
        velocity = (velocity[0] * inv, velocity[1] * inv)
    return velocity


def demo_action(robot_view, neighbors, params: OrcaParams) -> tuple[float, float]:
    """Demonstration action: the robot steered by ORCA against all obstacles."""
    return compute_velocity(robot_view, list(neighbors), params)
