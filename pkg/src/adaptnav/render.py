"""Static SVG rendering of recorded episodes: agent discs per keyframe,
trajectory polylines, goal marker, optional occupancy heatmap underlay."""

from __future__ import annotations

import math

from . import reward as reward_mod
from .metrics import EpisodeRecord

_ROBOT_COLOR = "#d4a017"
_OBSTACLE_COLOR = "#4878a8"
_GOAL_COLOR = "#c03020"


def _color_for(value: float, vmax: float) -> str:
    # white -> red ramp
    frac = 0.0 if vmax <= 0.0 else min(value / vmax, 1.0)
    level = int(round(255 * (1.0 - frac)))
    return f"#ff{level:02x}{level:02x}"


def render_episode(record: EpisodeRecord, path, keyframe_stride: int = 4,
                   heatmap: bool = False,
                   reward_params: reward_mod.RewardParams | None = None,
                   heatmap_step: int = 0, size: int = 640) -> None:
    """Write the episode as a standalone SVG file.

    Keyframes are every keyframe_stride-th step plus the final one; each
    keyframe draws one disc per agent. With heatmap=True the occupancy field
    of the chosen step is drawn underneath as filled cells.
    """
    if not record.states:
        raise ValueError("cannot render an empty record")
    states = record.states
    margin = 1.0
    radius = states[0].config.circle_radius
    extent = radius + margin
    scale = size / (2.0 * extent)

    def sx(x: float) -> float:
        return (x + extent) * scale

    def sy(y: float) -> float:
        return (extent - y) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]

    if heatmap:
        params = reward_params or reward_mod.RewardParams()
        step = min(heatmap_step, len(states) - 1)
        field = reward_mod.build_field(states[step].obstacles, params)
        if field.grid.size:
            vmax = float(field.grid.max())
            xs, ys = field.cell_centers()
            cell = field.resolution * scale
            for ix in range(field.grid.shape[0]):
                for iy in range(field.grid.shape[1]):
                    v = field.grid[ix, iy]
                    if v <= 0.0:
                        continue
                    parts.append(
                        f'<rect class="heat" x="{sx(xs[ix]) - cell / 2:.2f}" '
                        f'y="{sy(ys[iy]) - cell / 2:.2f}" width="{cell:.2f}" '
                        f'height="{cell:.2f}" fill="{_color_for(v, vmax)}" '
                        f'fill-opacity="0.6"/>')

    # trajectory polylines
    robot_pts = " ".join(f"{sx(s.robot.px):.2f},{sy(s.robot.py):.2f}" for s in states)
    parts.append(f'<polyline points="{robot_pts}" fill="none" '
                 f'stroke="{_ROBOT_COLOR}" stroke-width="1.5"/>')
    for i in range(len(states[0].obstacles)):
        pts = " ".join(f"{sx(s.obstacles[i].px):.2f},{sy(s.obstacles[i].py):.2f}"
                       for s in states)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{_OBSTACLE_COLOR}" stroke-width="0.8" '
                     f'stroke-opacity="0.6"/>')

    # goal marker (cross, deliberately not a circle so discs stay countable)
    gx, gy = states[0].robot.gx, states[0].robot.gy
    arm = 0.18 * scale
    parts.append(f'<path d="M {sx(gx) - arm:.2f} {sy(gy):.2f} H {sx(gx) + arm:.2f} '
                 f'M {sx(gx):.2f} {sy(gy) - arm:.2f} V {sy(gy) + arm:.2f}" '
                 f'stroke="{_GOAL_COLOR}" stroke-width="2.5"/>')

    keyframes = list(range(0, len(states), max(keyframe_stride, 1)))
    if keyframes[-1] != len(states) - 1:
        keyframes.append(len(states) - 1)
    n_frames = len(keyframes)
    for order, idx in enumerate(keyframes):
        state = states[idx]
        opacity = 0.25 + 0.75 * (order + 1) / n_frames
        for ob in state.obstacles:
            parts.append(f'<circle cx="{sx(ob.px):.2f}" cy="{sy(ob.py):.2f}" '
                         f'r="{ob.radius * scale:.2f}" fill="{_OBSTACLE_COLOR}" '
                         f'fill-opacity="{opacity:.2f}"/>')
        rb = state.robot
        parts.append(f'<circle cx="{sx(rb.px):.2f}" cy="{sy(rb.py):.2f}" '
                     f'r="{rb.radius * scale:.2f}" fill="{_ROBOT_COLOR}" '
                     f'fill-opacity="{opacity:.2f}"/>')

    parts.append(f'<text x="8" y="{size - 8}" font-size="12" fill="#333">'
                 f'{record.outcome.kind} at {record.outcome.nav_time:.2f}s</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
