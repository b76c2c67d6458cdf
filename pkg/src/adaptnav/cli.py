"""Command-line entry points: train, eval, demo, ablate-reward, ablate-gru.

Configuration files are flat "key = value" text; keys mirror the SimConfig,
RewardParams, and TrainConfig fields (see README for the full list).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, policy, render, reward, sim, training, value_net

log = logging.getLogger(__name__)

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        values[key] = value
    return values


def _coerce(value: str, py_type):
    if py_type is bool:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ValueError(f"expected a boolean, got {value!r}") from None
    if py_type is int:
        return int(value)
    if py_type is float:
        return float(value)
    return value


_FIELD_ALIASES = {"batch": "batch_size"}
_OPTIONAL_INT_FIELDS = {"fixed_depth"}


def load_configs(path) -> tuple[sim.SimConfig, reward.RewardParams, training.TrainConfig]:
    """Build the three config objects from one flat key-value file."""
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    targets = [(sim.SimConfig, {}), (reward.RewardParams, {}),
               (training.TrainConfig, {})]
    field_map: dict[str, list[tuple[type, dict, type]]] = {}
    for cls, sink in targets:
        for fld in dataclasses.fields(cls):
            field_map.setdefault(fld.name, []).append((cls, sink, fld.type))
    for key, value in raw.items():
        name = _FIELD_ALIASES.get(key, key)
        if name not in field_map:
            raise ValueError(f"unknown config key {key!r}")
        for _, sink, type_name in field_map[name]:
            if name in _OPTIONAL_INT_FIELDS:
                sink[name] = None if value.lower() in ("none", "adaptive") \
                    else int(value)
                continue
            base = {"int": int, "float": float, "bool": bool, "str": str}[
                str(type_name).replace("builtins.", "").split("|")[0].strip()]
            sink[name] = _coerce(value, base)
    return (sim.SimConfig(**targets[0][1]),
            reward.RewardParams(**targets[1][1]),
            training.TrainConfig(**targets[2][1]))


def _default_configs():
    return sim.SimConfig(), reward.RewardParams(), training.TrainConfig()


def _configs_from(args):
    if getattr(args, "config", None):
        return load_configs(args.config)
    return _default_configs()


def _build_policy(args, sim_cfg, reward_params, train_cfg,
                  fixed_depth=None) -> policy.ValuePolicy | policy.OrcaPolicy:
    kind = getattr(args, "policy", "value")
    if kind == "orca":
        return policy.OrcaPolicy()
    if not args.ckpt:
        raise SystemExit("--ckpt is required for the value policy")
    net = value_net.ValueNetwork.load(args.ckpt)
    return policy.ValuePolicy(net, reward_params=reward_params,
                              gamma=train_cfg.gamma, fixed_depth=fixed_depth,
                              reward_mode=train_cfg.reward_mode)


def cmd_train(args) -> int:
    sim_cfg, reward_params, train_cfg = _configs_from(args)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.world_frame:
        overrides["world_frame"] = True
    if args.tf_residual:
        overrides["tf_residual"] = True
    if args.shared_gru:
        overrides["shared_gru"] = True
    if args.fixed_depth is not None:
        overrides["fixed_depth"] = None if args.fixed_depth == "adaptive" \
            else int(args.fixed_depth)
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    _, summary = training.train(train_cfg, sim_cfg, reward_params,
                                checkpoint_path=args.out,
                                curve_path=args.curve)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _print_report(label: str, report: metrics.MetricsReport) -> None:
    nav = "-" if report.mean_nav_time is None else f"{report.mean_nav_time:.2f}"
    print(f"{label}: success {report.success_rate:.3f}  "
          f"collision {report.collision_rate:.3f}  "
          f"timeout {report.timeout_rate:.3f}  time {nav}s  "
          f"danger {report.danger_frequency:.3f}")


def cmd_eval(args) -> int:
    sim_cfg, reward_params, train_cfg = _configs_from(args)
    counts = [int(c) for c in str(args.obstacles).split(",")]
    pol = _build_policy(args, sim_cfg, reward_params, train_cfg)
    rows = []
    reports = {}
    for count in counts:
        cfg = dataclasses.replace(sim_cfg, n_obstacles=count,
                                  visibility=args.visibility)
        report = metrics.run_eval(pol, cfg, args.n, args.seed,
                                  reward_params=reward_params,
                                  reward_mode=train_cfg.reward_mode)
        reports[count] = report
        _print_report(f"n_obstacles={count}", report)
        row = {"n_obstacles": count}
        row.update({k: v for k, v in report.to_dict().items()
                    if k not in ("schema_version", "gru_usage")})
        rows.append(row)
    if args.json:
        doc = {"schema_version": metrics.METRICS_SCHEMA_VERSION,
               "results": {str(c): r.to_dict() for c, r in reports.items()}}
        Path(args.json).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    if args.csv:
        metrics.write_sweep_csv(rows, args.csv)
    if args.halting:
        metrics.write_halting_histogram(reports[counts[0]], args.halting)
    return 0


def cmd_demo(args) -> int:
    sim_cfg, reward_params, train_cfg = _configs_from(args)
    if args.obstacles is not None:
        sim_cfg = dataclasses.replace(sim_cfg, n_obstacles=args.obstacles)
    pol = _build_policy(args, sim_cfg, reward_params, train_cfg)
    record = metrics.run_episode(pol, sim_cfg, args.seed,
                                 reward_params=reward_params,
                                 reward_mode=train_cfg.reward_mode)
    render.render_episode(record, args.render, heatmap=args.heatmap,
                          reward_params=reward_params)
    print(f"episode outcome: {record.outcome.kind} "
          f"at {record.outcome.nav_time:.2f}s -> {args.render}")
    if args.trajectory:
        metrics.write_trajectory_csv(record, args.trajectory)
    if args.dump_attention and isinstance(pol, policy.ValuePolicy):
        _dump_attention(pol, record, args.dump_attention)
    return 0


def _dump_attention(pol: policy.ValuePolicy, record, path) -> None:
    """Per decision step, the attention weights of the executed evaluation."""
    rows = []
    for state, action in zip(record.states, record.actions):
        look = policy.propagate(state, action, state.config.dt)
        obs = sim.observe(look, world_frame=pol.world_frame)
        import adaptnav.autodiff as ad
        with ad.no_grad():
            _, out, weights = pol.net.value_tensor(obs, fixed_depth=pol.fixed_depth,
                                                   return_weights=True)
        rows.append({"t": state.t, "depth": out.depth,
                     "weights": [w[0].tolist() for w in weights]})
    Path(path).write_text(json.dumps({"steps": rows}, indent=2) + "\n",
                          encoding="utf-8")


def _parse_grid(text: str) -> dict[str, list[float]]:
    grid: dict[str, list[float]] = {}
    for clause in text.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        key, _, values = clause.partition("=")
        grid[key.strip()] = [float(v) for v in values.split(",") if v.strip()]
    if not grid:
        raise ValueError("empty sweep grid")
    return grid


def cmd_ablate_reward(args) -> int:
    """Train and evaluate one model per reward-parameter grid point."""
    sim_cfg, reward_params, train_cfg = _configs_from(args)
    grid = _parse_grid(args.grid)
    rows = []
    import itertools
    names = list(grid)
    for combo in itertools.product(*(grid[k] for k in names)):
        point = dict(zip(names, combo))
        rparams = dataclasses.replace(reward_params, **point)
        net, _ = training.train(train_cfg, sim_cfg, rparams)
        pol = policy.ValuePolicy(net, reward_params=rparams,
                                 gamma=train_cfg.gamma,
                                 reward_mode=train_cfg.reward_mode)
        report = metrics.run_eval(pol, sim_cfg, args.n, args.seed,
                                  reward_params=rparams,
                                  reward_mode=train_cfg.reward_mode)
        row = dict(point)
        row["success_rate"] = report.success_rate
        row["collision_rate"] = report.collision_rate
        row["timeout_rate"] = report.timeout_rate
        rows.append(row)
        _print_report(str(point), report)
    metrics.write_sweep_csv(rows, args.out)
    return 0


def cmd_ablate_gru(args) -> int:
    """Evaluate one checkpoint under adaptive vs forced fixed depths."""
    sim_cfg, reward_params, train_cfg = _configs_from(args)
    net = value_net.ValueNetwork.load(args.ckpt)
    modes = ([args.fixed_n] if args.fixed_n != "all"
             else ["adaptive", "1", "2", "3"])
    rows = []
    for mode in modes:
        fixed = None if mode == "adaptive" else int(mode)
        pol = policy.ValuePolicy(net, reward_params=reward_params,
                                 gamma=train_cfg.gamma, fixed_depth=fixed,
                                 reward_mode=train_cfg.reward_mode)
        report = metrics.run_eval(pol, sim_cfg, args.n, args.seed,
                                  reward_params=reward_params,
                                  reward_mode=train_cfg.reward_mode)
        _print_report(f"depth={mode}", report)
        rows.append({"depth": mode, "success_rate": report.success_rate,
                     "collision_rate": report.collision_rate,
                     "timeout_rate": report.timeout_rate,
                     "danger_frequency": report.danger_frequency})
    if args.out:
        metrics.write_sweep_csv(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptnav")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="imitation bootstrap + TD refinement")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint path (json)")
    p.add_argument("--curve", help="training-curve CSV path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--world-frame", dest="world_frame", action="store_true",
                   help="feed raw world coordinates instead of the "
                        "goal-aligned robot frame")
    p.add_argument("--tf-residual", dest="tf_residual", action="store_true",
                   help="residual + layer-norm encoder wiring")
    p.add_argument("--shared-gru", dest="shared_gru", action="store_true",
                   help="one GRU parameter set shared across depths")
    p.add_argument("--fixed-depth", dest="fixed_depth",
                   choices=["1", "2", "3", "adaptive"],
                   help="train with a forced recurrence depth")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="seeded batch evaluation")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--policy", choices=["value", "orca"], default="value")
    p.add_argument("-n", type=int, default=100, help="episodes per setting")
    p.add_argument("--obstacles", default="5", help="count or comma list")
    p.add_argument("--visibility", choices=["visible", "invisible"],
                   default="invisible")
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--json", help="metrics JSON output path")
    p.add_argument("--csv", help="per-count CSV output path")
    p.add_argument("--halting", help="halting histogram JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="roll one episode and render it")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--policy", choices=["value", "orca"], default="value")
    p.add_argument("--render", required=True, help="output SVG path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--obstacles", type=int)
    p.add_argument("--heatmap", action="store_true",
                   help="draw the occupancy field under the trajectories")
    p.add_argument("--trajectory", help="trajectory CSV path")
    p.add_argument("--dump-attention", dest="dump_attention",
                   help="attention-weight JSON path")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("ablate-reward",
                       help="train/evaluate per reward-parameter grid point")
    p.add_argument("--config")
    p.add_argument("--grid", required=True,
                   help='e.g. "beta=1,2,4;dt_agent=0.5,1.0"')
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--seed", type=int, default=1000)
    p.set_defaults(func=cmd_ablate_reward)

    p = sub.add_parser("ablate-gru",
                       help="evaluate a checkpoint under fixed/adaptive depth")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fixed-n", dest="fixed_n",
                   choices=["1", "2", "3", "adaptive", "all"], default="all")
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--out", help="comparison CSV path")
    p.set_defaults(func=cmd_ablate_gru)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
