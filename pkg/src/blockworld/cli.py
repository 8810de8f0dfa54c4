"""Command-line entry points: train, eval, stats."""

from __future__ import annotations

import argparse
import sys

from .agents import AgentSpec
from .harness import (
    CSV_HEADER,
    RunConfig,
    evaluate_checkpoint,
    parse_config_file,
    split_config,
    train,
)
from .nets import load_checkpoint
from .stats import AGGREGATE_HEADER, aggregate_metrics, write_aggregate_csv
from .tasks import SettingSpec, parse_mode, parse_setting


def _add_train_parser(sub):
    p = sub.add_parser("train", help="train a critic and write metrics + checkpoint")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--algo", default="dqn_td")
    p.add_argument("--setting", default="no_stitching")
    p.add_argument("--grid-size", type=int, default=4)
    p.add_argument("--num-boxes", type=int, default=1)
    p.add_argument("--num-preplaced", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-updates", type=int, help="override the config value")
    p.add_argument("--num-env-steps", type=int, help="override the config value")
    p.add_argument("--num-parallel-envs", type=int, help="override the config value")
    p.add_argument("--eval-interval", type=int, help="override the config value")
    p.add_argument("--eval-episodes", type=int, help="override the config value")
    p.add_argument("--arch", choices=["mlp", "resnet"], help="critic body")
    p.add_argument("--sequential", action="store_true",
                   help="deterministic mode: wall_time_s is reported as 0.0")
    p.add_argument("--quiet", action="store_true")


def _add_eval_parser(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on fresh episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--setting", help="defaults to the setting stored in the checkpoint")
    p.add_argument("--mode", choices=["train", "eval"], default="eval")
    p.add_argument("--episodes", type=int, default=256)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--num-boxes", type=int)
    p.add_argument("--num-preplaced", type=int)
    p.add_argument("--episode-length", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _add_stats_parser(sub):
    p = sub.add_parser("stats", help="aggregate a metrics CSV into IQM + CI rows")
    p.add_argument("--input", required=True)
    p.add_argument("--group-by", default="algorithm,setting,mode")
    p.add_argument("--bootstrap", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV path (default: stdout)")


def _cmd_train(args) -> int:
    values = parse_config_file(args.config) if args.config else {}
    run_kwargs, agent_kwargs = split_config(values)
    overrides = {
        "num_updates": args.num_updates,
        "num_env_steps": args.num_env_steps,
        "num_parallel_envs": args.num_parallel_envs,
        "eval_interval": args.eval_interval,
        "eval_episodes": args.eval_episodes,
    }
    run_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    run_kwargs["seed"] = args.seed
    if args.sequential:
        run_kwargs["sequential"] = True
    if args.arch:
        agent_kwargs["arch"] = args.arch
    config = RunConfig(**run_kwargs)
    agent_spec = AgentSpec(algorithm=args.algo, **agent_kwargs)
    setting = SettingSpec(
        kind=parse_setting(args.setting),
        grid_size=args.grid_size,
        n_boxes=args.num_boxes,
        m_preplaced=args.num_preplaced,
    )

    def echo(record):
        if not args.quiet:
            print(record.to_csv_row(), flush=True)

    if not args.quiet:
        print(CSV_HEADER, flush=True)
    result = train(config, agent_spec, setting, out_dir=args.out, on_record=echo)
    if not args.quiet:
        print(f"wrote {result.csv_path} and {result.checkpoint_path}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    _, meta = load_checkpoint(args.checkpoint)
    run_meta = meta.get("run", {})
    setting_name = args.setting or run_meta.get("setting")
    if setting_name is None:
        raise SystemExit("--setting is required (checkpoint carries no run metadata)")
    grid_size = args.grid_size or run_meta.get("grid_size") or meta.get("grid_size")
    n_boxes = args.num_boxes or run_meta.get("n_boxes")
    if n_boxes is None:
        raise SystemExit("--num-boxes is required (checkpoint carries no run metadata)")
    m = args.num_preplaced if args.num_preplaced is not None \
        else run_meta.get("m_preplaced", 0)
    setting = SettingSpec(parse_setting(setting_name), int(grid_size),
                          int(n_boxes), int(m))
    record = evaluate_checkpoint(args.checkpoint, setting, parse_mode(args.mode),
                                 args.episodes, seed=args.seed,
                                 episode_length=args.episode_length)
    print(CSV_HEADER)
    print(record.to_csv_row())
    return 0


def _cmd_stats(args) -> int:
    import numpy as np

    group_by = [g for g in args.group_by.split(",") if g]
    rows = aggregate_metrics(args.input, group_by, n_bootstrap=args.bootstrap,
                             rng=np.random.default_rng(args.seed))
    if args.out:
        write_aggregate_csv(args.out, rows, group_by)
    else:
        print(AGGREGATE_HEADER)
        for row in rows:
            cells = [str(row.get(col, "")) for col in ("algorithm", "setting", "mode")]
            print(",".join(cells) + f",{row['iqm']:.6f},{row['ci_low']:.6f},"
                  f"{row['ci_high']:.6f},{row['n_seeds']}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blockworld",
        description="Block-moving gridworld benchmark for goal-conditioned critics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train_parser(sub)
    _add_eval_parser(sub)
    _add_stats_parser(sub)
    args = parser.parse_args(argv)
    if args.command == "train":
        return _cmd_train(args)
    if args.command == "eval":
        return _cmd_eval(args)
    return _cmd_stats(args)


if __name__ == "__main__":
    sys.exit(main())
