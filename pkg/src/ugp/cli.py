"""Command-line entry points: train, study1, study2, eval, serve-check."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bridge, checkpoint, config as config_mod, engine, experiments, net
from .engine import EngineConfig, run_training
from .envs import OBS_DIM, env_factory
from .envs.core import ATARI_PROFILE, STACK_DEPTH
from .errors import ConfigurationError, UgpError
from .experiments import StudySettings, resolve_out_dir
from .optim import RmsPropState


def _add_study_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scale", type=float, default=1.0,
                        help="budget multiplier (1.0 is the desk-scale default)")
    parser.add_argument("--seeds", type=int, default=3, help="number of independent seeds")
    parser.add_argument("--out", default=None, help="output directory (default runs/)")
    parser.add_argument("--base-seed", type=int, default=0)
    parser.add_argument("--async", dest="async_mode", action="store_true",
                        help="use the threaded pipeline instead of deterministic lock-step")


def _settings_from_args(args) -> StudySettings:
    return StudySettings(
        out_dir=resolve_out_dir(args.out),
        scale=args.scale,
        n_seeds=args.seeds,
        base_seed=args.base_seed,
        deterministic=not args.async_mode,
    )


def cmd_study1(args) -> int:
    settings = _settings_from_args(args)
    root = experiments.run_study1(settings)
    print(f"study1 finished; report under {root / 'report'}")
    return 0


def cmd_study2(args) -> int:
    settings = _settings_from_args(args)
    settings.lambdas = tuple(float(x) for x in args.lambdas.split(","))
    source = Path(args.source) if args.source else None
    root = experiments.run_study2(settings, source_study1=source)
    print(f"study2 finished; report under {root / 'report'}")
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.parse_config(args.config)
    assignment = config_mod.parse_assignment(cfg["tasks"])
    episodes = int(cfg["episodes"])
    seed = int(cfg.get("seed", "0"))
    profile = cfg.get("profile", "vector")
    out_dir = resolve_out_dir(cfg.get("out"))

    env_server = cfg.get("env_server")
    if env_server:
        factories = {
            task: (lambda name=task: bridge.RemoteEnvironment.connect(env_server, name))
            for task in assignment
        }
        input_shape = ATARI_PROFILE.state_shape
        default_trunk = "conv:8:4:2,relu,dense:64,relu"
    elif profile == "image":
        factories = {task: env_factory(task, profile="image") for task in assignment}
        probe = factories[sorted(assignment)[0]]()
        input_shape = probe.frame_profile.state_shape
        default_trunk = "conv:8:4:2,relu,dense:64,relu"
    else:
        factories = {task: env_factory(task) for task in assignment}
        input_shape = (STACK_DEPTH, OBS_DIM)
        default_trunk = "dense:64,relu,dense:32,relu"

    if "checkpoint" in cfg:
        params, opt_state, _ = checkpoint.load_checkpoint(cfg["checkpoint"])
        if opt_state is None:
            opt_state = RmsPropState.fresh()
    else:
        trunk = config_mod.parse_trunk(cfg.get("trunk", default_trunk))
        if env_server:
            action_counts = {task: factories[task]().action_count for task in assignment}
        else:
            action_counts = {task: 4 for task in assignment}
        params = net.build_network(trunk, action_counts, seed, input_shape)
        opt_state = RmsPropState.fresh(
            rho=float(cfg.get("rho", "0.99")),
            lr=float(cfg.get("learning_rate", "0.001")),
            epsilon=float(cfg.get("epsilon", "1e-8")),
            clip_norm=None if cfg.get("clip_norm", "40") == "none"
            else float(cfg.get("clip_norm", "40")),
        )

    run_config = EngineConfig(
        assignment=assignment,
        rollout_length=int(cfg.get("rollout_length", "5")),
        gamma=float(cfg.get("gamma", "0.99")),
        batch_size=int(cfg.get("batch_size", "128")),
        prediction_cap=int(cfg.get("prediction_cap", "64")),
        prediction_linger=float(cfg.get("prediction_linger_ms", "2")) / 1000.0,
        max_episodes=episodes,
        max_steps=int(cfg["max_steps"]) if "max_steps" in cfg else None,
        seed=seed,
        deterministic=config_mod.parse_bool(cfg.get("deterministic", "true")),
        value_weight=float(cfg.get("value_weight", "0.5")),
        entropy_weight=float(cfg.get("entropy_weight", "0.01")),
    )
    result = run_training(run_config, params, opt_state, factories)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.log.write_csv(out_dir / "train.csv")
    checkpoint.save_checkpoint(out_dir / "checkpoint.ugpc", result.params, result.opt_state)
    counts = result.log.task_counts()
    print(f"trained {len(result.log)} episodes ({counts}), "
          f"{result.steps_applied} optimizer steps, {result.env_steps} env steps")
    print(f"log: {out_dir / 'train.csv'}  checkpoint: {out_dir / 'checkpoint.ugpc'}")
    return 0


def cmd_eval(args) -> int:
    params, _, _ = checkpoint.load_checkpoint(args.checkpoint)
    if args.env_server:
        factory = lambda: bridge.RemoteEnvironment.connect(args.env_server, args.task)  # noqa: E731
    else:
        factory = env_factory(args.task)
    mean, scores = engine.evaluate(
        params, args.task, args.episodes, args.seed, factory, greedy=args.greedy
    )
    print(f"{args.task}: mean score {mean:.3f} ± {np.std(scores):.3f} "
          f"over {len(scores)} episodes")
    return 0


def cmd_serve_check(args) -> int:
    results = bridge.serve_check(args.env_server)
    failed = 0
    for name, ok, detail in results:
        status = "ok " if ok else "FAIL"
        print(f"[{status}] {name}" + (f" — {detail}" if detail else ""))
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugp",
        description="Multi-task actor-critic training engine with elastic weight consolidation",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training phase from a config file")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.set_defaults(func=cmd_train)

    p_s1 = sub.add_parser("study1", help="transfer study on the built-in tasks")
    _add_study_args(p_s1)
    p_s1.set_defaults(func=cmd_study1)

    p_s2 = sub.add_parser("study2", help="retention study with consolidation")
    _add_study_args(p_s2)
    p_s2.add_argument("--lambdas", default="0,50,100",
                      help="comma-separated consolidation strengths")
    p_s2.add_argument("--source", default=None,
                      help="study1 output dir to reuse hybrid checkpoints from")
    p_s2.set_defaults(func=cmd_study2)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one task")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--task", required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--greedy", action="store_true", help="argmax actions instead of sampling")
    p_eval.add_argument("--env-server", default=None, help="host:port of an environment server")
    p_eval.set_defaults(func=cmd_eval)

    p_check = sub.add_parser("serve-check", help="probe an environment server for conformance")
    p_check.add_argument("--env-server", required=True, help="host:port")
    p_check.set_defaults(func=cmd_serve_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (UgpError, ConfigurationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
