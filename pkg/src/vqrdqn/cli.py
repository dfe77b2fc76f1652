"""Command line entry point: ``vqrdqn {train,eval,ablate,metrics,baseline,oracle}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import env as hrap
from . import harness


def _parse_hrap(label: str) -> hrap.HrapConfig:
    """``"3O-2T-2E"`` -> HrapConfig(num_officers=3, num_tasks=2, num_events=2)."""
    parts = {}
    for token in label.upper().split("-"):
        if len(token) < 2 or token[-1] not in "OTE" or not token[:-1].isdigit():
            raise argparse.ArgumentTypeError(f"bad configuration label {label!r}; expected e.g. 3O-2T-2E")
        parts[token[-1]] = int(token[:-1])
    if set(parts) != {"O", "T", "E"}:
        raise argparse.ArgumentTypeError(f"label {label!r} must name O, T and E")
    return hrap.HrapConfig(num_officers=parts["O"], num_events=parts["E"], num_tasks=parts["T"])


def _load(args) -> harness.ExperimentConfig:
    if args.config:
        config = harness.load_config(args.config)
    else:
        config = harness.make_experiment(args.variant or "vqr")
    overrides = {"output_dir": args.out}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "episodes", None):
        overrides["episodes"] = args.episodes
    if getattr(args, "eval_episodes", None):
        overrides["eval_episodes"] = args.eval_episodes
    if args.hrap:
        overrides["hrap"] = _parse_hrap(args.hrap)
    if args.variant and args.variant != config.agent_variant:
        config = harness.make_experiment(args.variant, config.hrap, config.agent,
                                         {k: v for k, v in config.network.items()
                                          if k not in ("feature", "head", "noisy")})
    return config.with_overrides(**overrides)


def _add_common(p: argparse.ArgumentParser, episodes: bool = True) -> None:
    p.add_argument("--config", help="INI experiment file (see README)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--hrap", help="problem size such as 3O-2T-2E")
    p.add_argument("--variant", choices=harness.VARIANTS)
    if episodes:
        p.add_argument("--episodes", type=int)
    p.add_argument("--eval-episodes", type=int)


def cmd_train(args) -> int:
    config = _load(args)
    record = harness.run_train(config)
    s = record.eval_summary
    print(f"mean reward {s['mean_reward']:.4f}  baseline {s['baseline_mean_reward']:.4f}  "
          f"reduction {s['reduction_percent']:.1f}%")
    print(f"wall clock {record.wall_clock:.1f} s, best episode {record.best_episode}, "
          f"artifacts in {config.output_dir}")
    return 0


def cmd_eval(args) -> int:
    config = _load(args)
    ckpt = args.checkpoint or str(Path(config.output_dir) / harness.CHECKPOINT_FILE)
    report = harness.run_eval(ckpt, config)
    print(f"mean reward {report['mean_reward']:.4f}  baseline {report['baseline_mean_reward']:.4f}  "
          f"reduction {report['reduction_percent']:.1f}%")
    return 0


def cmd_ablate(args) -> int:
    config = _load(args)
    rows = harness.run_ablation(args.topologies, config, args.seeds)
    print(harness.format_table(rows))
    return 0


def cmd_metrics(args) -> int:
    rows = harness.run_metrics(args.qubits, args.layers, args.pairs, args.states,
                               args.seed or 0, args.out)
    for r in rows:
        print(f"{r['topology']:<11} kl={r['kl']:.4f} mw={r['mean_mw']:.4f}")
    return 0


def cmd_baseline(args) -> int:
    config = _load(args)
    seeds = hrap.episode_seeds(config.master_seed, config.eval_episodes, "eval")
    rewards = hrap.rollout_random(config.hrap, seeds, harness.baseline_rng(config.master_seed))
    print(f"{config.hrap.label} random baseline over {len(seeds)} episodes: {np.mean(rewards):.4f}")
    return 0


def cmd_oracle(args) -> int:
    config = _load(args)
    seeds = hrap.episode_seeds(config.master_seed, config.eval_episodes, "eval")
    try:
        value = harness.oracle_mean(config.hrap, seeds)
    except hrap.SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{config.hrap.label} optimal mean reward over {len(seeds)} episodes: {value:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqrdqn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and evaluate its best checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out instances")
    _add_common(p, episodes=False)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train one VQR agent per circuit topology")
    _add_common(p)
    p.add_argument("--topologies", nargs="+", default=["linear", "star", "ring", "all_to_all"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="expressibility and entanglement per topology")
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--states", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/metrics")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("baseline", help="random-policy mean reward on the eval stream")
    _add_common(p, episodes=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("oracle", help="exhaustive optimum on the eval stream (small sizes only)")
    _add_common(p, episodes=False)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (hrap.ConfigError, harness.SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
