"""Command-line entry point: instance generation, single runs, campaigns,
gamma sweeps, feasibility probes, and batch-poisoning demos.

Exit codes: 0 success, 1 configuration error, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .attacks import feasibility_check
from .convex import FactorizationError, NumericalError
from .harness import (
    ConfigError,
    apply_overrides,
    build_instance,
    gamma_sweep,
    load_config,
    run_batched_poisoning,
    run_campaign,
    run_episode,
    warmup_learner,
    write_campaign_results,
    write_results,
    write_sweep_results,
)
from .model import DataLoadError, save_instance

DEFAULT_GAMMA_GRID = (0.02, 0.2, 0.35, 0.5, 0.65, 0.8)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(
        prog="banditlab",
        description="Contextual-bandit attack laboratory: simulate linear "
                    "bandit learners under adversarial reward and context "
                    "perturbations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="output directory (default: config output_dir "
                            "or ./results)")
        p.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable "
                            "(e.g. attack.gamma=0.22)")
        p.add_argument("--quiet", action="store_true",
                       help="print result paths only")

    p = sub.add_parser("gen-instance",
                       help="generate the configured synthetic instance "
                            "and write it as JSON")
    common(p)
    p = sub.add_parser("run", help="one seeded episode; writes CSV + JSON")
    common(p)
    p = sub.add_parser("campaign",
                       help="replicated episodes with aggregation")
    common(p)
    p = sub.add_parser("sweep-gamma",
                       help="one campaign per gamma of the soft reward attack")
    common(p)
    p.add_argument("gammas", nargs="*", type=float,
                   help=f"gamma grid (default {DEFAULT_GAMMA_GRID})")
    p = sub.add_parser("feasibility",
                       help="warm up the learner unattacked, then probe "
                            "single-context attack feasibility")
    common(p)
    p = sub.add_parser("poison-demo",
                       help="semi-online batch poisoning demonstration")
    common(p)
    return parser


def _prepare(args):
    config = load_config(args.config)
    if args.overrides:
        pairs = []
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, _, value = item.partition("=")
            pairs.append((key, value))
        config = apply_overrides(config, pairs)
    seed = args.seed if args.seed is not None else config.seed
    out_dir = args.out or config.output_dir or "results"
    return config, seed, out_dir


def _say(args, message):
    if not args.quiet:
        print(message)


def _cmd_gen_instance(args):
    config, seed, out_dir = _prepare(args)
    instance = build_instance(config)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "instance.json")
    save_instance(instance, path)
    _say(args, f"instance: {instance.n_arms} arms, dim {instance.dim}, "
               f"{instance.n_contexts} contexts")
    print(path)
    return 0


def _cmd_run(args):
    config, seed, out_dir = _prepare(args)
    metrics = run_episode(config, seed)
    csv_path, json_path = write_results(metrics, out_dir, config=config)
    summary = metrics.summary()
    _say(args, f"target arm {summary['target_arm']}: pulled "
               f"{summary['target_pull_fraction']:.2%} of "
               f"{summary['horizon']} steps, cost {summary['total_cost']:.2f}, "
               f"regret {summary['total_regret']:.2f}")
    print(csv_path)
    print(json_path)
    return 0


def _cmd_campaign(args):
    config, seed, out_dir = _prepare(args)
    if args.seed is not None:
        config = apply_overrides(config, [("seed", str(args.seed))])
    runs, aggregate = run_campaign(config)
    _, json_path = write_campaign_results(runs, aggregate, out_dir,
                                          config=config)
    frac = aggregate["target_pull_fraction"]
    _say(args, f"{len(runs)} replications: target pulled "
               f"{frac['mean']:.2%} +- {frac['std']:.2%}")
    print(json_path)
    return 0


def _cmd_sweep_gamma(args):
    config, seed, out_dir = _prepare(args)
    grid = args.gammas or list(DEFAULT_GAMMA_GRID)
    rows = gamma_sweep(config, grid)
    csv_path, json_path = write_sweep_results(rows, out_dir, config=config)
    for row in rows:
        _say(args, f"gamma={row['gamma']:.3g}: cost {row['cost_mean']:.2f}, "
                   f"target pulls {row['target_pulls_mean']:.2%}")
    print(csv_path)
    print(json_path)
    return 0


def _cmd_feasibility(args):
    config, seed, out_dir = _prepare(args)
    instance, learner, target_arm, target_ctx = warmup_learner(config, seed)
    if not hasattr(learner, "ellipsoids"):
        raise ConfigError("feasibility probes need a ridge learner")
    mode = "full" if config.attack.get("kind") == "single-ucb-full" else "relaxed"
    result = feasibility_check(learner.ellipsoids(), target_arm, mode=mode,
                               tol=config.attack.get("feas_tol", 1e-6))
    _say(args, f"target arm {target_arm}, mode {mode}, "
               f"hull distance {result.distance:.6g}")
    if result.feasible:
        wnorm = float(sum(v * v for v in result.witness) ** 0.5)
        print(f"feasible witness_norm={wnorm!r}")
    else:
        print("infeasible")
    return 0


def _cmd_poison_demo(args):
    config, seed, out_dir = _prepare(args)
    out = run_batched_poisoning(config, seed)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "poison_demo.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    _say(args, f"post-poison target fraction "
               f"{out['post_poison_target_fraction']:.2%}, inverse-design "
               f"bound holds: {out['anv_bound_holds']}")
    print(path)
    return 0


_COMMANDS = {
    "gen-instance": _cmd_gen_instance,
    "run": _cmd_run,
    "campaign": _cmd_campaign,
    "sweep-gamma": _cmd_sweep_gamma,
    "feasibility": _cmd_feasibility,
    "poison-demo": _cmd_poison_demo,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"banditlab: error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataLoadError, FileNotFoundError) as exc:
        print(f"banditlab: config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FactorizationError, ValueError,
            RuntimeError) as exc:
        print(f"banditlab: runtime error ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
