"""Command-line entry point: ``sear {train,eval,sweep-k,ablate,verify}``.

Exit codes: 0 success, 1 failed checks or a diverged run, 2 invalid
configuration or arguments. The output root is ``--out``, else ``$SEAR_OUT``,
else the config's ``output_dir``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_from_dict, load_config

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

# (arm id, label, overrides). Labels follow the design-choice ablation legend.
ABLATION_ARMS = [
    ("sear", "SEAR-{n}", {}),
    ("no-multi-horizon", "No Multi-Horizon", {"switches.multi_horizon": False}),
    ("mlp-critic", "MLP Critic", {"switches.transformer_critic": False}),
    ("no-random-replanning", "No Random Replanning", {"switches.random_replanning": False}),
    (
        "naive-chunking",
        "Naive Chunking",
        {"switches.multi_horizon": False, "switches.transformer_critic": False, "switches.random_replanning": False},
    ),
    ("sear-1", "SEAR-1", {"chunk_size": 1, "receding_horizon": 1}),
]


def output_root(config: RunConfig, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    return Path(os.environ.get("SEAR_OUT") or config.output_dir)


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    for flag, key in (("chunk_size", "chunk_size"), ("receding_horizon", "receding_horizon"), ("total_timesteps", "total_timesteps")):
        value = getattr(args, flag, None)
        if value is not None:
            out.append(f"{key}={value}")
    if getattr(args, "seed", None) is not None:
        out.append(f"seeds=[{int(args.seed)}]")
    return out


def _resolve(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _with(config: RunConfig, **changes) -> RunConfig:
    data = config.to_dict()
    data.update(changes)
    return config_from_dict(data)


# ---------------------------------------------------------------- train


def run_one(config: RunConfig, run_dir: Path, quiet: bool = False):
    """Train one seed into ``run_dir`` and emit its curves."""
    from .algo import train
    from .metrics import RunResult, emit_curves

    def progress(row):
        if not quiet:
            print(
                f"  step {row['env_step']:>8}  success {row['eval_success']:.2f}  return {row['eval_return']:.2f}"
                f"  alpha {row['alpha']:.4f}",
                flush=True,
            )

    log = train(config, run_dir, seed=config.seeds[0], progress=progress)
    result = RunResult.from_log(config.env.name, config.seeds[0], log.rows)
    emit_curves([result], run_dir / "curves")
    return result


def cmd_train(args) -> int:
    config = _resolve(args)
    root = output_root(config, args.out) / config.name
    for seed in config.seeds:
        run_cfg = _with(config, seeds=[seed])
        run_dir = root / f"seed_{seed}"
        print(f"training {config.name} seed {seed} -> {run_dir}", flush=True)
        result = run_one(run_cfg, run_dir, quiet=args.quiet)
        print(f"final success {result.success[-1]:.3f} at step {result.steps[-1]}", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- eval / sweep-k


def _load_policy(target: str, config_path: str | None):
    from .algo import load_agent

    path = Path(target)
    if path.is_dir():
        ckpt = path / "checkpoints" / "final.ckpt"
        cfg_path = Path(config_path) if config_path else path / "config.json"
    else:
        ckpt = path
        cfg_path = Path(config_path) if config_path else path.parent.parent / "config.json"
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    config = load_config(cfg_path) if cfg_path.is_file() else None
    agent, meta = load_agent(ckpt, config)
    return agent, agent.config, ckpt


def cmd_eval(args) -> int:
    from .algo import evaluate
    from .envs import make_env

    agent, config, ckpt = _load_policy(args.target, args.config)
    k = args.k if args.k is not None else config.receding_horizon
    env = make_env(config.env.name, **config.env.params)
    res = evaluate(agent.actor, env, k, args.episodes, args.seed)
    out = {"checkpoint": str(ckpt), "k": k, "episodes": args.episodes, "success": res.success_rate, "return": res.mean_return}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    from .envs import make_env
    from .metrics import sweep_receding_horizon

    agent, config, ckpt = _load_policy(args.target, args.config)
    n = config.chunk_size
    ks = args.k or list(range(1, n + 1))
    env = make_env(config.env.name, **config.env.params)
    table = sweep_receding_horizon(agent.actor, env, ks, episodes=args.episodes, seed=args.seed)
    out = Path(args.out) if args.out else ckpt.parent.parent / "sweep_k.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "success", "mean_return"])
        for k, s, r in table:
            w.writerow([k, repr(s), repr(r)])
    print(f"{'k':>3}  success  return")
    for k, s, r in table:
        print(f"{k:>3}  {s:7.3f}  {r:8.2f}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- ablate


def ablation_plan(config: RunConfig, root: Path) -> list[dict]:
    plan = []
    for arm, label, changes in ABLATION_ARMS:
        arm_cfg = config_from_dict(config.to_dict(), [(k.split("."), v) for k, v in changes.items()])
        arm_cfg = _with(arm_cfg, name=f"{config.name}-{arm}")
        for seed in config.seeds:
            plan.append(
                {
                    "arm": arm,
                    "label": label.format(n=config.chunk_size),
                    "seed": seed,
                    "config": _with(arm_cfg, seeds=[seed]),
                    "run_dir": root / arm / f"seed_{seed}",
                }
            )
    return plan


def _run_planned(item: dict):
    return run_one(item["config"], item["run_dir"], quiet=True)


def cmd_ablate(args) -> int:
    from .metrics import RunResult, bootstrap_ci, emit_curves, iqm

    config = _resolve(args)
    root = output_root(config, args.out) / f"{config.name}-ablate"
    plan = ablation_plan(config, root)
    if args.dry_run:
        for item in plan:
            sw = item["config"].switches
            print(
                f"{item['arm']:<22} {item['label']:<22} seed {item['seed']:<4} N={item['config'].chunk_size:<3} "
                f"multi_horizon={sw.multi_horizon} transformer_critic={sw.transformer_critic} "
                f"random_replanning={sw.random_replanning} -> {item['run_dir']}"
            )
        return EXIT_OK
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_planned, plan))
    else:
        results = []
        for item in plan:
            print(f"{item['arm']} seed {item['seed']}", flush=True)
            results.append(_run_planned(item))

    labelled = [dataclasses.replace(r, task=item["label"]) for r, item in zip(results, plan)]
    emit_curves(labelled, root / "curves")
    rows = []
    for arm, label, _ in ABLATION_ARMS:
        label = label.format(n=config.chunk_size)
        finals = [r.success[-1] for r, item in zip(results, plan) if item["arm"] == arm]
        lo, hi = bootstrap_ci(finals, 2000, 0.95, seed=0)
        rows.append((arm, label, len(finals), iqm(finals), lo, hi))
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "label", "seeds", "final_iqm_success", "ci_low", "ci_high"])
        for arm, label, n, m, lo, hi in rows:
            w.writerow([arm, label, n, f"{m:.6g}", f"{lo:.6g}", f"{hi:.6g}"])
    print(f"{'arm':<22} {'seeds':>5}  IQM success  95% CI")
    for arm, label, n, m, lo, hi in rows:
        print(f"{label:<22} {n:>5}  {m:11.3f}  [{lo:.3f}, {hi:.3f}]")
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(quick=args.quick)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sear", description="Chunked max-entropy actor-critic on toy environments.")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override, repeatable")
        sp.add_argument("--chunk-size", type=int)
        sp.add_argument("--receding-horizon", type=int)
        sp.add_argument("--total-timesteps", type=int)
        sp.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        sp.add_argument("--out", help="output root (default $SEAR_OUT or config output_dir)")

    t = sub.add_parser("train", help="train one run per configured seed")
    config_args(t)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint with receding-horizon control"),
        ("sweep-k", cmd_sweep_k, "evaluate one checkpoint across receding horizons k"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("target", help="run directory or checkpoint file")
        sp.add_argument("--config", help="config for the checkpoint (default: the run's config.json)")
        sp.add_argument("--episodes", type=int, default=100)
        sp.add_argument("--seed", type=int, default=1_000_000, help="first evaluation episode seed")
        if name == "eval":
            sp.add_argument("--k", type=int, help="receding horizon (default from config)")
        else:
            sp.add_argument("--k", type=int, nargs="+", help="receding horizons (default 1..N)")
            sp.add_argument("--out", help="output CSV (default <run>/sweep_k.csv)")
        sp.set_defaults(func=func)

    a = sub.add_parser("ablate", help="run the design-choice ablation arms")
    config_args(a)
    a.add_argument("--dry-run", action="store_true", help="list planned runs without executing")
    a.add_argument("--jobs", type=int, default=1, help="parallel runs")
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify", help="run the built-in oracle checks")
    v.add_argument("--quick", action="store_true", help="smaller trial counts")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    from .algo import TrainingDiverged

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
