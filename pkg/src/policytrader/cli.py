"""Command-line entry point: ``run`` experiments and ``synth`` tick files."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .backtest import SplitSpec, make_envs, run_experiment, run_seed
from .config import ConfigError, ExperimentConfig, format_config, load_config, replace
from .environment import RewardParams
from .market_data import Bar, IngestionError, load_ticks, sample_stream
from .synthetic import generate_synthetic, load_synthetic_spec, write_synthetic

log = logging.getLogger("policytrader")


class RunError(RuntimeError):
    pass


def _resolve(path: str, base: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def load_bars(cfg: ExperimentConfig, base_dir: str = ".") -> list[Bar]:
    if cfg.data_path:
        path = _resolve(cfg.data_path, base_dir)
        if not os.path.isfile(path):
            raise RunError(f"data file not found: {path}")
        try:
            trades = load_ticks(path)
        except IngestionError as exc:
            raise RunError(f"{path}: {exc}") from None
    elif cfg.synthetic_spec:
        path = _resolve(cfg.synthetic_spec, base_dir)
        if not os.path.isfile(path):
            raise RunError(f"synthetic spec not found: {path}")
        trades = generate_synthetic(load_synthetic_spec(path))
    else:
        raise RunError("config sets neither data_path nor synthetic_spec")
    return sample_stream(trades, tgt=cfg.bars_per_day, initial_threshold=cfg.initial_threshold)


def manifest(cfg: ExperimentConfig, n_bars: int) -> dict:
    return {
        "version": __version__,
        "config": format_config(cfg),
        "n_bars": n_bars,
        "seed_rule": "numpy SeedSequence(entropy=seed, spawn_key=(run,)); "
                     "agent streams are spawn()ed children in the order "
                     "policy_init, policy_dropout, explore, critic_init, critic_dropout, replay",
        "run_seeds": [{"run": i, "entropy": cfg.seed, "spawn_key": list(run_seed(cfg.seed, i).spawn_key)}
                      for i in range(cfg.runs)],
    }


def cmd_run(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.config):
        raise RunError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    overrides = {k: v for k, v in (("seed", args.seed), ("runs", args.runs), ("out_dir", args.out)) if v is not None}
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = replace(cfg, **overrides)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    bars = load_bars(cfg, base_dir)
    spec = cfg.experiment_spec()
    try:
        make_envs(bars, SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac),
                  RewardParams(cfg.cost_rate, cfg.risk_sensitivity, cfg.lookback), cfg.n_obs)
    except ValueError as exc:
        raise RunError(f"{len(bars)} bars are not enough for the configured splits: {exc}") from None
    log.info("%d bars, model %s, %d runs", len(bars), spec.model_name, cfg.runs)
    if args.dry_run:
        print(f"config OK: {spec.model_name}, {len(bars)} bars, {cfg.runs} runs")
        return 0
    out_dir = _resolve(cfg.out_dir, os.getcwd())
    try:
        os.makedirs(out_dir, exist_ok=True)
        payload = run_experiment(spec, bars, out_dir, workers=cfg.workers)
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest(cfg, len(bars)), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise RunError(f"cannot write results to {out_dir}: {exc}") from None
    avg = payload["average"]
    print(f"{spec.model_name}: E[R]={avg['expected_return']} Std={avg['std_return']} Sharpe={avg['sharpe']} "
          f"-> {os.path.join(out_dir, 'metrics.json')}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.spec):
        raise RunError(f"synthetic spec not found: {args.spec}")
    spec = load_synthetic_spec(args.spec)
    try:
        n = write_synthetic(spec, args.out, seed=args.seed)
    except OSError as exc:
        raise RunError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {n} ticks to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="policytrader", description="Deep RL trading experiments on dollar bars.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a walk-forward experiment from a config file")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument("--runs", type=int, help="number of independent runs")
    run.add_argument("--out", help="output directory override")
    run.add_argument("--workers", type=int, help="parallel worker processes")
    run.add_argument("--dry-run", action="store_true", help="validate config and data, then exit")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic tick CSV")
    synth.add_argument("--spec", required=True, help="synthetic market spec file")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--seed", type=int, help="seed override")
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RunError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
