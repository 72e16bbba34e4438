"""``gradscale`` command-line entry point.

    gradscale run --optimizer dsgd --gamma-kind cosine --tau 0.5 --seed 42
    gradscale sweep --preset tau-sweep --seeds 10 --workers 4
    gradscale verify-theory
    gradscale export-trace runs/<hash>/42/trace.csv --to copy.csv

Results go to ``--out`` (default ``runs``); the GRADSCALE_OUT environment
variable takes precedence. Failures exit nonzero with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import PRESETS, RunConfig, apply_overrides, expand_seeds, parse_config, preset_plans, THEORY_PLAN
from .diagnostics import read_trace, write_trace
from .errors import ConfigError, GradscaleError
from .harness import ExperimentPlan, seed_sweep, train
from .optim import SCHEDULE_KINDS
from .report import dumps, run_summary, sweep_summary, write_run, write_sweep
from .verify import verify_all


def _plan_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="TOML experiment config")
    src.add_argument("--preset", choices=PRESETS, help="built-in plan list")
    p.add_argument("--out", metavar="DIR", help="output root (default: runs; GRADSCALE_OUT overrides)")
    p.add_argument("--optimizer", choices=("dsgd", "sgd", "pcgrad", "focal", "noisytune+sgd", "swa"))
    p.add_argument("--tau", type=float, help="scaler cap in [0, 1] (dsgd)")
    p.add_argument("--gamma-kind", choices=SCHEDULE_KINDS, help="scaler schedule (dsgd)")
    p.add_argument("--gamma-static", type=float, metavar="V", help="constant scaler; implies --gamma-kind static")
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradscale", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one seed per plan")
    _plan_args(run)
    run.add_argument("--seed", type=int, default=42)

    sweep = sub.add_parser("sweep", help="train every seed of every plan")
    _plan_args(sweep)
    sweep.add_argument("--seeds", metavar="N|LIST", help="count (42, 52, ...) or comma-separated list")
    sweep.add_argument("--workers", type=int, help="parallel runs (default: logical cores)")

    vt = sub.add_parser("verify-theory", help="run the descent, recurrence and zero-error suites")
    vt.add_argument("--seeds", metavar="N|LIST", help="seeds for the descent monitor (default 60)")
    vt.add_argument("--min-gated", type=int, default=10_000, help="gated windows required (default 10000)")
    vt.add_argument("--pairs", type=int, default=10, help="paired trajectories per optimizer (default 10)")

    ex = sub.add_parser("export-trace", help="re-serialize a stored trace CSV")
    ex.add_argument("trace", metavar="PATH")
    ex.add_argument("--to", metavar="PATH", help="destination (default: stdout)")
    return ap


def _load(args) -> RunConfig:
    if args.config:
        cfg = parse_config(args.config)
    elif args.preset:
        cfg = RunConfig(preset_plans(args.preset))
    else:
        cfg = RunConfig([ExperimentPlan(name="default")])
    seeds = expand_seeds(args.seeds) if getattr(args, "seeds", None) else None
    cfg.plans = [
        apply_overrides(p, optimizer=args.optimizer, tau=args.tau, gamma_kind=args.gamma_kind,
                        gamma_static=args.gamma_static, eta=args.eta, epochs=args.epochs,
                        batch_size=args.batch_size, seeds=seeds)
        for p in cfg.plans
    ]
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(os.environ.get("GRADSCALE_OUT") or args.out or cfg.out_dir or "runs")


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    results = []
    for plan in cfg.plans:
        r = train(plan, args.seed)
        d = write_run(out, plan, r)
        results.append({**run_summary(plan, r), "dir": str(d)})
    print(json.dumps(results if len(results) > 1 else results[0], indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    workers = args.workers or (cfg.workers if args.config else None) or os.cpu_count() or 1
    out = _out_dir(args, cfg)
    lines = []
    for plan in cfg.plans:
        s = seed_sweep(plan, workers=workers)
        d = write_sweep(out, s)
        summary = sweep_summary(s)
        lines.append({k: summary[k] for k in ("plan", "plan_hash", "mean_acc", "std_acc", "outcome_counts")}
                     | {"dir": str(d)})
    print(json.dumps(lines, indent=2, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    plan = THEORY_PLAN
    if args.seeds:
        plan = replace(plan, seeds=expand_seeds(args.seeds))
    rep = verify_all(plan, min_gated=args.min_gated, n_pairs=args.pairs)
    sys.stdout.write(dumps(rep.summary()))
    return 0 if rep.ok else 1


def cmd_export(args) -> int:
    text = write_trace(read_trace(args.trace), args.to)
    if not args.to:
        sys.stdout.write(text)
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify-theory": cmd_verify, "export-trace": cmd_export}


def _fail(err: Exception) -> int:
    if isinstance(err, GradscaleError):
        payload = err.to_dict()
    else:
        payload = {"error": type(err).__name__, "message": str(err)}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return 2


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (GradscaleError, ValueError, OSError) as e:
        return _fail(e)


if __name__ == "__main__":
    sys.exit(main())
