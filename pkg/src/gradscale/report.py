"""On-disk reports: per-sweep CSV + JSON summary, per-run trace + summary.

Layout::

    <out>/<plan-hash>/sweep.csv
    <out>/<plan-hash>/summary.json
    <out>/<plan-hash>/<seed>/trace.csv
    <out>/<plan-hash>/<seed>/summary.json

``sweep.csv`` starts with one ``#`` metadata line carrying wall-clock
timings; everything after it is a pure function of the plan and seeds.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .diagnostics import write_trace
from .harness import ExperimentPlan, RunResult, StabilityBounds, SweepResult

SCHEMA = 1
SWEEP_COLUMNS = ("seed", "final_val_acc", "outcome", "iters")


def sweep_csv(sweep: SweepResult) -> str:
    meta = {
        "plan": sweep.plan.name,
        "plan_hash": sweep.plan.plan_hash(),
        "std": "population",
        "wall_ms": [round(r.wall_ms, 3) for r in sweep.runs],
    }
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in sweep.runs:
        w.writerow([r.seed, repr(r.val_acc), r.outcome.label, r.iters])
    return buf.getvalue()


def csv_body(text: str) -> str:
    """Drop ``#`` metadata lines, leaving the deterministic part."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def run_summary(plan: ExperimentPlan, run: RunResult) -> dict:
    return {
        "schema": SCHEMA,
        "plan": plan.name,
        "plan_hash": plan.plan_hash(),
        "optimizer": plan.optimizer,
        "seed": run.seed,
        "final_val_acc": run.val_acc,
        "outcome": run.outcome.label,
        "prediction_entropy": run.outcome.prediction_entropy,
        "majority_pred_frac": run.outcome.majority_pred_frac,
        "iters": run.iters,
        "diverged": run.diverged,
    }


def sweep_summary(sweep: SweepResult, bounds: StabilityBounds | None = None) -> dict:
    d = {
        "schema": SCHEMA,
        "plan": sweep.plan.name,
        "plan_hash": sweep.plan.plan_hash(),
        "optimizer": sweep.plan.optimizer,
        "seeds": list(sweep.plan.seeds),
        "mean_acc": sweep.mean_acc,
        "std_acc": sweep.std_acc,
        "std_kind": "population",
        "outcome_counts": sweep.outcome_counts,
        "failures": sweep.failures,
        "config": sweep.plan.to_dict(),
    }
    if bounds is not None:
        d["eps"] = bounds.eps
        d["eps_prime"] = bounds.eps_prime
        d["divergence_mean"] = bounds.empirical
        d["divergence_samples"] = bounds.n_samples
    return d


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def write_run(out_dir: str | Path, plan: ExperimentPlan, run: RunResult) -> Path:
    d = Path(out_dir) / plan.plan_hash() / str(run.seed)
    d.mkdir(parents=True, exist_ok=True)
    write_trace(run.trace, d / "trace.csv")
    (d / "summary.json").write_text(dumps(run_summary(plan, run)))
    return d


def write_sweep(out_dir: str | Path, sweep: SweepResult, bounds: StabilityBounds | None = None) -> Path:
    d = Path(out_dir) / sweep.plan.plan_hash()
    d.mkdir(parents=True, exist_ok=True)
    for run in sweep.runs:
        write_run(out_dir, sweep.plan, run)
    (d / "sweep.csv").write_text(sweep_csv(sweep))
    (d / "summary.json").write_text(dumps(sweep_summary(sweep, bounds)))
    return d
