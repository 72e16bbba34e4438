"""TOML experiment configs, built-in presets and seed expansion.

A config file has up to six tables, every key optional::

    [dataset]    kind, num_classes, base_count, feature_dim, seed,
                 imbalance_pattern, imbalance_ratio, val_per_class,
                 separation, margin
    [model]      kind ("linear" | "mlp"), hidden
    [optimizer]  name, loss ("cross-entropy" | "focal"), lr, batch_size,
                 epochs, focal_alpha, focal_gamma, noise_lambda,
                 swa_window
    [schedule]   kind, tau, static_value      (present iff name = "dsgd")
    [sweep]      seeds (count or list), workers, degenerate_margin
    [output]     dir

A top-level ``preset = "<name>"`` expands to the preset's plans; only
[sweep] and [output] may accompany it. Unknown keys are rejected with the
line they appear on.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable

import tomli

from .data import DatasetSpec, ImbalanceSpec
from .errors import ConfigError
from .harness import DEFAULT_SEEDS, OPTIMIZERS, ExperimentPlan
from .optim import FocalConfig, ScalerSchedule, StepConfig

SEED_BASE, SEED_STRIDE = 42, 10

_KEYS: dict[str, dict[str, type | tuple[type, ...]]] = {
    "dataset": {
        "kind": str, "num_classes": int, "base_count": int, "feature_dim": int, "seed": int,
        "imbalance_pattern": str, "imbalance_ratio": (int, float), "val_per_class": int,
        "separation": (int, float), "margin": (int, float),
    },
    "model": {"kind": str, "hidden": int},
    "optimizer": {
        "name": str, "loss": str, "lr": (int, float), "batch_size": int, "epochs": int,
        "focal_alpha": (int, float), "focal_gamma": (int, float), "noise_lambda": (int, float),
        "swa_window": int,
    },
    "schedule": {"kind": str, "tau": (int, float), "static_value": (int, float)},
    "sweep": {"seeds": (int, list), "workers": int, "degenerate_margin": (int, float)},
    "output": {"dir": str},
}


def expand_seeds(spec: int | str | Iterable[int]) -> tuple[int, ...]:
    """``N`` -> ``42, 52, ..., 42 + 10 (N - 1)``; a list or "a,b,c" is taken literally."""
    if isinstance(spec, str):
        spec = spec.strip()
        if "," not in spec:
            spec = int(spec)
        else:
            spec = [int(s) for s in spec.split(",") if s.strip()]
    if isinstance(spec, bool):
        raise ConfigError("seeds must be a count or a list of integers")
    if isinstance(spec, int):
        if spec < 1:
            raise ConfigError("seed count must be >= 1")
        return tuple(SEED_BASE + SEED_STRIDE * i for i in range(spec))
    seeds = tuple(int(s) for s in spec)
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("seed list must be nonempty and distinct")
    return seeds


# -- presets ------------------------------------------------------------------

_ABLATION_DATA = DatasetSpec(kind="imbalanced-subsample", num_classes=3, base_count=200, feature_dim=2,
                             seed=3, imbalance=ImbalanceSpec("step", 10), val_per_class=300, separation=2.0)
_ABLATION_BASE = ExperimentPlan(dataset=_ABLATION_DATA, model_kind="mlp", optimizer="dsgd",
                                schedule=ScalerSchedule("linear-asc", 1.0),
                                step=StepConfig(lr=0.5, batch_size=16), epochs=10)

# collapse-prone fixture: overlapping classes, 50:1 step imbalance, very large step
# size; frozen after calibration (see README "Collapse fixture")
COLLAPSE_DATA = DatasetSpec(kind="gaussian-overlap", num_classes=2, base_count=200, feature_dim=2, seed=7,
                            imbalance=ImbalanceSpec("step", 50), val_per_class=200, separation=1.5)
COLLAPSE_PLAN = ExperimentPlan(dataset=COLLAPSE_DATA, model_kind="linear", optimizer="sgd",
                               step=StepConfig(lr=20.0, batch_size=8), epochs=30,
                               seeds=expand_seeds(20), name="collapse-fixture/sgd")
COLLAPSE_SCHEDULE = ScalerSchedule("cosine", 0.2)
# three disjoint 20-seed sets used to replicate the fixture comparison
FIXTURE_SEED_SETS = tuple(tuple(base + 10 * i for i in range(20)) for base in (42, 10042, 20042))

THEORY_DATA = DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=100, feature_dim=2, seed=11,
                          separation=1.0, val_per_class=50)
THEORY_PLAN = ExperimentPlan(dataset=THEORY_DATA, optimizer="dsgd", schedule=ScalerSchedule("linear-asc", 0.1),
                             step=StepConfig(lr=0.005, batch_size=8), epochs=10,
                             seeds=expand_seeds(60), name="theory-verification")


def _named(plan: ExperimentPlan, name: str) -> ExperimentPlan:
    return replace(plan, name=name)


def preset_plans(name: str) -> list[ExperimentPlan]:
    base = _ABLATION_BASE
    if name == "scheduler-ablation":
        plans = [_named(replace(base, schedule=ScalerSchedule(k, 1.0)), f"{name}/{k}")
                 for k in ("linear-asc", "linear-desc", "cosine")]
        plans += [_named(replace(base, schedule=ScalerSchedule("static", 1.0, static_value=v)),
                         f"{name}/static={v}") for v in (0.1, 0.3, 0.5, 0.7, 0.9)]
        return plans
    if name == "tau-sweep":
        return [_named(replace(base, schedule=ScalerSchedule("linear-asc", tau)), f"{name}/tau={tau}")
                for tau in (0.0, 0.1, 0.3, 0.5, 1.0)]
    if name == "method-comparison":
        out = []
        for opt in OPTIMIZERS:
            sched = base.schedule if opt == "dsgd" else None
            out.append(_named(replace(base, optimizer=opt, schedule=sched), f"{name}/{opt}"))
        return out
    if name == "collapse-fixture":
        return [COLLAPSE_PLAN,
                replace(COLLAPSE_PLAN, optimizer="dsgd", schedule=COLLAPSE_SCHEDULE, name="collapse-fixture/dsgd")]
    if name == "theory-verification":
        return [THEORY_PLAN]
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("scheduler-ablation", "tau-sweep", "method-comparison", "collapse-fixture", "theory-verification")


# -- parsing --------------------------------------------------------------------

@dataclass
class RunConfig:
    plans: list[ExperimentPlan]
    workers: int = 1
    out_dir: str | None = None


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
_KEYLINE = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")


def _key_line(text: str, section: str | None, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            continue
        m = _KEYLINE.match(line)
        if m and m.group(1) == key and current == section:
            return lineno
    return None


def _parse_text(text: str, path: str | None) -> dict[str, Any]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e}", line=getattr(e, "lineno", None), path=path) from None
    for key, val in doc.items():
        if isinstance(val, dict):
            if key not in _KEYS:
                raise ConfigError(f"unknown section [{key}]", line=_section_line(text, key), path=path)
            allowed = _KEYS[key]
            for k, v in val.items():
                if k not in allowed:
                    raise ConfigError(f"unknown key {k!r} in [{key}]", line=_key_line(text, key, k), path=path)
                if isinstance(v, bool) or not isinstance(v, allowed[k]):
                    raise ConfigError(f"[{key}] {k} has the wrong type ({type(v).__name__})",
                                      line=_key_line(text, key, k), path=path)
        elif key != "preset":
            raise ConfigError(f"unknown top-level key {key!r}", line=_key_line(text, None, key), path=path)
        elif not isinstance(val, str):
            raise ConfigError("preset must be a string", line=_key_line(text, None, key), path=path)
    return doc


def _section_line(text: str, section: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m and m.group(1) == section:
            return lineno
    return None


def _plan_from_doc(doc: dict[str, Any], text: str, path: str | None) -> ExperimentPlan:
    ds = dict(doc.get("dataset", {}))
    opt = dict(doc.get("optimizer", {}))
    model = doc.get("model", {})
    sweep = doc.get("sweep", {})

    def fail(msg, section, key):
        line = _key_line(text, section, key) if key else _section_line(text, section)
        return ConfigError(msg, line=line, path=path)

    name = opt.get("name", "sgd")
    loss = opt.get("loss", "cross-entropy")
    if name not in OPTIMIZERS:
        raise fail(f"unknown optimizer {name!r}", "optimizer", "name")
    if loss not in ("cross-entropy", "focal"):
        raise fail(f"unknown loss {loss!r}", "optimizer", "loss")
    if loss == "focal":
        if name == "dsgd":
            raise fail("focal loss cannot be combined with dsgd", "optimizer", "loss")
        if name not in ("sgd", "focal"):
            raise fail(f"focal loss is only available with plain sgd, not {name!r}", "optimizer", "loss")
        name = "focal"
    has_sched = "schedule" in doc
    if name == "dsgd" and not has_sched:
        raise fail("optimizer dsgd needs a [schedule] section", "optimizer", "name")
    if name != "dsgd" and has_sched:
        raise fail(f"[schedule] only applies to dsgd, not {name!r}", "schedule", None)

    try:
        imb = None
        if "imbalance_pattern" in ds or "imbalance_ratio" in ds:
            imb = ImbalanceSpec(ds.pop("imbalance_pattern", "step"), float(ds.pop("imbalance_ratio", 10.0)))
        dataset = DatasetSpec(imbalance=imb, **ds)
    except (TypeError, ValueError) as e:
        raise fail(f"invalid [dataset]: {e}", "dataset", None) from None
    try:
        sched = None
        if has_sched:
            sched = ScalerSchedule(**doc["schedule"])
        plan = ExperimentPlan(
            dataset=dataset,
            model_kind=model.get("kind", "linear"),
            hidden=model.get("hidden", 16),
            optimizer=name,
            schedule=sched,
            step=StepConfig(lr=float(opt.get("lr", 0.1)), batch_size=opt.get("batch_size", 32)),
            epochs=opt.get("epochs", 5),
            seeds=expand_seeds(sweep.get("seeds", len(DEFAULT_SEEDS))),
            focal=FocalConfig(float(opt.get("focal_alpha", 0.25)), float(opt.get("focal_gamma", 2.0))),
            noise_lambda=float(opt.get("noise_lambda", 0.15)),
            swa_window=opt.get("swa_window", 3),
            degenerate_margin=float(sweep.get("degenerate_margin", 0.02)),
            name=Path(path).stem if path else "config",
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config: {e}", path=path) from None
    if plan.model_kind not in ("linear", "mlp"):
        raise fail(f"unknown model kind {plan.model_kind!r}", "model", "kind")
    return plan


def parse_config_text(text: str, path: str | None = None) -> RunConfig:
    doc = _parse_text(text, path)
    sweep = doc.get("sweep", {})
    out = doc.get("output", {}).get("dir")
    workers = sweep.get("workers", 1)
    if workers < 1:
        raise ConfigError("workers must be >= 1", line=_key_line(text, "sweep", "workers"), path=path)
    if "preset" in doc:
        extra = [k for k in doc if k not in ("preset", "sweep", "output")]
        if extra:
            raise ConfigError(f"preset configs only accept [sweep] and [output], found [{extra[0]}]",
                              line=_section_line(text, extra[0]), path=path)
        try:
            plans = preset_plans(doc["preset"])
        except ConfigError as e:
            raise ConfigError(str(e), line=_key_line(text, None, "preset"), path=path) from None
        if "seeds" in sweep:
            plans = [replace(p, seeds=expand_seeds(sweep["seeds"])) for p in plans]
        if "degenerate_margin" in sweep:
            plans = [replace(p, degenerate_margin=float(sweep["degenerate_margin"])) for p in plans]
        return RunConfig(plans, workers, out)
    return RunConfig([_plan_from_doc(doc, text, path)], workers, out)


def parse_config(path: str | Path) -> RunConfig:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path=path) from None
    return parse_config_text(text, path)


# -- command-line overrides -----------------------------------------------------

def apply_overrides(plan: ExperimentPlan, *, optimizer: str | None = None, tau: float | None = None,
                    gamma_kind: str | None = None, gamma_static: float | None = None,
                    eta: float | None = None, epochs: int | None = None,
                    batch_size: int | None = None, seeds: tuple[int, ...] | None = None) -> ExperimentPlan:
    """Return ``plan`` with flag values substituted; schedule flags imply dsgd settings."""
    changes: dict[str, Any] = {}
    opt = optimizer or plan.optimizer
    if opt not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {opt!r}")
    sched_flags = tau is not None or gamma_kind is not None or gamma_static is not None
    if sched_flags and opt != "dsgd":
        raise ConfigError(f"schedule flags only apply to dsgd, not {opt!r}")
    if opt == "dsgd":
        s = plan.schedule or ScalerSchedule()
        kind = gamma_kind or ("static" if gamma_static is not None else s.kind)
        try:
            changes["schedule"] = ScalerSchedule(
                kind,
                s.tau if tau is None else tau,
                static_value=s.static_value if gamma_static is None else gamma_static,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None
    else:
        changes["schedule"] = None
    changes["optimizer"] = opt
    if eta is not None or batch_size is not None:
        try:
            changes["step"] = StepConfig(plan.step.lr if eta is None else eta,
                                         plan.step.batch_size if batch_size is None else batch_size)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if epochs is not None:
        if epochs < 1:
            raise ConfigError("epochs must be >= 1")
        changes["epochs"] = epochs
    if seeds is not None:
        changes["seeds"] = seeds
    return replace(plan, **changes)
