"""Seeded training runs, seed sweeps, paired-trajectory divergence and the
closed-form stability bounds built from them.
"""
from __future__ import annotations

import hashlib
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .data import BatchSampler, Dataset, DatasetSpec, generate, sample_epoch
from .diagnostics import (
    IterRecord,
    OutcomeThresholds,
    RunOutcome,
    TheoremMonitorReport,
    check_window,
    classify_outcome,
    record_iteration,
)
from .errors import EmptyBatchError, MismatchError
from .model import Classifier, ParamVector, batch_loss_decomposition
from .optim import (
    FocalConfig,
    ScalerSchedule,
    StepConfig,
    dsgd_step,
    gamma_at,
    noisytune_perturb,
    partition,
    pcgrad_step,
    sgd_step,
    swa_average,
)

OPTIMIZERS = ("dsgd", "sgd", "pcgrad", "focal", "noisytune+sgd", "swa")
DEFAULT_SEEDS = tuple(42 + 10 * i for i in range(10))


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model_kind: str = "linear"
    hidden: int = 16
    optimizer: str = "sgd"
    schedule: ScalerSchedule | None = None  # horizon is set per run
    step: StepConfig = field(default_factory=lambda: StepConfig(lr=0.1, batch_size=32))
    epochs: int = 5
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    focal: FocalConfig = field(default_factory=FocalConfig)
    noise_lambda: float = 0.15
    swa_window: int = 3
    degenerate_margin: float = 0.02
    name: str = ""

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be nonempty and distinct")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer == "dsgd" and self.schedule is None:
            object.__setattr__(self, "schedule", ScalerSchedule())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def plan_hash(self) -> str:
        """Hash of everything except seeds and name, so reruns share directories."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("name")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@lru_cache(maxsize=16)
def dataset_for(spec: DatasetSpec) -> Dataset:
    return generate(spec)


def model_for(plan: ExperimentPlan, ds: Dataset) -> Classifier:
    return Classifier(plan.model_kind, ds.feature_dim, ds.num_classes, plan.hidden)


def sub_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


INIT_STREAM, ORDER_STREAM, NOISE_STREAM, PERTURB_STREAM = 0, 1, 2, 3


@dataclass(eq=False)
class RunResult:
    seed: int
    params: ParamVector
    trace: list[IterRecord]
    outcome: RunOutcome
    iters: int
    wall_ms: float
    diverged: bool
    val_predictions: np.ndarray
    rho: np.ndarray  # (1/m) sum v_i per step
    step_norm: np.ndarray  # |theta_t - theta_{t+1}|
    max_grad_norm: np.ndarray  # largest per-example gradient norm seen at step t
    lrs: np.ndarray
    params_history: list[ParamVector] | None = None

    @property
    def val_acc(self) -> float:
        return self.outcome.final_val_acc


StepHook = Callable[[int, ParamVector, np.ndarray, np.ndarray, float, float], None]


def train(plan: ExperimentPlan, seed: int, *, init: ParamVector | None = None,
          order_seed: int | None = None, keep_params: bool = False,
          hook: StepHook | None = None) -> RunResult:
    """One run of ``plan``. Init, order and noise all derive from ``seed``
    unless ``init``/``order_seed`` override them.

    ``hook(t, params, X_batch, y_batch, gamma_t, gamma_next)`` is called before
    each step. A non-finite parameter vector stops the run; its outcome is
    computed from whatever the model predicts at that point.
    """
    t0 = time.perf_counter()
    ds = dataset_for(plan.dataset)
    model = model_for(plan, ds)
    params = init if init is not None else model.init_params(sub_seed(seed, INIT_STREAM))
    if plan.optimizer == "noisytune+sgd":
        params = noisytune_perturb(params, plan.noise_lambda, sub_seed(seed, NOISE_STREAM))
    sampler = BatchSampler(plan.step.batch_size,
                           sub_seed(seed, ORDER_STREAM) if order_seed is None else order_seed)
    spe = sampler.steps_per_epoch(ds.n_train)
    T = spe * plan.epochs
    sched = plan.schedule.with_horizon(T) if plan.optimizer == "dsgd" else None
    focal = plan.focal if plan.optimizer == "focal" else None
    cfg = plan.step

    trace: list[IterRecord] = []
    rho, step_norm, max_gn, lrs = [], [], [], []
    history = [params] if keep_params else None
    checkpoints: list[ParamVector] = []
    diverged = False
    t = 0
    for epoch in range(plan.epochs):
        for idx in sample_epoch(sampler, ds, epoch):
            Xb, yb = ds.X_train[idx], ds.y_train[idx]
            gamma = gamma_at(sched, t) if sched else 1.0
            if hook is not None:
                gamma_next = gamma_at(sched, t + 1) if sched else 1.0
                hook(t, params, Xb, yb, gamma, gamma_next)
            g = model.per_example_grads(params, Xb, yb, focal=focal, indices=idx)
            part = partition(g)
            trace.append(record_iteration(part, batch_loss_decomposition(g), gamma, t))
            max_gn.append(float(np.sqrt((g.grads * g.grads).sum(axis=1)).max()))
            lrs.append(cfg.lr)
            if plan.optimizer == "dsgd":
                new = dsgd_step(params, part, cfg, gamma)
                rho.append(part.rho(gamma))
            elif plan.optimizer == "pcgrad":
                new = pcgrad_step(params, part, cfg)
                rho.append(1.0)
            else:
                new = sgd_step(params, part.total, cfg, m=part.size)
                rho.append(1.0)
            step_norm.append(float(np.linalg.norm(params.values - new.values)))
            params = new
            t += 1
            if keep_params:
                history.append(params)
            if not params.is_finite():
                diverged = True
                break
        if diverged:
            break
        if plan.optimizer == "swa":
            checkpoints = (checkpoints + [params])[-plan.swa_window:]
    if plan.optimizer == "swa" and checkpoints and not diverged:
        params = swa_average(checkpoints)

    with np.errstate(invalid="ignore", over="ignore"):
        logits = model.logits(params, ds.X_val)
    preds = np.nan_to_num(logits, nan=-np.inf).argmax(axis=1)
    acc = float((preds == ds.y_val).mean())
    prior = float(np.bincount(ds.y_val).max() / ds.y_val.size)
    outcome = classify_outcome(preds, acc, OutcomeThresholds(prior, plan.degenerate_margin))
    return RunResult(
        seed=seed, params=params, trace=trace, outcome=outcome, iters=t,
        wall_ms=(time.perf_counter() - t0) * 1000.0, diverged=diverged,
        val_predictions=preds, rho=np.array(rho), step_norm=np.array(step_norm),
        max_grad_norm=np.array(max_gn), lrs=np.array(lrs), params_history=history,
    )


def run_single(plan: ExperimentPlan, seed: int) -> RunResult:
    return train(plan, seed)


# -- seed sweeps -----------------------------------------------------------

@dataclass(eq=False)
class SweepResult:
    plan: ExperimentPlan
    runs: list[RunResult]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.val_acc for r in self.runs])

    @property
    def mean_acc(self) -> float:
        return statistics.fmean(self.accuracies.tolist())

    @property
    def std_acc(self) -> float:
        """Population standard deviation over seeds (exact for identical values)."""
        return statistics.pstdev(self.accuracies.tolist())

    @property
    def outcome_counts(self) -> dict[str, int]:
        counts = {"success": 0, "degenerate": 0, "collapsed": 0}
        for r in self.runs:
            counts[r.outcome.label] += 1
        return counts

    @property
    def failures(self) -> int:
        c = self.outcome_counts
        return c["degenerate"] + c["collapsed"]


def _run_for_pool(args):
    plan, seed = args
    r = train(plan, seed)
    r.params_history = None
    return r


def seed_sweep(plan: ExperimentPlan, workers: int = 1) -> SweepResult:
    if len(plan.seeds) < 2:
        raise ValueError("a sweep needs at least two seeds")
    jobs = [(plan, s) for s in plan.seeds]
    if workers <= 1:
        runs = [_run_for_pool(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(_run_for_pool, jobs))
    return SweepResult(plan, runs)


# -- paired trajectories and stability bounds -----------------------------

@dataclass(eq=False)
class PairedTrajectory:
    seed_a: int
    seed_b: int
    optimizer: str
    delta: np.ndarray  # |theta_t - theta~_t|, t = 0..T
    rho: np.ndarray
    rho_tilde: np.ndarray
    step_norm: np.ndarray
    step_norm_tilde: np.ndarray
    lrs: np.ndarray
    H_est: float
    loss_gap_samples: np.ndarray

    @property
    def delta0(self) -> float:
        return float(self.delta[0])

    def step_bound_ok(self, rtol: float = 1e-9) -> bool:
        """Each step moves at most ``rho_t * lr * H_est`` in both runs."""
        lim = self.rho * self.lrs * self.H_est
        lim_t = self.rho_tilde * self.lrs * self.H_est
        return bool(np.all(self.step_norm <= lim * (1 + rtol) + 1e-300)
                    and np.all(self.step_norm_tilde <= lim_t * (1 + rtol) + 1e-300))

    def recurrence_ok(self, rtol: float = 1e-9) -> bool:
        """``delta_{t+1} <= delta_t + (rho_t + rho~_t) lr H_est`` at every step."""
        rhs = self.delta[:-1] + (self.rho + self.rho_tilde) * self.lrs * self.H_est
        return bool(np.all(self.delta[1:] <= rhs * (1 + rtol)))

    def sgd_recurrence_ok(self, rtol: float = 1e-9) -> bool:
        rhs = self.delta[:-1] + 2.0 * self.lrs * self.H_est
        return bool(np.all(self.delta[1:] <= rhs * (1 + rtol)))


def paired_divergence(plan: ExperimentPlan, seed_a: int, seed_b: int,
                      init_perturbation: float = 1e-2, same_order: bool = False) -> PairedTrajectory:
    """Run A from seed_a; run B from A's init plus U(-p, p) noise drawn from
    seed_b, with seed_b's batch order (seed_a's when ``same_order``).
    Both runs keep every iterate.
    """
    if seed_a == seed_b:
        raise ValueError("paired runs need distinct seeds")
    ds = dataset_for(plan.dataset)
    model = model_for(plan, ds)
    init_a = model.init_params(sub_seed(seed_a, INIT_STREAM))
    noise = np.random.default_rng(sub_seed(seed_b, PERTURB_STREAM)).uniform(
        -init_perturbation, init_perturbation, size=len(init_a))
    init_b = init_a.replace(init_a.values + noise)
    a = train(plan, seed_a, init=init_a, keep_params=True)
    order_b = sub_seed(seed_a if same_order else seed_b, ORDER_STREAM)
    b = train(plan, seed_b, init=init_b, order_seed=order_b, keep_params=True)
    n = min(len(a.params_history), len(b.params_history))
    delta = np.array([np.linalg.norm(a.params_history[i].values - b.params_history[i].values)
                      for i in range(n)])
    la = model.per_example_losses(a.params, ds.X_val, ds.y_val)
    lb = model.per_example_losses(b.params, ds.X_val, ds.y_val)
    H = float(max(a.max_grad_norm.max(), b.max_grad_norm.max()))
    return PairedTrajectory(
        seed_a=seed_a, seed_b=seed_b, optimizer=plan.optimizer, delta=delta,
        rho=a.rho[: n - 1], rho_tilde=b.rho[: n - 1],
        step_norm=a.step_norm[: n - 1], step_norm_tilde=b.step_norm[: n - 1],
        lrs=a.lrs[: n - 1], H_est=H, loss_gap_samples=np.abs(la - lb),
    )


@dataclass(frozen=True)
class StabilityBounds:
    eps: float
    eps_prime: float
    H: float
    delta0: float
    empirical: float
    empirical_sgd: float
    n_samples: int

    @property
    def ordered(self) -> bool:
        return self.eps <= self.eps_prime

    @property
    def empirical_within(self) -> bool:
        return self.empirical <= self.eps and self.empirical_sgd <= self.eps_prime

    def to_dict(self) -> dict:
        return asdict(self)


def stability_bounds(traj_dsgd: PairedTrajectory, traj_sgd: PairedTrajectory) -> StabilityBounds:
    """``eps = H d0 + H^2 sum (rho + rho~) lr`` and ``eps' = H d0 + 2 H^2 sum lr``,
    with H the larger of the two trajectories' estimates.
    """
    if traj_dsgd.delta0 != traj_sgd.delta0:
        raise MismatchError("trajectories start from different init pairs")
    if traj_dsgd.lrs.shape != traj_sgd.lrs.shape or not np.array_equal(traj_dsgd.lrs, traj_sgd.lrs):
        raise MismatchError("trajectories use different step-size schedules")
    H = max(traj_dsgd.H_est, traj_sgd.H_est)
    d0 = traj_dsgd.delta0
    eps = H * d0 + H * H * float(np.sum((traj_dsgd.rho + traj_dsgd.rho_tilde) * traj_dsgd.lrs))
    eps_p = H * d0 + 2.0 * H * H * float(np.sum(traj_sgd.lrs))
    return StabilityBounds(
        eps=eps, eps_prime=eps_p, H=H, delta0=d0,
        empirical=float(traj_dsgd.loss_gap_samples.mean()),
        empirical_sgd=float(traj_sgd.loss_gap_samples.mean()),
        n_samples=int(traj_dsgd.loss_gap_samples.size),
    )


# -- ensembles -------------------------------------------------------------

def ensemble_predict(model: Classifier, members: Sequence[ParamVector], X: np.ndarray) -> np.ndarray:
    """Majority vote; ties go to the lowest class index."""
    if not members:
        raise EmptyBatchError("ensemble needs at least one member")
    votes = np.stack([model.predict(p, X) for p in members])  # (N, n)
    counts = np.zeros((X.shape[0], model.num_classes), dtype=np.int64)
    for row in votes:
        counts[np.arange(X.shape[0]), row] += 1
    return counts.argmax(axis=1)


def ensemble_eval(model: Classifier, members: Sequence[ParamVector], X: np.ndarray,
                  y: np.ndarray) -> float:
    return float((ensemble_predict(model, members, X) == y).mean())


# -- theory monitor over full runs ------------------------------------------

def monitored_run(plan: ExperimentPlan, seed: int, lr_fraction: float = 0.5,
                  power_iters: int = 4) -> tuple[RunResult, TheoremMonitorReport]:
    """Train ``plan`` (DSGD) while checking the two-step descent window at every step."""
    if plan.optimizer != "dsgd":
        raise ValueError("the descent monitor applies to dsgd plans")
    ds = dataset_for(plan.dataset)
    model = model_for(plan, ds)
    tau = plan.schedule.cap
    report = TheoremMonitorReport()

    def hook(t, params, Xb, yb, g, g_next):
        report.windows.append(check_window(
            model, params, Xb, yb, g, g_next, tau, plan.step.lr, t=t,
            lr_fraction=lr_fraction, power_iters=power_iters, seed=t))

    return train(plan, seed, hook=hook), report


def plan_with(plan: ExperimentPlan, **changes) -> ExperimentPlan:
    return replace(plan, **changes)

