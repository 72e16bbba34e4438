"""Property suites for the theory claims, shared by ``verify-theory`` and the tests.

Each suite returns a small result object with an ``ok`` flag and a
``summary()`` dict so the CLI can print JSON and set its exit code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DatasetSpec
from .diagnostics import TheoremMonitorReport, lemma_check_zero_error
from .harness import (
    ExperimentPlan,
    PairedTrajectory,
    StabilityBounds,
    dataset_for,
    monitored_run,
    paired_divergence,
    plan_with,
    stability_bounds,
    sub_seed,
    INIT_STREAM,
)
from .model import Classifier, ParamVector
from .optim import BatchPartition, ScalerSchedule, StepConfig, dsgd_step, partition, sgd_step


# -- two-step descent ------------------------------------------------------------

@dataclass
class DescentSuite:
    report: TheoremMonitorReport
    min_gated: int

    @property
    def ok(self) -> bool:
        return not self.report.violations and self.report.gated_count >= self.min_gated

    def summary(self) -> dict:
        return {**self.report.summary(), "min_gated": self.min_gated, "ok": self.ok}


def descent_suite(plan: ExperimentPlan, min_gated: int = 10_000, lr_fraction: float = 0.5) -> DescentSuite:
    total = TheoremMonitorReport()
    for seed in plan.seeds:
        _, rep = monitored_run(plan, seed, lr_fraction=lr_fraction)
        total = total.merge(rep)
    return DescentSuite(total, min_gated)


# -- zero-training-error asymmetry -----------------------------------------------

def train_wrong_only(model: Classifier, ds: Dataset, params: ParamVector, lr: float,
                     grad_tol: float = 1e-6, max_steps: int = 200_000) -> tuple[ParamVector, int]:
    """Full-batch steps on the misclassified examples only (scaler 0) until
    the wrong set is empty or its summed gradient falls below ``grad_tol``.
    """
    cfg = StepConfig(lr, ds.n_train)
    for step in range(max_steps):
        part = partition(model.per_example_grads(params, ds.X_train, ds.y_train))
        if part.wrong_idx.size == 0 or np.linalg.norm(part.G_W) < grad_tol:
            return params, step
        params = dsgd_step(params, part, cfg, 0.0)
    return params, max_steps


def correct_only_stationary_point(spec: DatasetSpec | None = None) -> tuple[Classifier, Dataset, ParamVector]:
    """A linear model that predicts class 0 everywhere with saturated logits.

    Every class-0 example is correct with an exactly zero gradient, so the
    correct-set loss is stationary, while all other examples stay wrong.
    """
    spec = spec or DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=50, seed=5)
    ds = dataset_for(spec)
    model = Classifier("linear", ds.feature_dim, ds.num_classes)
    w = np.zeros(model.layout.size)
    b = model.layout.slices()["b"]
    w[b] = [800.0, -800.0] + [-800.0] * (ds.num_classes - 2)
    return model, ds, model.init_params(0).replace(w)


@dataclass
class AsymmetryResult:
    train_errors: list[float]
    steps: list[int]
    stationary_flags: list[bool]
    constructed_error: float
    constructed_lw_stationary: bool
    constructed_lc_grad_norm: float

    @property
    def ok(self) -> bool:
        return (all(e == 0.0 for e in self.train_errors) and all(self.stationary_flags)
                and self.constructed_error > 0 and not self.constructed_lw_stationary
                and self.constructed_lc_grad_norm < 1e-6)

    def summary(self) -> dict:
        return {
            "seeds": len(self.train_errors),
            "zero_error_seeds": sum(e == 0.0 for e in self.train_errors),
            "max_steps": max(self.steps),
            "constructed_train_error": self.constructed_error,
            "constructed_wrong_set_stationary": self.constructed_lw_stationary,
            "ok": self.ok,
        }


def zero_error_asymmetry(seeds=tuple(range(10)), lr: float = 1.0, grad_tol: float = 1e-6) -> AsymmetryResult:
    errors, steps, flags = [], [], []
    for s in seeds:
        spec = DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=100, feature_dim=2,
                           seed=1000 + s, separation=2.0, val_per_class=10)
        ds = dataset_for(spec)
        model = Classifier("linear", ds.feature_dim, ds.num_classes)
        params, n = train_wrong_only(model, ds, model.init_params(sub_seed(s, INIT_STREAM)), lr, grad_tol)
        stationary, err = lemma_check_zero_error(model, ds, params, grad_tol)
        errors.append(err)
        steps.append(n)
        flags.append(stationary)
    model, ds, params = correct_only_stationary_point()
    g = model.per_example_grads(params, ds.X_train, ds.y_train)
    lc_norm = float(np.linalg.norm(g.grads[g.correct].sum(axis=0)))
    stationary, err = lemma_check_zero_error(model, ds, params, grad_tol)
    return AsymmetryResult(errors, steps, flags, err, stationary, lc_norm)


# -- recurrence and bound ordering ------------------------------------------------

@dataclass
class RecurrenceResult:
    pairs: list[tuple[PairedTrajectory, PairedTrajectory]]
    bounds: list[StabilityBounds]
    strict_expected: list[bool]

    @property
    def step_bound(self) -> bool:
        return all(d.step_bound_ok() and s.step_bound_ok() for d, s in self.pairs)

    @property
    def recurrences(self) -> bool:
        return all(d.recurrence_ok() and s.recurrence_ok() and s.sgd_recurrence_ok() for d, s in self.pairs)

    @property
    def ordering(self) -> bool:
        for b, strict in zip(self.bounds, self.strict_expected):
            if not b.ordered or (strict and not b.eps < b.eps_prime):
                return False
        return True

    @property
    def empirical(self) -> bool:
        return all(b.empirical_within for b in self.bounds)

    @property
    def ok(self) -> bool:
        return self.step_bound and self.recurrences and self.ordering and self.empirical

    def summary(self) -> dict:
        return {
            "pairs": len(self.pairs),
            "step_bound": self.step_bound,
            "divergence_recurrences": self.recurrences,
            "bound_ordering": self.ordering,
            "empirical_within_bound": self.empirical,
            "eps": [b.eps for b in self.bounds],
            "eps_prime": [b.eps_prime for b in self.bounds],
            "ok": self.ok,
        }


RECURRENCE_PLAN = ExperimentPlan(
    dataset=DatasetSpec(kind="gaussian-overlap", num_classes=3, base_count=60, feature_dim=3, seed=21,
                        separation=2.0, val_per_class=100),
    model_kind="mlp", hidden=8, optimizer="dsgd", schedule=ScalerSchedule("linear-asc", 0.5),
    step=StepConfig(lr=0.2, batch_size=16), epochs=4, name="recurrence",
)


def recurrence_suite(plan: ExperimentPlan = RECURRENCE_PLAN, n_pairs: int = 10,
                     init_perturbation: float = 1e-2) -> RecurrenceResult:
    sgd_plan = plan_with(plan, optimizer="sgd", schedule=None)
    pairs, bounds, strict = [], [], []
    for i in range(n_pairs):
        a, b = 42 + 10 * i, 1042 + 10 * i
        d = paired_divergence(plan, a, b, init_perturbation)
        s = paired_divergence(sgd_plan, a, b, init_perturbation)
        pairs.append((d, s))
        bounds.append(stability_bounds(d, s))
        strict.append(bool(np.any(d.rho < 1.0) or np.any(d.rho_tilde < 1.0)))
    return RecurrenceResult(pairs, bounds, strict)


# -- cancellation witness ---------------------------------------------------------

@dataclass
class CancellationResult:
    sgd_norm: float
    dsgd_norms: dict[float, float]
    expected: dict[float, float]

    @property
    def ok(self) -> bool:
        return self.sgd_norm < 1e-12 and all(
            abs(self.dsgd_norms[g] - self.expected[g]) <= 1e-12 for g in self.expected)

    def summary(self) -> dict:
        return {"sgd_update_norm": self.sgd_norm,
                "dsgd_update_norms": {str(g): v for g, v in self.dsgd_norms.items()}, "ok": self.ok}


def cancellation_witness(gammas=(0.25, 0.5, 0.9), lr: float = 0.5) -> CancellationResult:
    """A batch whose wrong and correct gradients cancel exactly.

    Two mirrored examples under a linear model whose logits are all zero:
    the one labelled 0 counts as correct (argmax tie goes to class 0), the
    one labelled 1 as wrong, and their gradients are exact negatives.
    """
    model = Classifier("linear", 2, 2)
    params = model.init_params(0).replace(np.zeros(model.layout.size))
    x = np.array([[1.5, -0.5], [1.5, -0.5]])
    y = np.array([0, 1])
    part = partition(model.per_example_grads(params, x, y))
    cfg = StepConfig(lr, 2)
    m = part.size
    sgd_norm = float(np.linalg.norm(sgd_step(params, part.total, cfg, m=m).values - params.values))
    norms, expected = {}, {}
    for g in gammas:
        norms[g] = float(np.linalg.norm(dsgd_step(params, part, cfg, g).values - params.values))
        expected[g] = (1 - g) * lr * float(np.linalg.norm(part.G_W)) / m
    return CancellationResult(sgd_norm, norms, expected)


def cancelling_partition(G_W: np.ndarray, n_wrong: int = 1, n_correct: int = 1) -> BatchPartition:
    G_W = np.asarray(G_W, dtype=np.float64)
    return BatchPartition(np.arange(n_wrong), np.arange(n_wrong, n_wrong + n_correct), G_W, -G_W)


@dataclass
class TheoryReport:
    results: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results.values())

    def summary(self) -> dict:
        return {"ok": self.ok, **{k: v.summary() for k, v in self.results.items()}}


def verify_all(descent_plan: ExperimentPlan, min_gated: int = 10_000, n_pairs: int = 10) -> TheoryReport:
    rep = TheoryReport()
    rep.results["cancellation"] = cancellation_witness()
    rep.results["zero_error_asymmetry"] = zero_error_asymmetry()
    rep.results["recurrences"] = recurrence_suite(n_pairs=n_pairs)
    rep.results["two_step_descent"] = descent_suite(descent_plan, min_gated)
    return rep
