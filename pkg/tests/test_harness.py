from dataclasses import replace

import numpy as np
import pytest

from gradscale.config import COLLAPSE_PLAN, COLLAPSE_SCHEDULE
from gradscale.data import DatasetSpec, ImbalanceSpec
from gradscale.errors import EmptyBatchError, MismatchError
from gradscale.harness import (
    ExperimentPlan,
    RunResult,
    SweepResult,
    dataset_for,
    ensemble_eval,
    ensemble_predict,
    model_for,
    paired_divergence,
    plan_with,
    seed_sweep,
    stability_bounds,
    train,
)
from gradscale.model import Classifier
from gradscale.optim import ScalerSchedule, StepConfig

SEP = DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=60, seed=2, val_per_class=100)
OVERLAP = DatasetSpec(kind="gaussian-overlap", num_classes=3, base_count=40, feature_dim=3, seed=5,
                      separation=1.5, val_per_class=50, imbalance=ImbalanceSpec("step", 4))


def test_run_deterministic():
    plan = ExperimentPlan(dataset=OVERLAP, model_kind="mlp", optimizer="dsgd",
                          schedule=ScalerSchedule("cosine", 0.5), step=StepConfig(0.3, 8), epochs=3)
    a, b = train(plan, 42), train(plan, 42)
    assert np.array_equal(a.params.values, b.params.values)
    assert a.trace == b.trace
    assert a.outcome == b.outcome


def test_trace_length_matches_steps():
    plan = ExperimentPlan(dataset=OVERLAP, optimizer="sgd", step=StepConfig(0.3, 8), epochs=3)
    r = train(plan, 1)
    n = dataset_for(OVERLAP).n_train
    assert r.iters == len(r.trace) == 3 * -(-n // 8)


@pytest.mark.parametrize("model_kind", ["linear", "mlp"])
def test_static_one_matches_sgd(model_kind):
    base = ExperimentPlan(dataset=OVERLAP, model_kind=model_kind, step=StepConfig(0.5, 7), epochs=2)
    d = train(plan_with(base, optimizer="dsgd", schedule=ScalerSchedule("static", 1.0, static_value=1.0)), 52)
    s = train(plan_with(base, optimizer="sgd"), 52)
    assert np.array_equal(d.params.values, s.params.values)


def test_separable_sgd_succeeds():
    r = train(ExperimentPlan(dataset=SEP, optimizer="sgd", step=StepConfig(0.5, 16), epochs=10), 42)
    assert r.outcome.label == "success" and r.val_acc > 0.95


@pytest.mark.parametrize("opt", ["pcgrad", "focal", "noisytune+sgd", "swa"])
def test_baselines_run(opt):
    r = train(ExperimentPlan(dataset=SEP, optimizer=opt, step=StepConfig(0.5, 16), epochs=4), 42)
    assert r.params.is_finite() and r.val_acc > 0.9


def test_divergence_stops_run():
    plan = ExperimentPlan(dataset=SEP, model_kind="mlp", optimizer="sgd", step=StepConfig(1e308, 4), epochs=2)
    with np.errstate(all="ignore"):
        r = train(plan, 42)
    assert r.diverged and r.iters < len(r.trace) + 1


def _fake_sweep(accs):
    plan = ExperimentPlan(seeds=tuple(range(len(accs))))
    runs = []
    for i, a in enumerate(accs):
        from gradscale.diagnostics import RunOutcome
        runs.append(RunResult(i, None, [], RunOutcome("success", a, 0.5, 0.5), 0, 0.0, False,
                              np.zeros(1), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)))
    return SweepResult(plan, runs)


def test_sweep_statistics():
    s = _fake_sweep([0.7, 0.7, 0.7])
    assert s.mean_acc == pytest.approx(0.7) and s.std_acc == 0.0
    s = _fake_sweep([0.8, 1.0])
    assert s.mean_acc == pytest.approx(0.9) and s.std_acc == pytest.approx(0.1)


def test_sweep_needs_two_seeds():
    with pytest.raises(ValueError):
        seed_sweep(ExperimentPlan(dataset=SEP, seeds=(1,)))


def test_sweep_reproducible_and_parallel_equal():
    plan = ExperimentPlan(dataset=OVERLAP, optimizer="dsgd", step=StepConfig(0.3, 16), epochs=2, seeds=(1, 2, 3))
    a, b = seed_sweep(plan), seed_sweep(plan, workers=2)
    assert np.array_equal(a.accuracies, b.accuracies)
    for ra, rb in zip(a.runs, b.runs):
        assert np.array_equal(ra.params.values, rb.params.values)


def test_collapse_fixture_direction():
    sgd = seed_sweep(COLLAPSE_PLAN)
    dsgd = seed_sweep(replace(COLLAPSE_PLAN, optimizer="dsgd", schedule=COLLAPSE_SCHEDULE))
    assert sgd.outcome_counts["collapsed"] >= 1
    assert dsgd.outcome_counts["collapsed"] < sgd.outcome_counts["collapsed"]
    assert sgd.failures >= 4


def test_paired_zero_perturbation_same_order():
    plan = ExperimentPlan(dataset=OVERLAP, optimizer="dsgd", step=StepConfig(0.3, 8), epochs=2)
    t = paired_divergence(plan, 42, 52, init_perturbation=0.0, same_order=True)
    assert np.all(t.delta == 0.0)


def test_paired_recurrences_hold():
    plan = ExperimentPlan(dataset=OVERLAP, model_kind="mlp", optimizer="dsgd",
                          schedule=ScalerSchedule("linear-asc", 0.5), step=StepConfig(0.4, 8), epochs=3)
    d = paired_divergence(plan, 42, 52)
    s = paired_divergence(plan_with(plan, optimizer="sgd", schedule=None), 42, 52)
    assert d.step_bound_ok() and d.recurrence_ok() and s.sgd_recurrence_ok()
    assert np.all((d.rho > 0) & (d.rho <= 1))
    b = stability_bounds(d, s)
    assert b.eps < b.eps_prime and b.empirical <= b.eps and b.empirical_within


def test_bounds_equal_when_all_wrong():
    plan = ExperimentPlan(dataset=OVERLAP, optimizer="sgd", step=StepConfig(0.3, 8), epochs=1)
    s = paired_divergence(plan, 42, 52)
    d = replace(s, optimizer="dsgd")
    b = stability_bounds(d, s)
    assert b.eps == b.eps_prime


def test_bounds_mismatch_errors():
    plan = ExperimentPlan(dataset=OVERLAP, optimizer="sgd", step=StepConfig(0.3, 8), epochs=1)
    s = paired_divergence(plan, 42, 52)
    with pytest.raises(MismatchError):
        stability_bounds(paired_divergence(plan, 62, 52), s)
    with pytest.raises(MismatchError):
        stability_bounds(paired_divergence(plan_with(plan, epochs=2), 42, 52), s)
    with pytest.raises(ValueError):
        paired_divergence(plan, 42, 42)


def test_ensemble_examples():
    model = Classifier("linear", 1, 2)
    X = np.array([[-1.0], [1.0], [2.0]])
    y = np.array([0, 1, 1])
    right = model.init_params(0).replace(np.array([-5.0, 5.0, 0.0, 0.0]))
    wrong = model.init_params(0).replace(np.array([5.0, -5.0, 0.0, 0.0]))
    assert ensemble_eval(model, [right] * 3, X, y) == 1.0
    assert ensemble_eval(model, [right, right, wrong], X, y) == 1.0
    allzero = model.init_params(0).replace(np.array([0.0, 0.0, 5.0, 0.0]))
    assert ensemble_predict(model, [allzero] * 3, X).tolist() == [0, 0, 0]
    assert ensemble_predict(model, [right, wrong], X).tolist() == [0, 0, 0]  # ties -> class 0
    with pytest.raises(EmptyBatchError):
        ensemble_predict(model, [], X)


def test_plan_hash_ignores_seeds_and_name():
    a = ExperimentPlan(dataset=SEP, seeds=(1, 2), name="x")
    assert a.plan_hash() == replace(a, seeds=(3, 4), name="y").plan_hash()
    assert a.plan_hash() != replace(a, epochs=7).plan_hash()
    with pytest.raises(ValueError):
        ExperimentPlan(seeds=(1, 1))
    assert model_for(a, dataset_for(SEP)).num_classes == 2


def test_paired_recurrences_hold_single_example_batches():
    plan = ExperimentPlan(dataset=OVERLAP, model_kind="mlp", optimizer="dsgd",
                          schedule=ScalerSchedule("linear-asc", 0.5), step=StepConfig(0.05, 1), epochs=1)
    d = paired_divergence(plan, 42, 52)
    s = paired_divergence(plan_with(plan, optimizer="sgd", schedule=None), 42, 52)
    assert d.step_bound_ok() and d.recurrence_ok() and s.sgd_recurrence_ok()
    assert stability_bounds(d, s).ordered
