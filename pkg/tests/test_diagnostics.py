import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradscale.data import DatasetSpec, generate
from gradscale.diagnostics import (
    TRACE_COLUMNS,
    OutcomeThresholds,
    check_window,
    classify_outcome,
    estimate_smoothness,
    lemma_check_zero_error,
    read_trace,
    record_iteration,
    theorem2_monitor,
    write_trace,
)
from gradscale.model import Classifier
from gradscale.optim import BatchPartition
from gradscale.verify import cancelling_partition, correct_only_stationary_point


def part_of(GW, GC, nW=1, nC=1):
    return BatchPartition(np.arange(nW), np.arange(nW, nW + nC), np.asarray(GW, float), np.asarray(GC, float))


def test_record_examples():
    r = record_iteration(part_of([1, 0], [-1, 0]), (1.0, 0.6, 0.4), 0.5, 3)
    assert r.cos_WC == -1.0 and r.norm_G == 0.0 and r.frac_correct == 0.5
    assert record_iteration(part_of([1, 0], [0, 1]), (0, 0, 0), 0.5, 0).cos_WC == 0.0
    empty_c = BatchPartition(np.arange(2), np.array([], dtype=int), np.array([1.0, 1.0]), np.zeros(2))
    r = record_iteration(empty_c, (1, 1, 0), 0.0, 0)
    assert r.cos_WC is None and r.norm_GC == 0.0


def test_cancellation_witness_record():
    r = record_iteration(cancelling_partition([0.3, -0.4, 2.0], 3, 5), (1.0, 0.5, 0.5), 1.0, 0)
    assert r.norm_G < 1e-12 and r.norm_GW > 0 and r.cos_WC == -1.0


def test_trace_roundtrip(tmp_path):
    recs = [record_iteration(part_of([1, 2], [0.5, -3]), (0.1 + 0.2, 0.1, 0.2), 1 / 3, 0),
            record_iteration(part_of([1, 0], [0, 0]), (1.0, 1.0, 0.0), 0.0, 1)]
    text = write_trace(recs, tmp_path / "t.csv")
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert text.splitlines()[2].split(",")[4] == ""
    back = read_trace(tmp_path / "t.csv")
    assert back == recs
    assert write_trace(back) == text


def test_outcome_examples():
    assert classify_outcome([3] * 10, 0.1).label == "collapsed"
    out = classify_outcome([0, 1, 1, 0], 0.51, OutcomeThresholds(prior=0.5))
    assert out.label == "degenerate"
    out = classify_outcome([0, 1, 1, 0], 0.95, OutcomeThresholds(prior=0.5))
    assert out.label == "success" and out.prediction_entropy == pytest.approx(np.log(2))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=50), st.floats(0, 1))
@settings(max_examples=200, deadline=None)
def test_outcome_properties(preds, acc):
    out = classify_outcome(preds, acc)
    assert out == classify_outcome(list(preds), acc)
    assert (out.label == "collapsed") == (out.majority_pred_frac == 1.0)
    assert out.prediction_entropy >= 0


def test_lemma_check_examples():
    ds = generate(DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=30, seed=1))
    model = Classifier("linear", ds.feature_dim, 2)
    # a sufficiently aligned separator classifies everything correctly
    means = np.stack([ds.X_train[ds.y_train == k].mean(axis=0) for k in range(2)])
    u = means[1] - means[0]
    mid = means.mean(axis=0) @ u
    w = np.concatenate([(-50 * u), (50 * u), [50 * mid, -50 * mid]])
    assert lemma_check_zero_error(model, ds, model.init_params(0).replace(w), 1e-6) == (True, 0.0)

    model, ds, params = correct_only_stationary_point()
    stationary, err = lemma_check_zero_error(model, ds, params, 1e-6)
    assert not stationary and err > 0


def test_lemma_check_rejects_bad_tol():
    model, ds, params = correct_only_stationary_point()
    with pytest.raises(ValueError):
        lemma_check_zero_error(model, ds, params, 0.0)


def test_smoothness_quadratic():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    A = Q @ np.diag([7.0, 3.0, 1.0, 0.5, 0.1, 0.0]) @ Q.T
    est = estimate_smoothness(lambda th: A @ th, rng.normal(size=6), probes=8, power_iters=20)
    assert abs(est - 7.0) / 7.0 < 0.05
    assert est <= 7.0 * (1 + 1e-9)


def test_smoothness_step_convergence_and_flat():
    f = lambda th: np.array([np.sin(th[0]) * 3, th[1] ** 3])
    theta = np.array([0.3, 0.7])
    a = estimate_smoothness(f, theta, step=1e-3, power_iters=5)
    b = estimate_smoothness(f, theta, step=1e-5, power_iters=5)
    assert abs(a - b) / b < 0.1
    assert estimate_smoothness(lambda th: np.zeros_like(th), theta) == 0.0
    with pytest.raises(ValueError):
        estimate_smoothness(f, theta, probes=0)


def _window_inputs(seed=0):
    ds = generate(DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=20, seed=seed, separation=1.0))
    model = Classifier("linear", ds.feature_dim, 2)
    params = model.init_params(seed)
    return model, params, ds.X_train[:16], ds.y_train[:16]


def test_window_gating_static_gamma():
    model, params, X, y = _window_inputs()
    w = check_window(model, params, X, y, 0.05, 0.05, 0.1, 0.005)
    assert not w.cond_gamma and not w.gated and not w.violated


def test_window_gating_norm_condition():
    model, params, X, y = _window_inputs()
    # tau = 1 with many more correct than wrong examples fails the norm condition
    g = model.per_example_grads(params, X, y)
    GW = g.grads[~g.correct].sum(axis=0)
    GC = g.grads[g.correct].sum(axis=0)
    w = check_window(model, params, X, y, 0.5, 0.6, 1.0, 0.005)
    assert w.cond_norm == bool(GW @ GW >= GC @ GC) or not w.both_nonempty


def test_window_descends_when_gated():
    for seed in range(10):
        model, params, X, y = _window_inputs(seed)
        w = check_window(model, params, X, y, 0.02, 0.03, 0.1, 0.005, seed=seed)
        if w.gated:
            assert w.lw_end < w.lw_start + 1e-9
            assert w.M_est > 0


def test_theorem_monitor_counts():
    model, params, X, y = _window_inputs(3)
    rep = theorem2_monitor(model, [params, params], [(X, y), (X, y)], [0.01, 0.02, 0.03], 0.1, 0.005)
    assert len(rep.windows) == 2 and rep.violations == []
    assert rep.summary()["windows"] == 2
    with pytest.raises(ValueError):
        theorem2_monitor(model, [params], [(X, y)], [0.1], 0.1, 0.005)
