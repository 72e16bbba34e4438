import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradscale.data import (
    BatchSampler,
    DatasetSpec,
    ImbalanceSpec,
    class_counts,
    generate,
    load_dataset,
    sample_epoch,
    save_dataset,
)
from gradscale.errors import CountError, ShapeError
from gradscale.model import Classifier


def test_step_counts_ratio_100():
    counts = class_counts(10, 5000, ImbalanceSpec("step", 100))
    assert counts == [5000] * 5 + [50] * 5
    assert sum(counts) == 25250


def test_step_counts_ratio_50():
    # the floor rule at 50:1 keeps five classes of 100
    assert sum(class_counts(10, 5000, ImbalanceSpec("step", 50))) == 25500


def test_published_fifty_to_one_totals_match_two_to_one():
    # The published 50:1 totals coincide exactly with a 2:1 ratio under the same
    # rule. The package keeps the literal ratio; this pins the coincidence.
    assert sum(class_counts(10, 5000, ImbalanceSpec("long-tailed", 2))) == 36223
    assert sum(class_counts(100, 500, ImbalanceSpec("long-tailed", 2))) == 36029
    assert sum(class_counts(10, 5000, ImbalanceSpec("step", 2))) == 37500
    assert sum(class_counts(100, 500, ImbalanceSpec("step", 2))) == 37500


def test_long_tailed_ratio_100_totals():
    # the decaying profile, floored, matches the published totals for both class counts
    assert sum(class_counts(10, 5000, ImbalanceSpec("long-tailed", 100))) == 12406
    assert sum(class_counts(100, 500, ImbalanceSpec("long-tailed", 100))) == 10847


def test_long_tailed_endpoints():
    counts = class_counts(10, 5000, ImbalanceSpec("long-tailed", 100))
    assert counts[0] == 5000 and counts[-1] == 50
    assert counts == sorted(counts, reverse=True)


def test_odd_class_count_gives_majority_extra_class():
    assert class_counts(5, 100, ImbalanceSpec("step", 10)) == [100, 100, 100, 10, 10]


def test_zero_count_rejected():
    with pytest.raises(CountError):
        class_counts(4, 10, ImbalanceSpec("step", 100))


def test_imbalance_spec_validation():
    with pytest.raises(ValueError):
        ImbalanceSpec("step", 1.0)
    with pytest.raises(ValueError):
        ImbalanceSpec("zipf", 10)


@given(st.integers(2, 30), st.integers(1, 5000), st.sampled_from(["step", "long-tailed"]),
       st.floats(1.01, 200))
@settings(max_examples=200, deadline=None)
def test_counts_bounded_by_formula(K, n, pattern, rho):
    spec = ImbalanceSpec(pattern, rho)
    try:
        counts = class_counts(K, n, spec)
    except CountError:
        return
    assert len(counts) == K and min(counts) >= 1 and counts[0] == n
    if pattern == "long-tailed":
        for i, c in enumerate(counts):
            assert c <= n * rho ** (-i / (K - 1)) + 1e-6
            assert c > n * rho ** (-i / (K - 1)) - 1
    else:
        assert counts.count(n) >= math.ceil(K / 2)


def test_generate_deterministic():
    spec = DatasetSpec(kind="gaussian-overlap", num_classes=3, base_count=50, feature_dim=4, seed=9,
                       imbalance=ImbalanceSpec("long-tailed", 10))
    assert generate(spec).equals(generate(spec))
    other = generate(DatasetSpec(kind="gaussian-overlap", num_classes=3, base_count=50, feature_dim=4,
                                 seed=10, imbalance=ImbalanceSpec("long-tailed", 10)))
    assert not generate(spec).equals(other)


def test_generate_counts_follow_class_counts():
    imb = ImbalanceSpec("long-tailed", 20)
    ds = generate(DatasetSpec(kind="gaussian-overlap", num_classes=4, base_count=200, seed=1, imbalance=imb,
                              val_per_class=30))
    assert ds.train_counts() == class_counts(4, 200, imb)
    assert ds.val_counts() == [30] * 4


def test_imbalanced_subsample_exact_ratio():
    ds = generate(DatasetSpec(kind="imbalanced-subsample", num_classes=10, base_count=500, seed=3,
                              imbalance=ImbalanceSpec("step", 100), val_per_class=10))
    counts = ds.train_counts()
    assert max(counts) / min(counts) == 100


def test_separable_has_margin():
    spec = DatasetSpec(kind="gaussian-separable", num_classes=3, base_count=300, feature_dim=5, seed=2)
    ds = generate(spec)
    # recover the mean direction from the class means and check the projected slabs are disjoint
    means = np.stack([ds.X_train[ds.y_train == k].mean(axis=0) for k in range(3)])
    u = means[2] - means[0]
    u /= np.linalg.norm(u)
    proj = [ds.X_train[ds.y_train == k] @ u for k in range(3)]
    for k in range(2):
        assert proj[k].max() + 0.5 - 1e-9 <= proj[k + 1].min() + 1e-6


def test_separable_linear_model_reaches_zero_training_error():
    from gradscale.harness import ExperimentPlan, train
    from gradscale.optim import StepConfig

    spec = DatasetSpec(kind="gaussian-separable", num_classes=2, base_count=100, seed=4)
    plan = ExperimentPlan(dataset=spec, optimizer="sgd", step=StepConfig(1.0, 200), epochs=300)
    r = train(plan, 42)
    ds = generate(spec)
    model = Classifier("linear", ds.feature_dim, 2)
    assert np.all(model.predict(r.params, ds.X_train) == ds.y_train)


def test_sample_epoch_full_batch_is_permutation():
    s = BatchSampler(batch_size=10, order_seed=1)
    batches = sample_epoch(s, 10, 0)
    assert len(batches) == 1 and sorted(batches[0].tolist()) == list(range(10))


def test_sample_epoch_seed_and_epoch_change_order():
    a = np.concatenate(sample_epoch(BatchSampler(7, 1), 100, 0))
    b = np.concatenate(sample_epoch(BatchSampler(7, 2), 100, 0))
    c = np.concatenate(sample_epoch(BatchSampler(7, 1), 100, 1))
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert sorted(a) == sorted(b) == sorted(c) == list(range(100))


@given(st.integers(1, 300), st.integers(1, 64), st.integers(0, 2**32), st.integers(0, 50))
@settings(max_examples=100, deadline=None)
def test_epoch_partitions_training_set(n, m, seed, epoch):
    s = BatchSampler(m, seed)
    batches = sample_epoch(s, n, epoch)
    assert len(batches) == s.steps_per_epoch(n)
    assert all(len(b) == m for b in batches[:-1]) and 1 <= len(batches[-1]) <= m
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(n))
    assert np.array_equal(np.concatenate(batches), np.concatenate(sample_epoch(s, n, epoch)))


def test_save_load_roundtrip(tmp_path):
    ds = generate(DatasetSpec(kind="gaussian-overlap", num_classes=3, base_count=20, feature_dim=3, seed=5,
                              val_per_class=4))
    path = tmp_path / "ds.txt"
    save_dataset(ds, path)
    assert load_dataset(path).equals(ds)
    lines = path.read_text().splitlines()
    lines[-1] = "val 1.0 2.0"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ShapeError):
        load_dataset(path)
