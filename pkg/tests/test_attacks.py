import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from poisonbench.attacks import (
    PoisonReport,
    PoisonSpec,
    apply_poison,
    apply_poisons,
    flip_labels_random,
    flip_labels_targeted,
    inject_noise,
    replace_instances,
)
from poisonbench.data_ingest import ImageDataset
from poisonbench.errors import PoisonBenchWarning, ValidationError


def labelled(n, k, seed=0, dim=3):
    rng = np.random.default_rng(seed)
    return make_dataset(rng.normal(size=(n, dim)), np.arange(n) % k, tuple(f"c{i}" for i in range(k)))


def images(n_per_class, k=2, seed=0):
    rng = np.random.default_rng(seed)
    n = n_per_class * k
    return ImageDataset(
        features=rng.uniform(0, 1, (n, 32, 32, 3)),
        labels=np.arange(n) % k,
        indices=np.arange(100, 100 + n),
        class_names=tuple(f"c{i}" for i in range(k)),
    )


# --- random flips ------------------------------------------------------------


def test_random_flip_count_at_scale():
    ds = make_dataset(np.zeros((50_000, 1)), np.arange(50_000) % 10, tuple("abcdefghij"))
    out, rep = flip_labels_random(ds, 0.05, seed=0)
    assert len(rep.entries) == 2500
    assert rep.achieved_rate == 0.05
    assert (out.labels != ds.labels).sum() == 2500


def test_random_flip_zero_rate_is_identity():
    ds = labelled(20, 3)
    out, rep = flip_labels_random(ds, 0.0, seed=1)
    assert rep.entries == ()
    assert np.array_equal(out.labels, ds.labels) and np.array_equal(out.features, ds.features)


def test_random_flip_binary_full_rate_complements():
    ds = labelled(10, 2)
    out, rep = flip_labels_random(ds, 1.0, seed=2)
    assert np.array_equal(out.labels, 1 - ds.labels)
    assert len(rep.entries) == 10


def test_random_flip_single_class_errors():
    ds = make_dataset(np.zeros((4, 1)), [0, 0, 0, 0], ("only",))
    with pytest.raises(ValidationError):
        flip_labels_random(ds, 0.5, seed=0)
    flip_labels_random(ds, 0.0, seed=0)


@pytest.mark.parametrize("rate", [-0.01, 1.01])
def test_rate_bounds(rate):
    with pytest.raises(ValidationError):
        flip_labels_random(labelled(10, 2), rate, 0)


@given(st.integers(2, 6), st.integers(2, 80), st.floats(0, 1), st.integers(0, 2**31))
def test_random_flip_properties(k, n, rate, seed):
    ds = labelled(n, k, seed % 7)
    out, rep = flip_labels_random(ds, rate, seed)
    assert len(rep.entries) == int(np.floor(rate * n + 1e-9))
    assert len(set(rep.indices)) == len(rep.entries)
    for e in rep.entries:
        assert e.original_label != e.new_label
        assert e.kind == "label_flip"
    changed = set(ds.indices[out.labels != ds.labels].tolist())
    assert changed == set(rep.indices)
    assert np.array_equal(out.features, ds.features)
    assert np.array_equal(out.indices, ds.indices) and out.class_names == ds.class_names


def test_random_flip_destinations_uniform():
    ds = make_dataset(np.zeros((30_000, 1)), np.zeros(30_000, dtype=int), ("a", "b", "c", "d"))
    _, rep = flip_labels_random(ds, 1.0, seed=3)
    counts = np.bincount([e.new_label for e in rep.entries], minlength=4)
    assert counts[0] == 0
    assert np.all(np.abs(counts[1:] - 10_000) < 400)


def test_random_flip_seed_behaviour():
    ds = labelled(200, 3)
    a = flip_labels_random(ds, 0.1, 5)[1]
    assert a == flip_labels_random(ds, 0.1, 5)[1]
    assert a.indices != flip_labels_random(ds, 0.1, 6)[1].indices


# --- targeted flips ----------------------------------------------------------


def test_targeted_flip_fraud_example():
    labels = np.r_[np.ones(1000, dtype=int), np.zeros(9000, dtype=int)]
    ds = make_dataset(np.zeros((10_000, 1)), labels, ("non_fraud", "fraud"))
    out, rep = flip_labels_targeted(ds, 1, 0, 0.05, seed=0)
    assert len(rep.entries) == 50
    assert all(e.original_label == 1 and e.new_label == 0 for e in rep.entries)
    assert out.labels.sum() == 950


def test_targeted_flip_zero_rate_and_exhaustive():
    ds = make_dataset(np.zeros((6, 1)), [1] * 6, ("non_fraud", "fraud"))
    assert flip_labels_targeted(ds, 1, 0, 0.0, 0)[1].entries == ()
    out, rep = flip_labels_targeted(ds, 1, 0, 1.0, 0)
    assert (out.labels == 0).all() and len(rep.entries) == 6


def test_targeted_flip_empty_class_warns():
    ds = make_dataset(np.zeros((3, 1)), [0, 0, 0], ("a", "b"))
    with pytest.warns(PoisonBenchWarning):
        _, rep = flip_labels_targeted(ds, 1, 0, 0.5, 0)
    assert rep.entries == ()


def test_targeted_flip_same_class_rejected():
    with pytest.raises(ValidationError):
        flip_labels_targeted(labelled(4, 2), 1, 1, 0.5, 0)


# --- instance replacement ----------------------------------------------------


def test_replace_instances_report_and_histogram():
    ds = images(30)
    out, rep = replace_instances(ds, 0, 1, 10, seed=0)
    assert len(rep.entries) == 20
    assert {e.kind for e in rep.entries} == {"image_swap"}
    assert np.array_equal(out.labels, ds.labels)
    assert np.array_equal(np.bincount(out.labels), np.bincount(ds.labels))


def test_replace_two_examples_exchanges_payloads():
    ds = images(1)
    out, rep = replace_instances(ds, 0, 1, 1, seed=0)
    assert np.array_equal(out.features[0], ds.features[1])
    assert np.array_equal(out.features[1], ds.features[0])
    assert out.labels.tolist() == ds.labels.tolist()
    assert sorted(rep.indices) == [100, 101]


def test_replace_zero_count_identity():
    ds = images(3)
    out, rep = replace_instances(ds, 0, 1, 0, seed=0)
    assert rep.entries == () and np.array_equal(out.features, ds.features)


def test_replace_too_many_names_class():
    ds = images(3)
    with pytest.raises(ValidationError, match="c1"):
        replace_instances(ds.at(np.array([0, 1, 2, 4])), 0, 1, 3, seed=0)


def test_replace_payloads_are_a_pairwise_permutation():
    ds = images(20, k=3)
    out, rep = replace_instances(ds, 0, 2, 7, seed=4)
    moved = [p for p in range(len(ds)) if not np.array_equal(out.features[p], ds.features[p])]
    assert sorted(ds.indices[moved].tolist()) == sorted(rep.indices)
    for p in moved:
        src = [q for q in range(len(ds)) if np.array_equal(ds.features[q], out.features[p])]
        assert len(src) == 1 and ds.labels[src[0]] != ds.labels[p]


# --- noise -------------------------------------------------------------------


def test_noise_zero_magnitude_lists_images():
    ds = images(5)
    out, rep = inject_noise(ds, 0.4, 0.0, seed=0)
    assert len(rep.entries) == 4
    assert np.array_equal(out.features, ds.features)


def test_noise_bounded_and_clamped():
    ds = images(10)
    out, rep = inject_noise(ds, 0.5, 0.3, seed=1)
    assert out.features.min() >= 0 and out.features.max() <= 1
    touched = ds.positions_of(sorted(rep.indices))
    others = np.setdiff1d(np.arange(len(ds)), touched)
    assert np.array_equal(out.features[others], ds.features[others])
    diff = np.abs(out.features[touched] - ds.features[touched])
    assert diff.max() <= 0.3 + 1e-12 and diff.max() > 0
    assert np.array_equal(out.labels, ds.labels)


def test_noise_rejects_unscaled_images():
    ds = images(2).with_features(images(2).features * 255)
    with pytest.raises(ValidationError):
        inject_noise(ds, 0.5, 0.1, 0)


def test_noise_zero_rate_identity():
    ds = images(3)
    out, rep = inject_noise(ds, 0.0, 0.5, 0)
    assert rep.entries == () and np.array_equal(out.features, ds.features)


# --- specs and reports -------------------------------------------------------


def test_spec_replay_reproduces_manifest():
    ds = images(20)
    specs = [
        PoisonSpec("label_flip_targeted", {"from_class": 0, "to_class": 1, "rate": 0.1}, seed=3),
        PoisonSpec("instance_replace", {"class_a": 0, "class_b": 1, "count": 4}, seed=4),
        PoisonSpec("noise_injection", {"rate": 0.1, "magnitude": 0.2}, seed=5),
    ]
    a_ds, a = apply_poisons(ds, specs)
    b_ds, b = apply_poisons(ds, [PoisonSpec.from_dict(s.to_dict()) for s in specs])
    assert a == b and np.array_equal(a_ds.features, b_ds.features)
    assert [len(r.entries) for r in a] == [2, 8, 4]


def test_spec_validation():
    with pytest.raises(ValidationError):
        PoisonSpec("bogus", {})
    with pytest.raises(ValidationError):
        PoisonSpec("label_flip_targeted", {"from_class": 0, "to_class": 0, "rate": 0.1})
    with pytest.raises(ValidationError):
        PoisonSpec("instance_replace", {"class_a": 0, "class_b": 1, "count": -1})


def test_report_csv_and_json_round_trip():
    ds = labelled(30, 3)
    _, rep = apply_poison(ds, PoisonSpec("label_flip_random", {"rate": 0.2}, 1))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "index,kind,original_label,new_label"
    assert len(lines) == 7
    assert PoisonReport.from_dict(rep.to_dict()) == rep


def test_report_merge_counts_distinct():
    ds = images(10)
    _, reps = apply_poisons(
        ds,
        [
            PoisonSpec("label_flip_random", {"rate": 0.5}, 0),
            PoisonSpec("instance_replace", {"class_a": 0, "class_b": 1, "count": 5}, 1),
        ],
    )
    merged = PoisonReport.merge(reps, len(ds))
    assert merged.achieved_rate == len(set(merged.indices)) / len(ds)
