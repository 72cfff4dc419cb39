import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset, two_blobs
from poisonbench.attacks import PoisonEntry, PoisonReport, flip_labels_random, flip_labels_targeted
from poisonbench.defenses import (
    DetectionReport,
    Flag,
    centroid_anomaly_filter,
    ensemble_train_vote,
    evaluate_detection,
    knn_sanitize,
    nearest_neighbors,
    trimmed_robust_train,
)
from poisonbench.errors import PoisonBenchWarning, ValidationError
from poisonbench.learners import TrainingConfig, example_losses, fit, model_to_dict, predict, predict_proba


def brute_force_knn_flags(X, labels, k):
    """Explicit loop oracle: positions whose k-neighbourhood strictly outvotes their label."""
    n = len(X)
    out = {}
    for i in range(n):
        d = [(float(np.sum((X[i] - X[j]) ** 2)), j) for j in range(n) if j != i]
        d.sort()
        votes = np.bincount([labels[j] for _, j in d[:k]], minlength=labels.max() + 1)
        top = int(np.argmax(votes))
        if 2 * votes[top] > k and top != labels[i]:
            out[i] = top
    return out


# --- kNN sanitisation --------------------------------------------------------


def test_knn_consistent_dataset_unchanged(blobs):
    out, rep = knn_sanitize(blobs, 3, "relabel")
    assert rep.flagged == ()
    assert np.array_equal(out.labels, blobs.labels)


def test_knn_fixes_exactly_the_flipped_points():
    ds = two_blobs(50, sep=20.0)
    poisoned, truth = flip_labels_targeted(ds, 0, 1, 0.1, seed=3)
    assert len(truth.entries) == 5
    fixed, rep = knn_sanitize(poisoned, 5, "relabel")
    assert sorted(rep.indices) == sorted(truth.indices)
    assert np.array_equal(fixed.labels, ds.labels)
    assert all(f.action == "relabeled" and f.new_label == 0 for f in rep.flagged)
    oracle = brute_force_knn_flags(poisoned.features, poisoned.labels, 5)
    assert oracle == {int(p): f.new_label for p, f in zip(poisoned.positions_of([f.index for f in rep.flagged]), rep.flagged)}


def test_knn_two_points_both_flagged():
    ds = make_dataset([[0.0], [1.0]], [0, 1])
    out, rep = knn_sanitize(ds, 1, "relabel")
    assert sorted(rep.indices) == [0, 1]
    assert out.labels.tolist() == [1, 0]


def test_knn_remove_mode():
    ds = two_blobs(20, sep=20.0)
    poisoned, truth = flip_labels_random(ds, 0.1, seed=1)
    out, rep = knn_sanitize(poisoned, 5, "remove")
    assert len(out) == 40 - len(truth.entries)
    assert {f.action for f in rep.flagged} == {"removed"}
    assert set(out.indices.tolist()).isdisjoint(truth.indices)


@pytest.mark.parametrize("k", [0, 10, 11])
def test_knn_k_bounds(k):
    ds = make_dataset(np.zeros((10, 1)), np.arange(10) % 2)
    with pytest.raises(ValidationError):
        knn_sanitize(ds, k, "relabel")


def test_knn_single_pass_uses_original_labels():
    # 0 and 1 would cascade if relabels fed back into later votes
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 1, 1, 0, 0])
    out, rep = knn_sanitize(make_dataset(X, y), 2, "relabel")
    oracle = brute_force_knn_flags(X, y, 2)
    assert {f.index: f.new_label for f in rep.flagged} == oracle


def test_knn_distance_ties_prefer_lower_index():
    X = np.array([[0.0], [-1.0], [1.0], [5.0]])
    nn = nearest_neighbors(X, 1)
    assert nn[0, 0] == 1


@given(st.integers(0, 10_000), st.integers(6, 40), st.integers(1, 5), st.integers(2, 3))
def test_knn_matches_brute_force_oracle(seed, n, k, n_classes):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, 2)).astype(np.float64)  # coarse grid forces distance ties
    y = rng.integers(0, n_classes, n)
    ds = make_dataset(X, y, tuple(range(n_classes)))
    _, rep = knn_sanitize(ds, min(k, n - 1), "relabel")
    assert {f.index: f.new_label for f in rep.flagged} == brute_force_knn_flags(X, y, min(k, n - 1))


def test_knn_chunking_matches_dense():
    X = np.random.default_rng(0).normal(size=(70, 3))
    assert np.array_equal(nearest_neighbors(X, 4, chunk=8), nearest_neighbors(X, 4, chunk=1000))


def test_knn_is_order_independent():
    ds = two_blobs(15, sep=2.0, seed=5)
    poisoned, _ = flip_labels_random(ds, 0.2, seed=2)
    perm = np.random.default_rng(1).permutation(len(ds))
    _, a = knn_sanitize(poisoned, 3, "relabel")
    _, b = knn_sanitize(poisoned.at(perm), 3, "relabel")
    key = lambda f: f.index
    assert sorted(a.flagged, key=key) == sorted(b.flagged, key=key)


# --- centroid filter ---------------------------------------------------------


def test_centroid_identical_members_no_removal():
    ds = make_dataset(np.ones((6, 3)), [0, 0, 0, 1, 1, 1])
    out, rep = centroid_anomaly_filter(ds, 1.0)
    assert rep.flagged == () and len(out) == 6


def test_centroid_removes_far_point():
    rng = np.random.default_rng(0)
    inliers = rng.normal(0, 1, (60, 2))
    dist = np.linalg.norm(inliers - inliers.mean(axis=0), axis=1)
    far = inliers.mean(axis=0) + np.array([dist.mean() + 10 * dist.std() * 1.5, 0.0])
    X = np.vstack([inliers, far])
    ds = make_dataset(X, np.zeros(61, dtype=int), ("a",))
    out, rep = centroid_anomaly_filter(ds, 3.0)
    assert sorted(rep.indices) == [60]
    # verify the z-score independently
    c = X.mean(axis=0)
    d = np.linalg.norm(X - c, axis=1)
    z = (d - d.mean()) / d.std()
    assert z[60] > 3 and (z[:60] <= 3).all()
    assert rep.flagged[0].score == pytest.approx(z[60])


def test_centroid_huge_threshold_identity(blobs):
    out, rep = centroid_anomaly_filter(blobs, 1e9)
    assert rep.flagged == () and len(out) == len(blobs)


def test_centroid_needs_two_members():
    with pytest.raises(ValidationError):
        centroid_anomaly_filter(make_dataset(np.zeros((3, 1)), [0, 0, 1]), 2.0)


@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.01, 100))
def test_centroid_affine_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    X = rng.standard_t(2, size=(40, 3))
    y = np.arange(40) % 2
    _, a = centroid_anomaly_filter(make_dataset(X, y), 1.5)
    _, b = centroid_anomaly_filter(make_dataset(X * scale + shift, y), 1.5)
    assert sorted(a.indices) == sorted(b.indices)


# --- trimmed training --------------------------------------------------------


def mlp_config(**kw):
    base = dict(epochs=15, batch_size=16, learning_rate=0.1, hidden_dims=(6,), seed=0)
    base.update(kw)
    return TrainingConfig(**base)


def test_trim_zero_equals_plain_training(blobs):
    cfg = mlp_config()
    model, rep = trimmed_robust_train(blobs, cfg, 0.0, rounds=2)
    plain, _ = fit(blobs, cfg)
    assert rep.flagged == ()
    assert model_to_dict(model) == model_to_dict(plain)


def test_trim_drops_highest_losses():
    ds = two_blobs(50, sep=3.0, dim=2, seed=7)
    cfg = mlp_config()
    model, rep = trimmed_robust_train(ds, cfg, 0.1, rounds=1)
    assert len(rep.flagged) == 10
    first, _ = fit(ds, cfg)
    losses = example_losses(first, ds)
    order = sorted(range(len(ds)), key=lambda p: (-losses[p], ds.indices[p]))
    assert sorted(rep.indices) == sorted(ds.indices[order[:10]].tolist())


def test_trim_enriches_poisoned_points():
    ratios = []
    for seed in range(10):
        ds = two_blobs(50, sep=8.0, dim=2, seed=seed)
        poisoned, truth = flip_labels_random(ds, 0.1, seed=seed)
        _, rep = trimmed_robust_train(poisoned, mlp_config(seed=seed), 0.1, rounds=2)
        hit = len(set(rep.indices) & set(truth.indices)) / len(rep.flagged)
        ratios.append(hit / 0.1)
    assert np.mean(ratios) > 2


def test_trim_stops_before_dropping_below_k():
    ds = make_dataset(np.arange(4, dtype=float)[:, None], [0, 1, 2, 0])
    with pytest.warns(PoisonBenchWarning, match="fewer than 3"):
        model, rep = trimmed_robust_train(ds, mlp_config(epochs=2), 0.4, rounds=5)
    assert len(rep.flagged) == 1


def test_trim_argument_checks(blobs):
    with pytest.raises(ValidationError):
        trimmed_robust_train(blobs, mlp_config(), 0.5)
    with pytest.raises(ValidationError):
        trimmed_robust_train(blobs, mlp_config(), 0.1, rounds=0)


# --- ensemble ----------------------------------------------------------------


def test_ensemble_of_one_matches_base(blobs):
    cfg = mlp_config(epochs=5)
    ens = ensemble_train_vote(blobs, cfg, 1, bootstrap=False)
    base, _ = fit(blobs, cfg)
    Q = np.random.default_rng(0).normal(0, 10, (30, 2))
    assert np.array_equal(predict(ens, Q), predict(base, Q))
    assert np.array_equal(predict_proba(ens, Q), predict_proba(base, Q))


def test_ensemble_vote_counts():
    from poisonbench.learners import NeuralModel
    from poisonbench.learners.models import EnsembleModel

    def constant(c):
        b = np.zeros(2)
        b[c] = 5.0
        return NeuralModel("softmax", [np.zeros((1, 2))], [b], 2, 1)

    ens = EnsembleModel([constant(0), constant(0), constant(1)], 2, 1)
    assert predict(ens, np.zeros((1, 1))).tolist() == [0]
    members = np.stack([predict_proba(m, np.zeros((1, 1))) for m in ens.members])
    assert np.allclose(predict_proba(ens, np.zeros((1, 1))), members.mean(axis=0))
    tie = EnsembleModel([constant(1), constant(0)], 2, 1)
    assert predict(tie, np.zeros((1, 1))).tolist() == [0]


def test_ensemble_deterministic(blobs):
    cfg = mlp_config(epochs=3)
    a = ensemble_train_vote(blobs, cfg, 3)
    b = ensemble_train_vote(blobs, cfg, 3)
    assert model_to_dict(a) == model_to_dict(b)
    with pytest.raises(ValidationError):
        ensemble_train_vote(blobs, cfg, 0)


# --- detection scoring -------------------------------------------------------


def flags(ids):
    return DetectionReport(tuple(Flag(i, "removed", None, 1.0) for i in ids))


def truth(ids):
    return PoisonReport(tuple(PoisonEntry(i, "label_flip", 0, 1) for i in ids), 0.0)


def test_detection_examples():
    s = evaluate_detection(flags([1, 2, 3]), truth([1, 2, 3]))
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    s = evaluate_detection(flags([1, 2, 3]), truth([2, 3, 4]))
    assert s.precision == pytest.approx(2 / 3) and s.recall == pytest.approx(2 / 3)
    s = evaluate_detection(flags([]), truth([5]))
    assert (s.precision, s.recall, s.f1) == (1.0, 0.0, 0.0)
    s = evaluate_detection(flags([5]), truth([]))
    assert (s.precision, s.recall) == (0.0, 1.0)


def test_detection_out_of_range():
    with pytest.raises(ValidationError):
        evaluate_detection(flags([10]), truth([1]), n_examples=10)
    with pytest.raises(ValidationError):
        evaluate_detection(flags([7]), truth([1]), valid_ids=[0, 1, 2])


@given(st.sets(st.integers(0, 30)), st.sets(st.integers(0, 30)))
def test_detection_bounds(flagged, poisoned):
    s = evaluate_detection(flags(sorted(flagged)), truth(sorted(poisoned)))
    for v in (s.precision, s.recall, s.f1):
        assert 0 <= v <= 1
    assert s.f1 <= 2 * min(s.precision, s.recall) + 1e-12


def test_detection_report_csv_round_trip():
    rep = DetectionReport((Flag(3, "relabeled", 1, 0.8), Flag(9, "removed", None, 2.5)))
    assert rep.to_csv().splitlines() == ["index,action,new_label,score", "3,relabeled,1,0.8", "9,removed,,2.5"]
    assert DetectionReport.from_dict(rep.to_dict()) == rep
