import json

import numpy as np
import pytest
from sklearn.base import clone

from mandera import ManderaDetector, ValidationError, concat_epochs, kmeans2, mandera, select_malicious
from mandera.detect import SelectionRule
from mandera.theory import make_gradient_model, synth_attacked, synth_benign
from oracles import best_partition_inertia


def test_kmeans_well_separated_pairs():
    km = kmeans2([(0, 0), (0, 1), (10, 0), (10, 1)])
    assert km.assignment[0] == km.assignment[1] != km.assignment[2] == km.assignment[3]


def test_kmeans_coincident_groups_one_iteration():
    pts = [(1.0, 2.0)] * 3 + [(5.0, -1.0)] * 4
    km = kmeans2(pts)
    assert km.iterations == 1
    assert sorted(map(tuple, km.centroids)) == [(1.0, 2.0), (5.0, -1.0)]


def test_kmeans_matches_exhaustive_partition_search(rng):
    for trial in range(300):
        n = int(rng.integers(2, 13))
        X = rng.uniform(size=(n, 2)) if trial % 2 else rng.standard_normal((n, 2)) * [1, 5]
        if trial % 5 == 0:
            X = np.round(X * 2) / 2  # duplicates and collinear triples
        if np.all(X == X[0]):
            continue
        km = kmeans2(X)
        assert km.inertia == pytest.approx(best_partition_inertia(X), rel=1e-9, abs=1e-12)


def test_kmeans_all_identical_points_degenerate():
    km = kmeans2(np.ones((5, 2)))
    assert km.degenerate and np.all(km.assignment == 0)
    with pytest.raises(ValidationError):
        kmeans2(np.ones((1, 2)))


def test_kmeans_is_deterministic(rng):
    X = rng.standard_normal((40, 2))
    a, b = kmeans2(X), kmeans2(X)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert a.iterations == b.iterations


def test_duplicate_rows_rule_identifies_copies(rng):
    M = rng.standard_normal((100, 300))
    M[70:] = M[70]
    res = mandera(M)
    assert res.rule == SelectionRule.DUPLICATE_ROWS
    np.testing.assert_array_equal(res.malicious, np.arange(70, 100))


def test_smaller_cluster_rule(rng):
    M = rng.standard_normal((100, 2000)) * 0.01 + rng.standard_normal(2000)
    M[:5] = rng.standard_normal((5, 2000)) * 40
    res = mandera(M)
    assert res.rule == SelectionRule.SMALLER_CLUSTER
    np.testing.assert_array_equal(res.malicious, np.arange(5))


def test_tighter_spread_and_low_index_ties():
    pts = np.array([[1.0, 1.0], [1.0, 1.2], [5.0, 1.0], [5.0, 3.0]])
    M = np.arange(8.0).reshape(4, 2)
    res = select_malicious([0, 0, 1, 1], M, pts)
    assert res.rule == SelectionRule.TIGHTER_SPREAD and res.malicious_cluster == 0
    pts = np.array([[1.0, 1.0], [1.0, 2.0], [5.0, 1.0], [5.0, 2.0]])
    res = select_malicious([1, 1, 0, 0], M, pts)
    assert res.rule == SelectionRule.TIE_LOW_INDEX and res.ambiguous
    np.testing.assert_array_equal(res.labels, [0, 0, 1, 1])


def test_duplicates_in_majority_cluster_do_not_count():
    # the big cluster holds a duplicate pair; the minority must still be chosen
    rng = np.random.default_rng(0)
    M = rng.standard_normal((10, 5))
    M[1] = M[0]
    pts = rng.standard_normal((10, 2))
    res = select_malicious([0] * 7 + [1] * 3, M, pts)
    assert res.rule == SelectionRule.SMALLER_CLUSTER and res.malicious_cluster == 1


@pytest.mark.parametrize("attack", ["Gaussian", "SignFlip", "ZeroGradient"])
def test_full_recall_on_synthetic_attacks(attack):
    model = make_gradient_model(100, 30, 20_000, seed=4)
    M = synth_attacked(model, attack, seed=5)
    res = mandera(M)
    np.testing.assert_array_equal(res.malicious, model.malicious)
    assert not res.ambiguous
    if attack != "Gaussian":
        assert res.rule == SelectionRule.DUPLICATE_ROWS


def test_all_benign_input_is_flagged():
    model = make_gradient_model(50, 0, 5000, seed=1)
    res = mandera(synth_benign(model, seed=2))
    assert res.ambiguous
    assert res.labels.sum() <= 25


def test_scale_and_column_permutation_invariance(rng):
    model = make_gradient_model(30, 8, 3000, seed=7)
    M = synth_attacked(model, "Gaussian", seed=8)
    ref = mandera(M)
    for other in (mandera(M * 123.0), mandera(M[:, rng.permutation(M.shape[1])])):
        np.testing.assert_array_equal(other.labels, ref.labels)


def test_multi_epoch_concatenation_not_worse_than_worst_epoch():
    model = make_gradient_model(100, 20, 500, seed=11)
    epochs = [synth_attacked(model, "Gaussian", seed=s, attack_variance=1e-3) for s in range(5)]
    recalls = [np.isin(model.malicious, mandera(M).malicious).mean() for M in epochs]
    joint = np.isin(model.malicious, mandera(concat_epochs(epochs)).malicious).mean()
    assert joint >= min(recalls)


def test_result_json_schema(rng):
    res = mandera(rng.standard_normal((8, 40)))
    doc = json.loads(res.to_json())
    assert set(doc) == {"labels", "centroids", "rule", "ambiguous"}
    assert len(doc["labels"]) == 8 and set(doc["labels"]) <= {0, 1}
    assert len(doc["centroids"]) == 2 and all(len(c) == 2 for c in doc["centroids"])
    assert res.labels.sum() <= 4


def test_mandera_needs_four_nodes():
    with pytest.raises(ValidationError, match="at least 4"):
        mandera(np.ones((3, 5)))


def test_detector_estimator(rng):
    model = make_gradient_model(40, 10, 2000, seed=3)
    M = synth_attacked(model, "SignFlip", seed=4)
    det = ManderaDetector().fit(M)
    np.testing.assert_array_equal(np.flatnonzero(det.labels_), model.malicious)
    np.testing.assert_array_equal(det.fit_predict(M), det.labels_)
    assert det.moments_.shape == (40, 2)
    assert clone(det).get_params() == {"max_iter": 100, "chunk_size": 1024}
