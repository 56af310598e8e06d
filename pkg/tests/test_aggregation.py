import numpy as np
import pytest
from sklearn.base import clone

from mandera import (AggregationRule, RobustAggregator, ValidationError, aggregate, aggregate_mean,
                     bulyan, coordinate_median, krum_select, trimmed_mean)
from mandera.aggregation import bulyan_select, krum_scores
from oracles import bulyan_oracle, krum_oracle, median_oracle, trimmed_mean_oracle


def random_instances(rng, count, n_range=(3, 13), p_range=(1, 6)):
    for _ in range(count):
        n = int(rng.integers(*n_range))
        p = int(rng.integers(*p_range))
        yield rng.standard_normal((n, p)) * rng.uniform(0.1, 10)


def test_mean_examples(rng):
    np.testing.assert_array_equal(aggregate_mean([[1, 2], [3, 4]]), [2, 3])
    np.testing.assert_array_equal(aggregate_mean([[1, 2], [3, 4]], [1]), [3, 4])
    M = rng.standard_normal((100, 4))
    inc = rng.choice(100, 70, replace=False)
    expected = [sum(M[i, j] for i in inc) / 70 for j in range(4)]
    np.testing.assert_allclose(aggregate_mean(M, inc), expected, rtol=1e-12)
    with pytest.raises(ValidationError, match="empty"):
        aggregate_mean(M, [])


def test_krum_matches_oracle(rng):
    checked = 0
    for M in random_instances(rng, 150):
        n = len(M)
        for f in range(0, n - 2):
            idx, scores = krum_oracle(M, f)
            np.testing.assert_allclose(krum_scores(M, f), scores, rtol=1e-10, atol=1e-12)
            assert krum_select(M, f) == idx
            checked += 1
    assert checked >= 100


def test_krum_examples():
    M = np.array([[0.0], [0.1], [0.2], [10.0]])
    np.testing.assert_allclose(krum_scores(M, 1), [0.01, 0.01, 0.01, 96.04])
    assert krum_select(M, 1) == 0
    assert krum_select(np.ones((5, 3)), 1) == 0
    with pytest.raises(ValidationError, match="f \\+ 3"):
        krum_select(np.ones((4, 2)), 2)


def test_krum_never_picks_outlier(rng):
    for _ in range(50):
        M = rng.standard_normal((6, 4)) * 0.1
        M[int(rng.integers(6))] += 1e3
        out = int(np.argmax(np.abs(M).max(axis=1)))
        assert krum_select(M, 1) != out


def test_krum_permutation_equivariance(rng):
    checked = 0
    for M in random_instances(rng, 80, n_range=(4, 12)):
        f = 1
        scores = np.sort(krum_scores(M, f))
        # mutual nearest neighbours tie exactly; the property is about tie-free minima
        if scores[1] - scores[0] <= 1e-9 * scores[1]:
            continue
        perm = rng.permutation(len(M))
        assert perm[krum_select(M[perm], f)] == krum_select(M, f)
        checked += 1
    assert checked >= 20


def test_trimmed_mean_and_median_match_oracles(rng):
    for M in random_instances(rng, 120, n_range=(1, 13)):
        n = len(M)
        np.testing.assert_allclose(coordinate_median(M), median_oracle(M), rtol=1e-12)
        for beta in range(0, (n - 1) // 2 + 1):
            np.testing.assert_allclose(trimmed_mean(M, beta), trimmed_mean_oracle(M, beta),
                                       rtol=1e-10, atol=1e-12)


def test_trimmed_mean_and_median_examples():
    col = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
    assert trimmed_mean(col, 1)[0] == 3.0
    assert coordinate_median(col)[0] == 3.0
    assert coordinate_median(col[:4])[0] == 2.5
    M = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(trimmed_mean(M, 0), M.mean(axis=0))
    np.testing.assert_array_equal(trimmed_mean(np.full((5, 2), 7.5), 2), [7.5, 7.5])
    with pytest.raises(ValidationError, match="2\\*beta < n"):
        trimmed_mean(M, 2)


def test_trimmed_mean_max_trim_is_median_for_odd_n(rng):
    for M in random_instances(rng, 40, n_range=(3, 13)):
        if len(M) % 2:
            np.testing.assert_allclose(trimmed_mean(M, (len(M) - 1) // 2), coordinate_median(M))


def test_bulyan_matches_oracle(rng):
    checked = 0
    for M in random_instances(rng, 150, n_range=(3, 13)):
        n = len(M)
        for f in range(0, (n - 3) // 4 + 1):
            S, out = bulyan_oracle(M, f)
            np.testing.assert_array_equal(bulyan_select(M, f), S)
            np.testing.assert_allclose(bulyan(M, f), out, rtol=1e-10, atol=1e-12)
            # result sits inside the selected rows' range
            sel = M[S]
            assert np.all(out >= sel.min(axis=0) - 1e-12) and np.all(out <= sel.max(axis=0) + 1e-12)
            checked += 1
    assert checked >= 100


def test_bulyan_examples(rng):
    M = rng.standard_normal((6, 3))
    np.testing.assert_allclose(bulyan(M, 0), M.mean(axis=0))
    np.testing.assert_array_equal(bulyan(np.tile([1.0, -2.0], (7, 1)), 1), [1.0, -2.0])
    with pytest.raises(ValidationError, match="4f \\+ 3"):
        bulyan(np.ones((6, 2)), 1)


def test_bulyan_excludes_planted_outlier(rng):
    excluded = 0
    for _ in range(100):
        M = rng.standard_normal((7, 5))
        bad = int(rng.integers(7))
        M[bad] += 1000.0
        S = bulyan_select(M, 1)
        excluded += bad not in S and len(S) == 5
    assert excluded >= 99


def test_translation_equivariance(rng):
    for M in random_instances(rng, 30, n_range=(7, 12)):
        c = rng.standard_normal(M.shape[1]) * 5
        for rule in (AggregationRule("Mean"), AggregationRule("Krum", assumed_f=1),
                     AggregationRule("Bulyan", assumed_f=1), AggregationRule("TrimmedMean", trim_beta=2),
                     AggregationRule("Median")):
            np.testing.assert_allclose(aggregate(M + c, rule), aggregate(M, rule) + c,
                                       rtol=1e-9, atol=1e-9)


def test_mandera_then_mean_drops_detected_rows(rng):
    from mandera.theory import make_gradient_model, synth_attacked

    model = make_gradient_model(40, 10, 2000, seed=2)
    M = synth_attacked(model, "SignFlip", seed=3)
    out = aggregate(M, AggregationRule("ManderaThenMean"))
    np.testing.assert_allclose(out, M[model.benign].mean(axis=0))


def test_rule_validation_and_resolution():
    with pytest.raises(ValidationError):
        AggregationRule("Krum", assumed_f=-1)
    with pytest.raises(ValueError):
        AggregationRule("Zeno")
    r = AggregationRule("Bulyan").resolved(7)
    assert (r.assumed_f, r.trim_beta) == (7, 7)
    assert AggregationRule("Krum", assumed_f=2).resolved(7).assumed_f == 2


def test_robust_aggregator_estimator(rng):
    M = rng.standard_normal((9, 4))
    est = RobustAggregator(rule="Krum", assumed_f=2).fit(M)
    assert est.selected_ == krum_select(M, 2)
    np.testing.assert_array_equal(est.aggregate_, M[est.selected_])
    assert clone(est).get_params() == {"rule": "Krum", "assumed_f": 2, "trim_beta": 0}
    est = RobustAggregator(rule="Bulyan", assumed_f=1).fit(M)
    np.testing.assert_array_equal(est.selected_, bulyan_select(M, 1))
