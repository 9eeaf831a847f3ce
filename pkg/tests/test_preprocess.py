from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypersurv.cohort import Cohort, DataError, PatientRecord, generate_synthetic_cohort
from hypersurv.preprocess import (
    ClusterAssignment,
    FeatureRanking,
    StandardizationParams,
    apply_standardizer,
    bootstrap_rank_features,
    cluster_features,
    fit_standardizer,
    mutual_information_score,
    reduce_to_representatives,
    spearman_matrix,
)

from oracles import mi_gaussian_mixture


def cohort_from(X, names=None):
    X = np.asarray(X, dtype=float)
    names = names or tuple(f"c{j}" for j in range(X.shape[1]))
    return Cohort(tuple(PatientRecord(f"P{i}", X[i]) for i in range(X.shape[0])), tuple(names))


class TestStandardizer:
    def test_hand_values(self):
        params = fit_standardizer(cohort_from([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(params.mean, [2.0, 5.0])
        np.testing.assert_array_equal(params.scale, [1.0, 1.0])
        np.testing.assert_array_equal(params.constant, [False, True])

    def test_constant_warns(self, caplog):
        fit_standardizer(cohort_from([[5.0], [5.0], [5.0]]))
        assert "constant" in caplog.text

    def test_self_standardised(self):
        c = generate_synthetic_cohort(200, 4, "classification", [0, 0, 0, 0], seed=0)
        z = apply_standardizer(fit_standardizer(c), c).X
        assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=1e-10)
        again = fit_standardizer(cohort_from(z))
        assert np.all(np.abs(again.mean) < 1e-12)
        np.testing.assert_allclose(again.scale, 1.0, atol=1e-12)

    def test_mean_maps_to_zero(self):
        c = cohort_from([[1.0], [2.0], [6.0]])
        params = fit_standardizer(c)
        out = apply_standardizer(params, cohort_from([[3.0]], ["c0"]))
        assert out.X[0, 0] == 0.0

    def test_uses_training_parameters(self):
        train = cohort_from([[0.0], [2.0]])
        test = cohort_from([[10.0], [12.0]])
        via_train = apply_standardizer(fit_standardizer(train), test).X
        self_std = apply_standardizer(fit_standardizer(test), test).X
        np.testing.assert_array_equal(via_train[:, 0], [9.0, 11.0])
        assert not np.allclose(via_train, self_std)

    def test_name_mismatch(self):
        params = fit_standardizer(cohort_from([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(DataError):
            apply_standardizer(params, cohort_from([[0.0, 1.0]], ["c1", "c0"]))

    def test_json_round_trip(self, tmp_path):
        params = fit_standardizer(cohort_from([[0.0, 1.0], [1.5, 1.0], [4.0, 1.0]]))
        params.save(tmp_path / "s.json")
        back = StandardizationParams.load(tmp_path / "s.json")
        assert back.feature_names == params.feature_names
        np.testing.assert_array_equal(back.mean, params.mean)
        np.testing.assert_array_equal(back.scale, params.scale)
        np.testing.assert_array_equal(back.constant, params.constant)


class TestSpearman:
    def test_hand_example(self):
        rho = spearman_matrix(np.array([[1.0, 3.0], [2.0, 1.0], [3.0, 2.0]]))
        assert rho[0, 1] == -0.5

    def test_identity_and_reversal(self):
        x = np.array([0.3, 1.2, -0.4, 2.2, 0.0])
        rho = spearman_matrix(np.column_stack([x, x, -x]))
        np.testing.assert_allclose(rho, [[1, 1, -1], [1, 1, -1], [-1, -1, 1]], atol=1e-15)

    def test_constant_column(self):
        rho = spearman_matrix(np.array([[1.0, 2.0], [2.0, 2.0], [3.0, 2.0]]))
        assert rho[0, 1] == 0.0
        assert rho[1, 1] == 1.0

    def test_matches_scipy(self):
        from scipy.stats import spearmanr

        X = np.random.default_rng(0).integers(0, 5, (30, 4)).astype(float)
        np.testing.assert_allclose(spearman_matrix(X), spearmanr(X).statistic, atol=1e-12)

    def test_needs_three_rows(self):
        with pytest.raises(DataError):
            spearman_matrix(np.ones((2, 2)))


class TestClustering:
    def test_all_singletons(self):
        corr = np.array([[1, 0.9, 0.2], [0.9, 1, 0.5], [0.2, 0.5, 1]])
        out = cluster_features(corr, ["a", "b", "c"])
        assert out.clusters == (("a",), ("b",), ("c",))

    def test_triple_all_tied(self):
        corr = np.full((3, 3), 0.95)
        np.fill_diagonal(corr, 1)
        out = cluster_features(corr, ["c", "a", "b"])
        assert out.clusters == (("a", "b", "c"),)
        assert out.representatives == ("a",)

    def test_chain_never_merges_triple(self):
        corr = np.array([[1, 0.95, 0.5], [0.95, 1, 0.95], [0.5, 0.95, 1]])
        out = cluster_features(corr, ["a", "b", "c"])
        sizes = sorted(len(c) for c in out.clusters)
        assert sizes == [1, 2]

    def test_negative_correlation_clusters(self):
        corr = np.array([[1, -0.99], [-0.99, 1]])
        assert len(cluster_features(corr).clusters) == 1

    def test_representative_maximises_summed_correlation(self):
        corr = np.array(
            [[1, 0.92, 0.93, 0.91], [0.92, 1, 0.99, 0.95], [0.93, 0.99, 1, 0.96], [0.91, 0.95, 0.96, 1]]
        )
        out = cluster_features(corr, ["a", "b", "c", "d"])
        assert out.clusters == (("a", "b", "c", "d"),)
        assert out.representatives == ("c",)

    def test_reduce(self):
        c = cohort_from(np.random.default_rng(0).standard_normal((5, 3)), ["a", "b", "c"])
        assign = ClusterAssignment((("a", "c"), ("b",)), ("c", "b"))
        assert reduce_to_representatives(c, assign).feature_names == ("b", "c")

    def test_dict_round_trip(self):
        assign = ClusterAssignment((("a", "c"), ("b",)), ("c", "b"))
        assert ClusterAssignment.from_dict(assign.to_dict()) == assign

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            cluster_features(np.eye(2), threshold=1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 6), elements=st.floats(-3, 3)), st.integers(0, 3))
def test_clusters_satisfy_threshold(X, n_copies):
    # append noisy copies to make high correlations likely
    rng = np.random.default_rng(n_copies)
    extra = [X[:, j] + 0.01 * rng.standard_normal(12) for j in range(n_copies)]
    data = np.column_stack([X, *extra]) if extra else X
    rho = spearman_matrix(data)
    names = [f"v{j}" for j in range(data.shape[1])]
    out = cluster_features(rho, names)
    assert sorted(n for c in out.clusters for n in c) == sorted(names)
    index = {n: j for j, n in enumerate(names)}
    for cluster in out.clusters:
        for a, b in itertools.combinations(cluster, 2):
            assert abs(rho[index[a], index[b]]) > 0.9


class TestMutualInformation:
    def test_near_deterministic(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 2000)
        x = y + rng.normal(0, 0.01, 2000)
        est = mutual_information_score(x, y)
        assert est > 0.5
        assert abs(est - mi_gaussian_mixture(0, 1, 0.01, y.mean())) < 0.02

    @pytest.mark.parametrize("sigma", [0.5, 1.0])
    def test_overlapping_mixture(self, sigma):
        rng = np.random.default_rng(1)
        y = (rng.uniform(size=4000) < 0.4).astype(int)
        x = y + rng.normal(0, sigma, 4000)
        assert abs(mutual_information_score(x, y) - mi_gaussian_mixture(0, 1, sigma, y.mean())) < 0.03

    def test_independent_below_permutation_null(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(2000)
        y = rng.integers(0, 2, 2000)
        observed = mutual_information_score(x, y)
        null = [mutual_information_score(x, rng.permutation(y)) for _ in range(40)]
        assert observed <= np.quantile(null, 0.95)

    def test_constant_feature(self):
        assert mutual_information_score(np.ones(50), np.r_[np.zeros(25), np.ones(25)]) == 0.0

    def test_single_class(self):
        assert mutual_information_score(np.arange(5.0), np.ones(5)) == 0.0


class TestBootstrapRanking:
    def test_informative_feature_first(self):
        c = generate_synthetic_cohort(500, 5, "classification", [3, 0, 0, 0, 0], seed=0)
        ranking = bootstrap_rank_features(c, "hpv", "classification", n_bootstrap=10, seed=1)
        assert ranking.feature_names[0] == "f00"
        full = [mutual_information_score(c.X[:, j], c.labels("hpv")) for j in range(5)]
        assert int(np.argmax(full)) == 0

    def test_survival_feature_first(self):
        c = generate_synthetic_cohort(300, 4, "survival", [0, 1.5, 0, 0], censor_rate=0.3, seed=2)
        ranking = bootstrap_rank_features(c, "os", "survival", n_bootstrap=10)
        assert ranking.feature_names[0] == "f01"

    def test_constant_dropped(self):
        base = generate_synthetic_cohort(100, 2, "classification", [2, 0], seed=3)
        X = np.column_stack([base.X, np.full(100, 4.0)])
        c = base.with_features(X, ("f00", "f01", "k"))
        ranking = bootstrap_rank_features(c, "hpv", "classification", n_bootstrap=5)
        assert "k" not in ranking.feature_names

    def test_deterministic_and_normalised(self):
        c = generate_synthetic_cohort(120, 3, "classification", [1, 1, 0], seed=4)
        a = bootstrap_rank_features(c, "hpv", "classification", n_bootstrap=8, seed=9)
        b = bootstrap_rank_features(c, "hpv", "classification", n_bootstrap=8, seed=9)
        assert a.feature_names == b.feature_names
        np.testing.assert_array_equal(a.cumulative_scores, b.cumulative_scores)
        assert a.cumulative_scores.sum() == pytest.approx(8.0)

    def test_task_mismatch(self):
        c = generate_synthetic_cohort(50, 2, "classification", [1, 0], seed=5)
        with pytest.raises(DataError):
            bootstrap_rank_features(c, "hpv", "survival", n_bootstrap=2)

    def test_json_round_trip(self, tmp_path):
        r = FeatureRanking(("b", "a"), np.array([3.5, 1.25]))
        r.save(tmp_path / "r.json")
        back = FeatureRanking.load(tmp_path / "r.json")
        assert back.feature_names == ("b", "a")
        assert back.top(1) == ["b"]
        np.testing.assert_array_equal(back.cumulative_scores, r.cumulative_scores)


@settings(max_examples=40, deadline=None)
@given(arrays(np.int64, (10, 3), elements=st.integers(-40, 40), unique=True))
def test_spearman_invariant_under_monotone_transform(grid):
    X = grid / 8.0  # well separated values so the transforms introduce no ties
    moved = X.copy()
    moved[:, 0] = np.exp(X[:, 0])
    moved[:, 1] = X[:, 1] ** 3 - 2.0
    np.testing.assert_allclose(spearman_matrix(moved), spearman_matrix(X), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 30, elements=st.floats(-10, 10)), st.lists(st.integers(0, 1), min_size=30, max_size=30))
def test_mutual_information_non_negative(x, y):
    assert mutual_information_score(x, np.array(y)) >= 0.0


def test_shuffled_mi_below_signal():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 2, 300)
    x = y + rng.standard_normal(300)
    signal = mutual_information_score(x, y)
    shuffled = [mutual_information_score(np.random.default_rng(s).permutation(x), y) for s in range(200)]
    assert np.mean(np.array(shuffled) < signal) >= 0.95
    assert np.median(shuffled) < 0.02


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["classification", "survival"]))
def test_ranking_scores_positive_non_increasing(seed, task):
    rng = np.random.default_rng(seed)
    c = generate_synthetic_cohort(60, 4, task, rng.normal(0, 1, 4), censor_rate=0.3, seed=seed)
    endpoint = "hpv" if task == "classification" else "os"
    ranking = bootstrap_rank_features(c, endpoint, task, n_bootstrap=3, seed=seed)
    s = ranking.cumulative_scores
    assert np.all(s > 0)
    assert np.all(np.diff(s) <= 0)
