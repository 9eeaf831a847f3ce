from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypersurv.cohort import (
    BinaryOutcome,
    Cohort,
    DataError,
    PatientRecord,
    SurvivalOutcome,
    binarization_exclusions,
    binarize_survival,
    generate_synthetic_cohort,
    load_cohort,
    save_cohort,
)
from hypersurv.linmod import ElasticNetConfig, fit_cox_elasticnet

from oracles import newton_cox


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def csv_pair(tmp_path):
    feats = write(tmp_path / "f.csv", "patient_id,a,b\nP1,1.0,2.0\nP2,3.5,-1\nP3,0,0\n")
    ends = write(
        tmp_path / "e.csv",
        "patient_id,hpv_label,os_time,os_event\nP1,1,400,1\nP2,0,,\nP3,,900,0\n",
    )
    return feats, ends


class TestLoad:
    def test_parses(self, csv_pair):
        c = load_cohort(*csv_pair)
        assert len(c) == 3
        assert c.feature_names == ("a", "b")
        np.testing.assert_array_equal(c.X, [[1.0, 2.0], [3.5, -1.0], [0.0, 0.0]])
        assert c.patients[0].outcomes["os"] == SurvivalOutcome(400.0, True)
        assert c.patients[0].outcomes["hpv"] == BinaryOutcome(1)

    def test_empty_cells_mean_absent(self, csv_pair):
        c = load_cohort(*csv_pair)
        assert "os" not in c.patients[1].outcomes
        assert "hpv" not in c.patients[2].outcomes
        assert not c.has_endpoint("os")

    def test_duplicate_id(self, tmp_path, csv_pair):
        feats = write(tmp_path / "dup.csv", "patient_id,a\nP1,1\nP1,2\n")
        with pytest.raises(DataError, match="duplicate id P1"):
            load_cohort(feats, csv_pair[1])

    def test_non_numeric(self, tmp_path, csv_pair):
        feats = write(tmp_path / "bad.csv", "patient_id,a,b\nP1,1,x\n")
        with pytest.raises(DataError, match="column b"):
            load_cohort(feats, csv_pair[1])

    def test_half_survival_pair(self, tmp_path, csv_pair):
        ends = write(tmp_path / "e2.csv", "patient_id,os_time,os_event\nP1,400,\n")
        with pytest.raises(DataError, match="both time and event"):
            load_cohort(csv_pair[0], ends)

    def test_unknown_endpoint_id(self, tmp_path, csv_pair):
        ends = write(tmp_path / "e3.csv", "patient_id,hpv_label\nP9,1\n")
        with pytest.raises(DataError, match="P9"):
            load_cohort(csv_pair[0], ends)

    def test_missing_file(self, tmp_path, csv_pair):
        with pytest.raises(DataError, match="not found"):
            load_cohort(tmp_path / "nope.csv", csv_pair[1])

    def test_round_trip_exact(self, tmp_path):
        c = generate_synthetic_cohort(30, 4, "survival", [1, 0, 0, 0], censor_rate=0.3, seed=3)
        save_cohort(c, tmp_path / "f.csv", tmp_path / "e.csv")
        back = load_cohort(tmp_path / "f.csv", tmp_path / "e.csv")
        np.testing.assert_array_equal(back.X, c.X)
        assert back.ids == c.ids
        t0, e0 = c.survival("os")
        t1, e1 = back.survival("os")
        np.testing.assert_array_equal(t0, t1)
        np.testing.assert_array_equal(e0, e1)


class TestCohort:
    def test_features_read_only(self):
        c = generate_synthetic_cohort(5, 2, "classification", [0, 0], seed=0)
        with pytest.raises(ValueError):
            c.X[0, 0] = 1.0

    def test_select_and_subset(self):
        c = generate_synthetic_cohort(5, 3, "classification", [0, 0, 0], seed=0)
        s = c.select_features(["f02", "f00"]).subset([4, 0])
        np.testing.assert_array_equal(s.X, c.X[[4, 0]][:, [2, 0]])
        with pytest.raises(DataError):
            c.select_features(["zz"])

    def test_invalid_outcomes(self):
        with pytest.raises(DataError):
            SurvivalOutcome(-1.0, True)
        with pytest.raises(DataError):
            BinaryOutcome(2)
        with pytest.raises(DataError):
            PatientRecord("P", np.array([np.nan]))


class TestBinarize:
    def make(self):
        recs = [
            PatientRecord("A", np.zeros(1), {"os": SurvivalOutcome(400, True)}),
            PatientRecord("B", np.zeros(1), {"os": SurvivalOutcome(900, False)}),
            PatientRecord("C", np.zeros(1), {"os": SurvivalOutcome(500, False)}),
            PatientRecord("D", np.zeros(1), {"os": SurvivalOutcome(730, True)}),
            PatientRecord("E", np.zeros(1), {"os": SurvivalOutcome(730, False)}),
        ]
        return Cohort(tuple(recs), ("x",))

    def test_hand_examples(self):
        out = binarize_survival(self.make(), "os", 730)
        assert out.ids == ["A", "B", "D"]
        np.testing.assert_array_equal(out.labels("bin_os"), [1, 0, 1])
        assert binarization_exclusions(self.make(), "os", 730) == ["C", "E"]

    def test_bad_threshold(self):
        with pytest.raises(DataError):
            binarize_survival(self.make(), "os", 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 2000), st.booleans()), min_size=1, max_size=40), st.floats(1, 1500))
def test_binarized_has_no_early_censoring(rows, threshold):
    recs = tuple(
        PatientRecord(f"P{i}", np.zeros(1), {"os": SurvivalOutcome(t, e)}) for i, (t, e) in enumerate(rows)
    )
    out = binarize_survival(Cohort(recs, ("x",)), "os", threshold)
    t, e = out.survival("os")
    assert not np.any(~e & (t <= threshold))
    np.testing.assert_array_equal(out.labels("bin_os"), (e & (t <= threshold)).astype(int))


class TestSynthetic:
    def test_null_signal_balanced(self):
        c = generate_synthetic_cohort(1000, 3, "classification", [0, 0, 0], seed=11)
        frac = c.labels("hpv").mean()
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 1000)

    def test_deterministic(self):
        a = generate_synthetic_cohort(50, 3, "survival", [1, 0, 0], censor_rate=0.2, seed=4)
        b = generate_synthetic_cohort(50, 3, "survival", [1, 0, 0], censor_rate=0.2, seed=4)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.survival("os")[0], b.survival("os")[0])

    def test_censor_rate(self):
        c = generate_synthetic_cohort(4000, 2, "survival", [1, 0], censor_rate=0.3, seed=5)
        assert abs(1 - c.survival("os")[1].mean() - 0.3) < 0.03

    def test_survival_signal_recovered(self):
        c = generate_synthetic_cohort(500, 3, "survival", [2, 0, 0], censor_rate=0.2, seed=6)
        t, e = c.survival("os")
        assert newton_cox(c.X, t, e)[0] > 0
        fit = fit_cox_elasticnet(c.X, t, e, ElasticNetConfig(alpha=0.05))
        assert fit.coefficients[0] > 0
        assert np.all(np.abs(fit.coefficients[1:]) < abs(fit.coefficients[0]) / 4)

    @pytest.mark.parametrize(
        "kw", [{"n": 1}, {"signal": [1.0]}, {"censor_rate": 1.0}, {"task": "other"}]
    )
    def test_invalid(self, kw):
        args = {"n": 10, "p": 2, "task": "survival", "signal": [0.0, 0.0], **kw}
        with pytest.raises(DataError):
            generate_synthetic_cohort(**args)


def test_cohort_pickles():
    import pickle

    c = generate_synthetic_cohort(10, 2, "survival", [1, 0], censor_rate=0.2, seed=0)
    back = pickle.loads(pickle.dumps(c))
    assert back.ids == c.ids
    np.testing.assert_array_equal(back.X, c.X)
    assert back.patients[3].outcomes == c.patients[3].outcomes
