import numpy as np
import pytest

from bbsi.data import GroupedData, RandomSeed, resample
from bbsi.selectors import ModelId, SelectionError, SelectorOutput
from bbsi.training import (
    TrainingSet,
    balance,
    build_training_set,
    load_training_set,
    save_training_set,
)


class MeanSignSelector:
    """Selects winner(0) when the first group's mean is positive."""

    def run(self, data, rng, anchor=None):
        mean = data.groups[0].mean()
        return SelectorOutput(
            model=ModelId.winner(0 if mean > 0 else 1),
            basis=np.array([mean]),
            theta_hat=float(mean),
        )


class ConstantSelector:
    def run(self, data, rng, anchor=None):
        return SelectorOutput(model=ModelId.winner(0), basis=np.array([1.0]), theta_hat=0.0)


class FlakySelector:
    """Hard-errors whenever the resampled mean is negative."""

    def run(self, data, rng, anchor=None):
        mean = data.groups[0].mean()
        if mean < 0:
            raise SelectionError("no model")
        return SelectorOutput(model=ModelId.winner(0), basis=np.array([mean]), theta_hat=float(mean))


def observed_output(selector, data):
    return selector.run(data, RandomSeed(0))


class TestBuildTrainingSet:
    def test_constant_selector_gives_all_ones(self):
        data = GroupedData([[1.0, 2.0, 3.0]])
        sel = ConstantSelector()
        build = build_training_set(data, sel, observed_output(sel, data), 20, RandomSeed(1))
        assert build.training.counts == (0, 21)

    def test_zero_replicates_keeps_only_observed_row(self):
        data = GroupedData([[1.0, 2.0]])
        sel = ConstantSelector()
        build = build_training_set(data, sel, observed_output(sel, data), 0, RandomSeed(2))
        assert build.training.n_rows == 1
        assert build.training.labels.tolist() == [1]
        assert build.thetas.shape[0] == 0

    def test_label_fraction_matches_indicator_probability(self):
        # group centered exactly at zero: the resampled-mean sign flips
        # freely and the label-1 fraction estimates P(resampled mean > 0)
        gen = RandomSeed(3).generator()
        values = gen.standard_normal(40)
        values = values - values.mean() + 1e-9
        data = GroupedData([values])
        sel = MeanSignSelector()
        observed = observed_output(sel, data)
        assert observed.model == ModelId.winner(0)
        n_reps = 2000
        build = build_training_set(data, sel, observed, n_reps, RandomSeed(4))
        frac = build.labels.mean()
        signs = np.array([
            resample(data, RandomSeed(4).child(i, 0)).groups[0].mean() > 0
            for i in range(n_reps)
        ])
        assert frac == pytest.approx(signs.mean())
        assert abs(frac - 0.5) < 3.0 * np.sqrt(0.25 / n_reps) + 0.02

    def test_reproducible_and_labels_rerunnable(self):
        gen = RandomSeed(5).generator()
        data = GroupedData([gen.standard_normal(30)])
        sel = MeanSignSelector()
        observed = observed_output(sel, data)
        a = build_training_set(data, sel, observed, 50, RandomSeed(6))
        b = build_training_set(data, sel, observed, 50, RandomSeed(6))
        assert np.array_equal(a.training.x, b.training.x)
        assert np.array_equal(a.training.labels, b.training.labels)
        # rerunning the selector on the stored replicate reproduces the label
        for i in range(50):
            replicate = resample(data, RandomSeed(6).child(i, 0))
            out = sel.run(replicate, RandomSeed(6).child(i, 1), anchor=observed.model)
            assert (out.model == observed.model) == bool(a.labels[i])

    def test_hard_errors_skip_rows(self):
        gen = RandomSeed(7).generator()
        data = GroupedData([gen.standard_normal(5)])
        sel = FlakySelector()
        observed = SelectorOutput(model=ModelId.winner(0), basis=np.array([1.0]), theta_hat=1.0)
        build = build_training_set(data, sel, observed, 200, RandomSeed(8))
        assert build.skipped > 0
        assert build.training.n_rows == 200 - build.skipped + 1

    def test_vhat_centering_shifts_rows_and_observed(self):
        data = GroupedData([[1.0, 2.0, 3.0]])

        class MargSelector:
            def run(self, inner, rng, anchor=None):
                mean = inner.groups[0].mean()
                return SelectorOutput(
                    model=ModelId.winner(0),
                    basis=np.array([mean]),
                    theta_hat=float(mean),
                    vhat=np.array([0.25]),
                )

        sel = MargSelector()
        observed = sel.run(data, RandomSeed(0))
        build = build_training_set(data, sel, observed, 10, RandomSeed(9))
        assert np.allclose(build.training.x[:-1, 0], build.bases[:, 0] + 0.25)
        assert build.training.x[-1, 0] == pytest.approx(observed.basis[0] + 0.25)


class TestBalance:
    def make_set(self, ones, zeros):
        x = np.arange(ones + zeros, dtype=float).reshape(-1, 1)
        labels = np.array([1] * ones + [0] * zeros)
        return TrainingSet(x, labels)

    def test_balanced_set_unchanged(self):
        ts = self.make_set(50, 50)
        assert balance(ts) is ts

    def test_minority_duplicated_to_a_fifth(self):
        ts = balance(self.make_set(95, 5))
        zeros, ones = ts.counts
        assert ones == 95
        assert zeros / ts.n_rows >= 0.2
        # whole passes: the zero count is a multiple of the original five
        assert zeros % 5 == 0

    def test_above_ten_percent_not_touched(self):
        ts = self.make_set(85, 15)
        assert balance(ts) is ts

    def test_absent_class_warns_and_returns_unchanged(self):
        ts = self.make_set(100, 0)
        with pytest.warns(UserWarning):
            out = balance(ts)
        assert out is ts

    def test_duplicates_preserve_row_order(self):
        ts = balance(self.make_set(95, 5))
        minority_rows = ts.x[ts.labels == 0, 0]
        original = minority_rows[:5]
        for start in range(5, minority_rows.size, 5):
            assert np.array_equal(minority_rows[start : start + 5], original)


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        gen = RandomSeed(10).generator()
        ts = TrainingSet(gen.standard_normal((25, 3)), gen.integers(0, 2, 25))
        path = tmp_path / "train.csv"
        save_training_set(ts, path)
        header = path.read_text().splitlines()[0]
        assert header == "z_1,z_2,z_3,label"
        loaded = load_training_set(path)
        assert np.array_equal(loaded.x, ts.x)
        assert np.array_equal(loaded.labels, ts.labels)
