import numpy as np
import pytest

from voicepath.errors import DegenerateInputError, ParameterError
from voicepath.experiments.training import fit_model
from voicepath.explain import (
    Importance, family_groups, grouped_importance, importance_by_groups, permutation_importance,
    read_importance_csv, write_importance_csv,
)
from voicepath.models import ModelConfig, ModelKind, SequenceData, build
from voicepath.pipeline import feature_names

NAMES = feature_names()
F = len(NAMES)
BAND = NAMES.index("mel_06")


def band_corpus(n, seed, offset=0, T=20, shift=1.0):
    """Standard-normal frames; class 1 has ``mel_06`` raised by ``shift``
    in every frame and nothing else differs."""
    r = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = r.standard_normal((n, T, F))
    X[:, :, BAND] += shift * y[:, None]
    return SequenceData(X, np.ones((n, T)), y, NAMES, 2, [f"c{offset + i}" for i in range(n)])


@pytest.fixture(scope="module")
def trained():
    train, val, test = band_corpus(120, 0), band_corpus(40, 1, 1000), band_corpus(80, 2, 2000)
    res = fit_model(ModelConfig(ModelKind.SimpleRNN, hidden_units=16, seed=0), train, val)
    return res.model, test


class TestOracle:
    def test_band_six_ranks_first(self, trained):
        model, test = trained
        rows = permutation_importance(model, test, n_repeats=5, seed=0)
        assert rows[0].feature == "mel_06" and rows[0].rank == 1
        assert rows[0].mean > 0.2
        assert [r.rank for r in rows] == list(range(1, F + 1))
        assert all(a.mean >= b.mean for a, b in zip(rows, rows[1:]))

    def test_all_columns_permuted_gives_chance(self, trained):
        model, test = trained
        base = np.mean((model.predict_proba(test) >= 0.5) == test.y)
        row = importance_by_groups(model, test, {"all": list(range(F))}, n_repeats=20, seed=1)[0]
        assert base - row.mean == pytest.approx(0.5, abs=0.1)

    def test_seed_stability(self, trained):
        model, test = trained
        a = {r.feature: r for r in permutation_importance(model, test, n_repeats=10, seed=0)}
        b = {r.feature: r for r in permutation_importance(model, test, n_repeats=10, seed=99)}
        for f in NAMES:
            assert abs(a[f].mean - b[f].mean) <= 2 * max(a[f].sd, b[f].sd)

    def test_mel_family_dominates(self, trained):
        model, test = trained
        rows = grouped_importance(model, test, n_repeats=5)
        assert rows[0].feature == "mel"
        assert {r.feature for r in rows} == {"mel", "mfcc", "chroma", "exponents"}


class TestContract:
    def test_ignored_feature_scores_zero(self):
        data = band_corpus(30, 5)
        m = build(ModelConfig(ModelKind.SimpleRNN, hidden_units=8, seed=1), data.input_shape, 2)
        m.net.named_params()["0.W"][3] = 0.0
        row = importance_by_groups(m, data, {"c3": [3]}, n_repeats=5)[0]
        assert row.mean == 0.0 and row.sd == 0.0

    def test_deterministic(self, trained):
        model, test = trained
        groups = {"a": [BAND], "b": [0, 1]}
        assert importance_by_groups(model, test, groups, 4, 3) == importance_by_groups(model, test, groups, 4, 3)

    def test_order_independent(self, trained):
        model, test = trained
        a = importance_by_groups(model, test, {"x": [BAND], "y": [0]}, 3, 0)
        b = importance_by_groups(model, test, {"y": [0], "x": [BAND]}, 3, 0)
        assert {r.feature: r.mean for r in a} == {r.feature: r.mean for r in b}

    def test_whole_clip_swap_keeps_frames_together(self):
        class Spy:
            def predict_proba(self, data):
                self.X = data.X.copy()
                return np.full(len(data), 0.5)

        data = band_corpus(6, 0, T=4)
        spy = Spy()
        importance_by_groups(spy, data, {"g": [BAND]}, n_repeats=3)
        got = spy.X[:, :, BAND]
        for row in got:
            assert any(np.array_equal(row, data.X[j, :, BAND]) for j in range(6))
        np.testing.assert_array_equal(np.delete(spy.X, BAND, axis=2), np.delete(data.X, BAND, axis=2))

    def test_errors(self, trained):
        model, test = trained
        with pytest.raises(ParameterError):
            permutation_importance(model, test, n_repeats=2)
        with pytest.raises(DegenerateInputError):
            permutation_importance(model, test.subset([0]), n_repeats=3)
        with pytest.raises(ParameterError):
            permutation_importance(model, test, feature_names=["a"], n_repeats=3)

    def test_families(self):
        g = family_groups(NAMES)
        assert len(g["mel"]) == 64 and len(g["mfcc"]) == 13 and len(g["chroma"]) == 12 and g["exponents"] == [F - 2, F - 1]

    def test_csv_round_trip(self, tmp_path):
        rows = [Importance("mel_06", 1, 0.31, 0.02), Importance("mfcc_00", 2, 1 / 3, 0.0)]
        write_importance_csv(tmp_path / "i.csv", rows, "cfg abc")
        assert read_importance_csv(tmp_path / "i.csv") == rows
        assert (tmp_path / "i.csv").read_text().splitlines()[1] == "feature,rank,importance_mean,importance_sd"
