import numpy as np
import pytest
from hypothesis import given, strategies as st

from voicepath.errors import FormatError, ParameterError, ShapeError, TooShortError
from voicepath.models import (
    TABLE_KINDS, ModelConfig, ModelKind, NeuralModel, SequenceData, SVMModel, build, load_model,
    model_from_bytes, pool_dataset, pool_for_svm, save_model,
)
from voicepath.nn.network import dump_container

NEURAL = [k for k in ModelKind if k != ModelKind.SVM]


def toy_data(n=12, T=16, F=8, seed=0, n_exp=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, T, F)) + y[:, None, None] * 1.5
    mask = np.ones((n, T))
    mask[::3, T - 4 :] = 0
    X[mask == 0] = 0
    return SequenceData(X, mask, y, [f"f{i}" for i in range(F)], n_exp, [f"c{i}" for i in range(n)])


class TestParameterCounts:
    def test_simple_rnn_89(self):
        # one bias vector per recurrent cell, as in the LSTM count below
        m = build(ModelConfig(ModelKind.SimpleRNN, hidden_units=64), (50, 89))
        assert m.n_params == 64 * 89 + 64 * 64 + 64 + (64 + 1) == 9921

    def test_lstm_recurrent_89(self):
        m = build(ModelConfig(ModelKind.LSTM, hidden_units=64), (50, 89))
        recurrent = sum(v.size for k, v in m.net.named_params().items() if k.startswith("0."))
        assert recurrent == 4 * (64 * 89 + 64 * 64 + 64)

    def test_attention_adds_scoring_params(self):
        a = build(ModelConfig(ModelKind.RNNAttention, hidden_units=64), (50, 89)).n_params
        assert a == 9921 + 64 * 64 + 64 + 64

    def test_cnn_count(self):
        m = build(ModelConfig(ModelKind.CNN), (48, 89))
        conv = (16 * 9 + 16) + (32 * 16 * 9 + 32)
        bn = 2 * 16 + 2 * 32
        head = 32 * (48 // 4) * (89 // 4) + 1
        assert m.n_params == conv + bn + head

    def test_config_determines_count(self):
        a = build(ModelConfig(ModelKind.LSTM, hidden_units=7, seed=1), (10, 5)).n_params
        b = build(ModelConfig(ModelKind.LSTM, hidden_units=7, seed=2), (10, 5)).n_params
        assert a == b


class TestBuild:
    @pytest.mark.parametrize("kind", NEURAL)
    def test_same_seed_same_init(self, kind):
        cfg = ModelConfig(kind, hidden_units=8, conv_filters=(4, 8), seed=3)
        a, b = build(cfg, (16, 8)), build(cfg, (16, 8))
        for k, v in a.net.named_params().items():
            assert np.array_equal(v, b.net.named_params()[k])

    @pytest.mark.parametrize("kind, shape", [(ModelKind.CNN, (3, 89)), (ModelKind.CNN, (40, 3)),
                                             (ModelKind.HybridCNNLSTM, (1, 89))])
    def test_too_small_for_pooling(self, kind, shape):
        with pytest.raises(ShapeError):
            build(ModelConfig(kind), shape)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            ModelConfig(hidden_units=0)
        with pytest.raises(ParameterError):
            ModelConfig(dropout=1.0)
        with pytest.raises(ValueError):
            ModelConfig(kind="Transformer")

    def test_config_round_trip(self):
        cfg = ModelConfig(ModelKind.CNN, conv_filters=(8,), lr=0.01)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ParameterError):
            ModelConfig.from_dict({"layers": 3})

    @pytest.mark.parametrize("kind", NEURAL)
    def test_probabilities_in_open_interval(self, kind):
        m = build(ModelConfig(kind, hidden_units=8, conv_filters=(4, 8)), (16, 8))
        p = m.predict_proba(toy_data())
        assert p.shape == (12,) and np.all((p > 0) & (p < 1))

    def test_training_deterministic(self):
        data = toy_data()
        out = []
        for _ in range(2):
            m = build(ModelConfig(ModelKind.LSTMAttention, hidden_units=8, seed=5), (16, 8))
            for b in range(3):
                m.train_batch(data.X, data.mask, data.y, seed=b)
            out.append(m.predict_proba(data))
        assert np.array_equal(out[0], out[1])


class TestPooling:
    def test_constant_column(self):
        f = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        v = pool_for_svm(f)
        assert v[0] == 3.0 and v[2] == 0.0
        assert v[3] == pytest.approx(np.arange(10.0).std())

    def test_length_with_exponents(self):
        f = np.random.default_rng(0).standard_normal((20, 91))
        assert pool_for_svm(f, n_exponents=2).size == 180

    def test_exponents_passed_through(self):
        f = np.random.default_rng(0).standard_normal((20, 5))
        f[:, 3:] = [0.7, 1.1]
        assert pool_for_svm(f, n_exponents=2)[-2:].tolist() == [0.7, 1.1]

    @given(st.integers(0, 10**6))
    def test_frame_order_invariant(self, seed):
        r = np.random.default_rng(seed)
        f = r.standard_normal((12, 4))
        np.testing.assert_allclose(pool_for_svm(f), pool_for_svm(f[r.permutation(12)]), atol=1e-12)

    def test_mask_ignores_padding(self):
        f = np.random.default_rng(0).standard_normal((10, 3))
        padded = np.vstack([f, np.zeros((5, 3))])
        mask = np.r_[np.ones(10), np.zeros(5)]
        np.testing.assert_allclose(pool_for_svm(padded, mask=mask), pool_for_svm(f))

    def test_too_few_frames(self):
        with pytest.raises(TooShortError):
            pool_for_svm(np.zeros((1, 4)))

    def test_dataset(self):
        assert pool_dataset(toy_data(F=6)).shape == (12, 12)


class TestSerialization:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_round_trip_bit_exact(self, kind, tmp_path):
        data = toy_data(n_exp=0)
        m = build(ModelConfig(kind, hidden_units=6, conv_filters=(3, 4), seed=2), (16, 8))
        if kind == ModelKind.SVM:
            m.fit(data)
        else:
            m.train_batch(data.X, data.mask, data.y, seed=0)
        save_model(tmp_path / "m.vptn", m)
        back = load_model(tmp_path / "m.vptn")
        assert back.kind == kind
        assert back.to_bytes() == m.to_bytes()
        assert np.array_equal(back.predict_proba(data), m.predict_proba(data))

    def test_missing_layers(self):
        blob = dump_container({"model_kind": "LSTM", "config": ModelConfig().to_dict()}, {})
        with pytest.raises(FormatError):
            model_from_bytes(blob)


class TestSVMModel:
    def test_threshold_matches_margin_sign(self):
        data = toy_data()
        m = build(ModelConfig(ModelKind.SVM), (16, 8)).fit(data)
        margin = m.decision_function(data)
        assert np.array_equal(m.predict_proba(data) >= 0.5, margin >= 0)

    def test_default_gamma_is_inverse_width(self):
        m = build(ModelConfig(ModelKind.SVM), (16, 8)).fit(toy_data())
        assert m.solution.gamma == pytest.approx(1 / 16)


def test_table_kinds_order():
    assert [k.value for k in TABLE_KINDS] == ["SimpleRNN", "RNNAttention", "LSTM", "LSTMAttention", "SVM", "CNN"]
    assert isinstance(build(ModelConfig(ModelKind.SVM), (4, 4)), SVMModel)
    assert isinstance(build(ModelConfig(ModelKind.LSTM), (4, 4)), NeuralModel)
