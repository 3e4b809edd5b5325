"""The classifier families compared in the study, behind one interface.

Every model consumes a :class:`SequenceData` batch (padded frames + mask)
and returns class-1 probabilities.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, ParameterError, ShapeError, TooShortError
from .nn.layers import LayerSpec, sigmoid
from .nn.network import Adam, Network, bce_loss, dump_container, load_container
from .svm import SVMSolution, smo_train


class ModelKind(str, enum.Enum):
    SimpleRNN = "SimpleRNN"
    RNNAttention = "RNNAttention"
    LSTM = "LSTM"
    LSTMAttention = "LSTMAttention"
    CNN = "CNN"
    HybridCNNLSTM = "HybridCNNLSTM"
    SVM = "SVM"


# the six models of the reference comparison table, in table order
TABLE_KINDS = (
    ModelKind.SimpleRNN, ModelKind.RNNAttention, ModelKind.LSTM,
    ModelKind.LSTMAttention, ModelKind.SVM, ModelKind.CNN,
)

DISPLAY_NAMES = {
    ModelKind.SimpleRNN: "Simple RNN",
    ModelKind.RNNAttention: "RNN + Attention",
    ModelKind.LSTM: "LSTM",
    ModelKind.LSTMAttention: "LSTM + Attention",
    ModelKind.CNN: "CNN",
    ModelKind.HybridCNNLSTM: "CNN + LSTM",
    ModelKind.SVM: "SVM",
}


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.SimpleRNN
    hidden_units: int = 64
    n_recurrent_layers: int = 1
    conv_filters: tuple = (16, 32)
    kernel: tuple = (3, 3)
    pool: tuple = (2, 2)
    dropout: float = 0.3
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 40
    patience: int = 5
    seed: int = 0
    svm_C: float = 1.0
    svm_kernel: str = "rbf"
    svm_gamma: float = 0.0  # 0 means 1 / n_features

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "pool", tuple(int(k) for k in self.pool))
        for name in ("hidden_units", "n_recurrent_layers", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.lr <= 0 or self.svm_C <= 0 or self.svm_gamma < 0:
            raise ParameterError("lr and svm_C must be positive, svm_gamma non-negative")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout must lie in [0, 1)")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise ParameterError("conv_filters must be a nonempty tuple of positive ints")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        for k in ("conv_filters", "kernel", "pool"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SequenceData:
    """Padded batch of per-clip feature sequences.

    ``X`` is ``(N, T, F)``; the last ``n_exponents`` columns hold clip-level
    scaling exponents broadcast over frames.
    """

    X: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    n_exponents: int = 0
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "SequenceData":
        idx = np.asarray(idx, dtype=int)
        ids = [self.ids[i] for i in idx] if self.ids else []
        return SequenceData(self.X[idx], self.mask[idx], self.y[idx], self.feature_names, self.n_exponents, ids)

    @property
    def input_shape(self) -> tuple:
        return self.X.shape[1:]


def pool_for_svm(features, n_exponents: int = 0, mask=None) -> np.ndarray:
    """Per-column mean and SD over valid frames, then the exponent values.

    ``features`` is ``(T, F)``; with ``n_exponents`` trailing exponent
    columns the result has length ``2 * (F - n_exponents) + n_exponents``.
    """
    f = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if mask is not None:
        f = f[np.asarray(mask) > 0]
    if f.shape[0] < 2:
        raise TooShortError(f"pooling needs >= 2 frames, got {f.shape[0]}")
    spec = f[:, : f.shape[1] - n_exponents] if n_exponents else f
    parts = [spec.mean(axis=0), spec.std(axis=0, ddof=0)]
    if n_exponents:
        parts.append(f[0, f.shape[1] - n_exponents :])
    return np.concatenate(parts)


def pool_dataset(data: SequenceData) -> np.ndarray:
    return np.vstack([pool_for_svm(x, data.n_exponents, m) for x, m in zip(data.X, data.mask)])


def layer_specs(config: ModelConfig) -> list:
    k = config.kind
    H = config.hidden_units
    S = LayerSpec
    if k in (ModelKind.SimpleRNN, ModelKind.RNNAttention, ModelKind.LSTM, ModelKind.LSTMAttention):
        cell = "LSTMCell" if k in (ModelKind.LSTM, ModelKind.LSTMAttention) else "SimpleRNNCell"
        attn = k in (ModelKind.RNNAttention, ModelKind.LSTMAttention)
        specs = []
        for i in range(config.n_recurrent_layers):
            last = i == config.n_recurrent_layers - 1
            specs.append(S(cell, units=H, return_sequences=attn or not last))
        if attn:
            specs.append(S("AdditiveAttention", units=H))
        return specs + [S("Dropout", rate=config.dropout), S("SigmoidHead")]
    if k == ModelKind.CNN:
        specs = []
        for f in config.conv_filters:
            specs += [
                S("Conv2D", filters=f, kernel=config.kernel, activation="relu"),
                S("BatchNorm"),
                S("MaxPool2D", pool=config.pool),
            ]
        return specs + [S("Flatten"), S("Dropout", rate=config.dropout), S("SigmoidHead")]
    if k == ModelKind.HybridCNNLSTM:
        return [
            S("Conv2D", filters=config.conv_filters[0], kernel=config.kernel, activation="relu"),
            S("BatchNorm"),
            S("MaxPool2D", pool=config.pool),
            S("Flatten", keep_time=True),
            S("LSTMCell", units=H),
            S("Dropout", rate=config.dropout),
            S("SigmoidHead"),
        ]
    raise ParameterError(f"{k} is not a neural model kind")


class NeuralModel:
    def __init__(self, config: ModelConfig, input_shape, net: Network = None):
        self.config = config
        self.kind = config.kind
        self.input_shape = tuple(input_shape)
        self.net = net if net is not None else Network(layer_specs(config), input_shape, seed=config.seed)
        self.optimizer = Adam(lr=config.lr)

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def predict_proba(self, data: SequenceData) -> np.ndarray:
        return self.net.predict_proba(data.X, data.mask)

    def train_batch(self, X, mask, y, seed) -> float:
        p = self.net.forward(X, mask, train=True, seed=seed)
        loss, dp = bce_loss(p, y)
        grads = self.net.backward(dp, input_grad=False)
        self.optimizer.step(self.net, grads)
        return loss

    def get_state(self):
        return self.net.state()

    def set_state(self, state):
        self.net.load_state(state)

    def to_bytes(self) -> bytes:
        header = {"model_kind": self.kind.value, "config": self.config.to_dict(), **self.net.header()}
        return dump_container(header, self.net.arrays())


class SVMModel:
    """RBF/linear SVM on time-pooled features."""

    def __init__(self, config: ModelConfig, input_shape, n_exponents: int = 0):
        self.config = config
        self.kind = ModelKind.SVM
        self.input_shape = tuple(input_shape)
        self.n_exponents = n_exponents
        self.solution: SVMSolution = None

    def fit(self, data: SequenceData) -> "SVMModel":
        V = pool_dataset(data)
        gamma = self.config.svm_gamma or 1.0 / V.shape[1]
        self.solution = smo_train(V, data.y, self.config.svm_C, self.config.svm_kernel, gamma)
        return self

    def decision_function(self, data: SequenceData) -> np.ndarray:
        if self.solution is None:
            raise DegenerateInputError("SVM used before fit")
        return self.solution.decision_function(pool_dataset(data))

    def predict_proba(self, data: SequenceData) -> np.ndarray:
        # logistic squashing of the margin: only the 0.5 threshold is meaningful
        return sigmoid(self.decision_function(data))

    def get_state(self):
        return self.solution

    def set_state(self, state):
        self.solution = state

    def to_bytes(self) -> bytes:
        s = self.solution
        header = {
            "model_kind": "SVM", "config": self.config.to_dict(), "input_shape": list(self.input_shape),
            "n_exponents": self.n_exponents, "bias": s.bias, "kernel": s.kernel, "gamma": s.gamma,
            "C": s.C, "n_iter": s.n_iter, "kkt_gap": s.kkt_gap, "seed": self.config.seed,
        }
        return dump_container(header, {"support_vectors": s.support_vectors, "dual_coef": s.dual_coef})


def build(config: ModelConfig, input_shape, n_exponents: int = 0):
    """Untrained model for per-example input ``(T, F)``."""
    T, F = input_shape
    if config.kind == ModelKind.SVM:
        return SVMModel(config, input_shape, n_exponents)
    if config.kind in (ModelKind.CNN, ModelKind.HybridCNNLSTM):
        n_pool = len(config.conv_filters) if config.kind == ModelKind.CNN else 1
        need_t, need_f = config.pool[0] ** n_pool, config.pool[1] ** n_pool
        if T < need_t or F < need_f:
            raise ShapeError(f"{config.kind.value} needs T >= {need_t} and F >= {need_f}, got ({T}, {F})")
    return NeuralModel(config, input_shape)


def model_from_bytes(data: bytes):
    header, arrays = load_container(data)
    config = ModelConfig.from_dict(header["config"])
    if header.get("model_kind") == "SVM":
        m = SVMModel(config, header["input_shape"], header["n_exponents"])
        m.solution = SVMSolution(
            arrays["support_vectors"], arrays["dual_coef"], header["bias"], header["kernel"],
            header["gamma"], header["C"], header["n_iter"], header["kkt_gap"],
        )
        return m
    if "layers" not in header:
        raise FormatError("container lacks layer specs")
    return NeuralModel(config, header["input_shape"], Network.from_container(header, arrays))


def save_model(path, model) -> None:
    Path(path).write_bytes(model.to_bytes())


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
