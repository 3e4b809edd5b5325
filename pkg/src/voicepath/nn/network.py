"""Sequential network, binary cross-entropy, Adam and the parameter container."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError, LabelError, NumericError, ShapeError, StateError
from .layers import Context, LayerSpec, make_layer

BCE_EPS = 1e-7


class Network:
    """A stack of layers ending in a ``SigmoidHead``.

    ``input_shape`` is the per-example shape, e.g. ``(T, F)`` for sequences.
    Convolutional stacks receive a singleton channel axis automatically.
    """

    def __init__(self, specs, input_shape, seed: int = 0):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.add_channel = bool(self.specs) and self.specs[0].kind == "Conv2D" and len(self.input_shape) == 2
        rng = np.random.default_rng(self.seed)
        shape = (1,) + self.input_shape if self.add_channel else self.input_shape
        self.layers = []
        for i, spec in enumerate(self.specs):
            layer = make_layer(spec)
            try:
                shape = layer.build(shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            self.layers.append(layer)
        self.output_shape = shape
        self._trained_forward = False

    # -- parameter access ---------------------------------------------------
    def named_params(self) -> dict:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.params.items()}

    def named_buffers(self) -> dict:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.buffers.items()}

    def set_param(self, name, value):
        i, k = name.split(".", 1)
        self.layers[int(i)].params[k] = np.asarray(value, dtype=np.float64)

    def set_buffer(self, name, value):
        i, k = name.split(".", 1)
        self.layers[int(i)].buffers[k] = np.asarray(value, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))

    def state(self) -> dict:
        """Deep copy of parameters and buffers (used for best-epoch restore)."""
        s = {f"p:{k}": v.copy() for k, v in self.named_params().items()}
        s.update({f"b:{k}": v.copy() for k, v in self.named_buffers().items()})
        return s

    def load_state(self, state: dict):
        for key, v in state.items():
            kind, name = key.split(":", 1)
            (self.set_param if kind == "p" else self.set_buffer)(name, v.copy())

    # -- passes -------------------------------------------------------------
    def forward(self, x, mask=None, train: bool = False, seed=None) -> np.ndarray:
        """Probabilities of class 1, shape ``(batch,)``.

        Eval mode consumes no randomness; train mode draws dropout masks from
        ``seed`` and caches activations for :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {x.shape[1:]} does not match network input {self.input_shape}")
        if self.add_channel:
            x = x[:, None]
        ctx = Context(train=train, rng=np.random.default_rng(seed) if train else None,
                      mask=None if mask is None else np.asarray(mask, dtype=np.float64))
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, ctx)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {i} ({layer.kind})")
        self._trained_forward = train
        return x

    def backward(self, dprob, input_grad: bool = True) -> dict:
        """Parameter gradients; ``input_grad=False`` lets a leading conv layer
        skip its (unused) input gradient."""
        if not self._trained_forward:
            raise StateError("backward requires the cache of a train-mode forward")
        d = np.asarray(dprob, dtype=np.float64)
        self.layers[0].skip_input_grad = not input_grad
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            d = layer.backward(d)
            for k, g in layer.grads.items():
                grads[f"{i}.{k}"] = g
        self.input_grad = None if d is None else (d[:, 0] if self.add_channel else d)
        # every parameter gets a gradient entry, zero for layers without params
        return {k: grads.get(k, np.zeros_like(v)) for k, v in self.named_params().items()}

    def predict_proba(self, x, mask=None, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size], None if mask is None else mask[i : i + batch_size])
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    # -- persistence --------------------------------------------------------
    def header(self) -> dict:
        return {
            "layers": [s.to_dict() for s in self.specs],
            "input_shape": list(self.input_shape),
            "seed": self.seed,
        }

    def arrays(self) -> dict:
        a = {f"p:{k}": v for k, v in self.named_params().items()}
        a.update({f"b:{k}": v for k, v in self.named_buffers().items()})
        return a

    @classmethod
    def from_container(cls, header, arrays) -> "Network":
        net = cls(header["layers"], header["input_shape"], header["seed"])
        net.load_state(arrays)
        return net


def bce_loss(pred, labels) -> tuple:
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("labels must be 0 or 1")
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p), dtype=np.float64)) / n
    grad = (p - y) / (p * (1.0 - p)) / n
    return loss, grad


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: OptimState) -> tuple:
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``;
    inputs are not modified."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k}")
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {params[k].shape}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = {}, {}, dict(params)
    for k, g in grads.items():
        m = b1 * state.m.get(k, np.zeros_like(g)) + (1 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(g)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p[k] = params[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, OptimState(state.lr, b1, b2, state.eps, t, new_m, new_v)


class Adam:
    """Stateful wrapper applying :func:`adam_step` to a network in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = OptimState(lr, beta1, beta2, eps)

    def step(self, net: Network, grads: dict):
        params = net.named_params()
        new, self.state = adam_step(params, grads, self.state)
        for k, v in new.items():
            net.set_param(k, v)


# ---------------------------------------------------------------------------
# Versioned binary container
# ---------------------------------------------------------------------------

MAGIC = b"VPTN"
FORMAT_VERSION = 1


def dump_container(header: dict, arrays: dict) -> bytes:
    """Serialize ``header`` (JSON) and named arrays (raw little-endian, C order)."""
    names = list(arrays)
    meta = dict(header)
    meta["format_version"] = FORMAT_VERSION
    meta["arrays"] = [
        {"name": n, "dtype": np.asarray(arrays[n]).dtype.newbyteorder("<").str, "shape": list(np.shape(arrays[n]))}
        for n in names
    ]
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(head)))
    buf.write(head)
    for n, spec in zip(names, meta["arrays"]):
        buf.write(np.ascontiguousarray(arrays[n], dtype=spec["dtype"]).tobytes())
    return buf.getvalue()


def load_container(data: bytes) -> tuple:
    if data[:4] != MAGIC:
        raise FormatError("not a model container (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"container version {version} not supported (expected {FORMAT_VERSION})")
    pos = 10
    meta = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for spec in meta.pop("arrays"):
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = n * dt.itemsize
        if pos + nbytes > len(data):
            raise FormatError(f"array {spec['name']} truncated")
        arrays[spec["name"]] = np.frombuffer(data[pos : pos + nbytes], dtype=dt).reshape(spec["shape"]).copy()
        pos += nbytes
    return meta, arrays
