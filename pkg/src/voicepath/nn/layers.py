"""Layers with hand-written forward and backward passes.

Conventions: sequences are ``(batch, time, features)`` with an optional
``(batch, time)`` validity mask carried in the forward context; images are
``(batch, channels, height, width)``. Every layer caches what its backward
pass needs during a train-mode forward.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import DegenerateInputError, ParameterError, ShapeError, StateError

LAYER_KINDS = (
    "Dense", "SimpleRNNCell", "LSTMCell", "AdditiveAttention", "Conv2D",
    "MaxPool2D", "Dropout", "BatchNorm", "Flatten", "SigmoidHead",
)
ACTIVATIONS = (None, "relu", "tanh")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    filters: int = 0
    kernel: tuple = (3, 3)
    pool: tuple = (2, 2)
    rate: float = 0.0
    momentum: float = 0.9
    activation: str = None
    return_sequences: bool = False
    keep_time: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("Dense", "SimpleRNNCell", "LSTMCell", "AdditiveAttention") and self.units < 1:
            raise ParameterError(f"{self.kind} needs units >= 1")
        if self.kind == "Conv2D" and (self.filters < 1 or min(self.kernel) < 1):
            raise ParameterError("Conv2D needs filters >= 1 and kernel dims >= 1")
        if self.kind == "MaxPool2D" and min(self.pool) < 1:
            raise ParameterError("pool dims must be >= 1")
        if not 0.0 <= self.rate < 1.0:
            raise ParameterError(f"drop rate must lie in [0, 1), got {self.rate}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "pool", tuple(int(k) for k in self.pool))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["pool"] = list(self.pool)
        return d

    @classmethod
    def from_dict(cls, d) -> "LayerSpec":
        d = dict(d)
        d["kernel"] = tuple(d.get("kernel", (3, 3)))
        d["pool"] = tuple(d.get("pool", (2, 2)))
        return cls(**d)


@dataclass
class Context:
    train: bool = False
    rng: np.random.Generator = None
    mask: np.ndarray = None


def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(kind, z, y, dy):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    return dy


def _uniform(rng, fan_in, shape):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None
        self.skip_input_grad = False  # set on a first layer whose input needs no gradient

    @property
    def kind(self) -> str:
        return self.spec.kind

    def build(self, in_shape, rng) -> tuple:
        """Allocate parameters for per-example input shape ``in_shape``; return output shape."""
        return in_shape

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a train-mode forward")
        return self._cache

    def forward(self, x, ctx: Context):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Dense(Layer):
    def build(self, in_shape, rng):
        d = in_shape[-1]
        self.params = {"W": _uniform(rng, d, (d, self.spec.units)), "b": np.zeros(self.spec.units)}
        return in_shape[:-1] + (self.spec.units,)

    def forward(self, x, ctx):
        z = x @ self.params["W"] + self.params["b"]
        y = _act(self.spec.activation, z)
        self._cache = (x, z, y) if ctx.train else None
        return y

    def backward(self, dy):
        x, z, y = self._need_cache()
        dz = _act_grad(self.spec.activation, z, y, dy)
        d = x.shape[-1]
        self.grads = {
            "W": x.reshape(-1, d).T @ dz.reshape(-1, dz.shape[-1]),
            "b": dz.reshape(-1, dz.shape[-1]).sum(axis=0),
        }
        return dz @ self.params["W"].T


class SigmoidHead(Layer):
    """Single linear unit followed by the logistic function; outputs ``(batch,)``."""

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ShapeError(f"SigmoidHead expects flat per-example input, got {in_shape}")
        d = in_shape[0]
        self.params = {"W": _uniform(rng, d, (d, 1)), "b": np.zeros(1)}
        return ()

    def forward(self, x, ctx):
        p = sigmoid(x @ self.params["W"][:, 0] + self.params["b"][0])
        self._cache = (x, p) if ctx.train else None
        return p

    def backward(self, dp):
        x, p = self._need_cache()
        dz = dp * p * (1.0 - p)
        self.grads = {"W": (x.T @ dz)[:, None], "b": np.array([dz.sum()])}
        return np.outer(dz, self.params["W"][:, 0])


def _step_mask(ctx, B, T):
    if ctx.mask is None:
        return np.ones((B, T))
    if ctx.mask.shape != (B, T):
        raise ShapeError(f"mask shape {ctx.mask.shape} does not match sequence ({B}, {T})")
    return ctx.mask.astype(np.float64)


class SimpleRNNCell(Layer):
    """Elman recurrence ``h_t = tanh(x_t W + h_{t-1} U + b)``; padded steps carry h."""

    def build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeError(f"SimpleRNNCell expects (time, features), got {in_shape}")
        T, d = in_shape
        H = self.spec.units
        self.params = {
            "W": _uniform(rng, d, (d, H)),
            "U": _uniform(rng, H, (H, H)),
            "b": np.zeros(H),
        }
        return (T, H) if self.spec.return_sequences else (H,)

    def forward(self, x, ctx):
        B, T, _ = x.shape
        H = self.spec.units
        m = _step_mask(ctx, B, T)[:, :, None]
        xw = x @ self.params["W"] + self.params["b"]
        U = self.params["U"]
        hs = np.zeros((B, T + 1, H))
        cand = np.empty((B, T, H))
        for t in range(T):
            cand[:, t] = np.tanh(xw[:, t] + hs[:, t] @ U)
            hs[:, t + 1] = m[:, t] * cand[:, t] + (1.0 - m[:, t]) * hs[:, t]
        self._cache = (x, m, hs, cand) if ctx.train else None
        return hs[:, 1:] if self.spec.return_sequences else hs[:, -1]

    def backward(self, dy):
        x, m, hs, cand = self._need_cache()
        B, T, d = x.shape
        U = self.params["U"]
        if self.spec.return_sequences:
            d_out = dy
        else:
            d_out = np.zeros((B, T, U.shape[0]))
            d_out[:, -1] = dy
        da = np.empty_like(cand)
        dh = np.zeros((B, U.shape[0]))
        for t in range(T - 1, -1, -1):
            dh = dh + d_out[:, t]
            da[:, t] = m[:, t] * dh * (1.0 - cand[:, t] ** 2)
            dh = da[:, t] @ U.T + (1.0 - m[:, t]) * dh
        flat_da = da.reshape(-1, da.shape[-1])
        self.grads = {
            "W": x.reshape(-1, d).T @ flat_da,
            "U": hs[:, :-1].reshape(-1, hs.shape[-1]).T @ flat_da,
            "b": flat_da.sum(axis=0),
        }
        return da @ self.params["W"].T


class LSTMCell(Layer):
    """LSTM with gate order (input, forget, cell, output); forget bias starts at 1."""

    def build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeError(f"LSTMCell expects (time, features), got {in_shape}")
        T, d = in_shape
        H = self.spec.units
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        self.params = {
            "W": _uniform(rng, d, (d, 4 * H)),
            "U": _uniform(rng, H, (H, 4 * H)),
            "b": b,
        }
        return (T, H) if self.spec.return_sequences else (H,)

    def forward(self, x, ctx):
        B, T, _ = x.shape
        H = self.spec.units
        m = _step_mask(ctx, B, T)[:, :, None]
        xw = x @ self.params["W"] + self.params["b"]
        U = self.params["U"]
        hs = np.zeros((B, T + 1, H))
        cs = np.zeros((B, T + 1, H))
        gates = np.empty((B, T, 4 * H))
        tc = np.empty((B, T, H))
        for t in range(T):
            z = xw[:, t] + hs[:, t] @ U
            g = gates[:, t]
            g[:, : 2 * H] = sigmoid(z[:, : 2 * H])
            g[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            g[:, 3 * H :] = sigmoid(z[:, 3 * H :])
            i, f, c_hat, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
            c_new = f * cs[:, t] + i * c_hat
            tc[:, t] = np.tanh(c_new)
            h_new = o * tc[:, t]
            cs[:, t + 1] = m[:, t] * c_new + (1.0 - m[:, t]) * cs[:, t]
            hs[:, t + 1] = m[:, t] * h_new + (1.0 - m[:, t]) * hs[:, t]
        self._cache = (x, m, hs, cs, gates, tc) if ctx.train else None
        return hs[:, 1:] if self.spec.return_sequences else hs[:, -1]

    def backward(self, dy):
        x, m, hs, cs, gates, tc = self._need_cache()
        B, T, d = x.shape
        H = self.spec.units
        U = self.params["U"]
        if self.spec.return_sequences:
            d_out = dy
        else:
            d_out = np.zeros((B, T, H))
            d_out[:, -1] = dy
        dz = np.empty((B, T, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            mt = m[:, t]
            dh = dh + d_out[:, t]
            g = gates[:, t]
            i, f, c_hat, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
            dh_new = mt * dh
            dc_new = mt * dc + dh_new * o * (1.0 - tc[:, t] ** 2)
            dzt = dz[:, t]
            dzt[:, :H] = dc_new * c_hat * i * (1.0 - i)
            dzt[:, H : 2 * H] = dc_new * cs[:, t] * f * (1.0 - f)
            dzt[:, 2 * H : 3 * H] = dc_new * i * (1.0 - c_hat**2)
            dzt[:, 3 * H :] = dh_new * tc[:, t] * o * (1.0 - o)
            dh = dzt @ U.T + (1.0 - mt) * dh
            dc = dc_new * f + (1.0 - mt) * dc
        flat = dz.reshape(-1, 4 * H)
        self.grads = {
            "W": x.reshape(-1, d).T @ flat,
            "U": hs[:, :-1].reshape(-1, H).T @ flat,
            "b": flat.sum(axis=0),
        }
        return dz @ self.params["W"].T


class AdditiveAttention(Layer):
    """Scores ``e_t = v . tanh(h_t W + b)``, masked softmax over time, and
    context ``sum_t a_t h_t``. The last weights are kept in ``weights``."""

    def build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ShapeError(f"AdditiveAttention expects (time, hidden), got {in_shape}")
        T, Hd = in_shape
        A = self.spec.units
        self.params = {
            "W": _uniform(rng, Hd, (Hd, A)),
            "b": np.zeros(A),
            "v": _uniform(rng, A, (A,)),
        }
        self.weights = None
        return (Hd,)

    def forward(self, x, ctx):
        B, T, _ = x.shape
        m = _step_mask(ctx, B, T)
        u = np.tanh(x @ self.params["W"] + self.params["b"])
        e = u @ self.params["v"]
        e = np.where(m > 0, e, -np.inf)
        e_max = np.max(e, axis=1, keepdims=True)
        w = np.exp(e - e_max)
        w /= w.sum(axis=1, keepdims=True)
        self.weights = w
        out = np.einsum("bt,bth->bh", w, x)
        self._cache = (x, u, w) if ctx.train else None
        return out

    def backward(self, dy):
        x, u, w = self._need_cache()
        dw = np.einsum("bh,bth->bt", dy, x)
        dx = w[:, :, None] * dy[:, None, :]
        de = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
        du = de[:, :, None] * self.params["v"]
        da = du * (1.0 - u * u)
        Hd = x.shape[-1]
        self.grads = {
            "W": x.reshape(-1, Hd).T @ da.reshape(-1, da.shape[-1]),
            "b": da.reshape(-1, da.shape[-1]).sum(axis=0),
            "v": np.einsum("bta,bt->a", u, de),
        }
        return dx + da @ self.params["W"].T


def attention_pool(hidden_states, W, b, v):
    """Single-sequence additive attention: returns ``(context, weights)``."""
    h = np.asarray(hidden_states, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ShapeError("hidden_states must be (T, H) with T >= 1")
    layer = AdditiveAttention(LayerSpec("AdditiveAttention", units=len(v)))
    layer.params = {"W": np.asarray(W, float), "b": np.asarray(b, float), "v": np.asarray(v, float)}
    ctx_vec = layer.forward(h[None], Context())
    return ctx_vec[0], layer.weights[0]


class Conv2D(Layer):
    """Stride-1 'same' convolution via im2col."""

    def build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2D expects (channels, height, width), got {in_shape}")
        C, Hh, Ww = in_shape
        kh, kw = self.spec.kernel
        F = self.spec.filters
        self.params = {"W": _uniform(rng, C * kh * kw, (F, C, kh, kw)), "b": np.zeros(F)}
        return (F, Hh, Ww)

    def _cols(self, x):
        kh, kw = self.spec.kernel
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xp = np.pad(x, ((0, 0), (0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        B, C, Hh, Ww = x.shape
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Hh * Ww, C * kh * kw)

    def forward(self, x, ctx):
        B, C, Hh, Ww = x.shape
        F = self.spec.filters
        cols = self._cols(x)
        z = cols @ self.params["W"].reshape(F, -1).T + self.params["b"]
        z = z.reshape(B, Hh, Ww, F).transpose(0, 3, 1, 2)
        y = _act(self.spec.activation, z)
        self._cache = (x.shape, cols, z, y) if ctx.train else None
        return y

    def backward(self, dy):
        shape, cols, z, y = self._need_cache()
        B, C, Hh, Ww = shape
        F = self.spec.filters
        kh, kw = self.spec.kernel
        dz = _act_grad(self.spec.activation, z, y, dy).transpose(0, 2, 3, 1).reshape(-1, F)
        Wm = self.params["W"].reshape(F, -1)
        self.grads = {"W": (dz.T @ cols).reshape(self.params["W"].shape), "b": dz.sum(axis=0)}
        if self.skip_input_grad:
            return None
        # col2im: one contiguous copy, then kh*kw shifted accumulations
        dcols = np.ascontiguousarray((dz @ Wm).reshape(B, Hh, Ww, C, kh * kw).transpose(4, 0, 3, 1, 2))
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        dxp = np.zeros((B, C, Hh + kh - 1, Ww + kw - 1))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + Hh, j : j + Ww] += dcols[i * kw + j]
        return dxp[:, :, ph : ph + Hh, pw : pw + Ww]


class MaxPool2D(Layer):
    """Non-overlapping max pooling; also downsamples the time mask (axis 2)."""

    def build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2D expects (channels, height, width), got {in_shape}")
        C, Hh, Ww = in_shape
        ph, pw = self.spec.pool
        if Hh < ph or Ww < pw:
            raise ShapeError(f"input {Hh}x{Ww} smaller than pool {ph}x{pw}")
        return (C, Hh // ph, Ww // pw)

    def forward(self, x, ctx):
        B, C, Hh, Ww = x.shape
        ph, pw = self.spec.pool
        Ho, Wo = Hh // ph, Ww // pw
        blocks = x[:, :, : Ho * ph, : Wo * pw].reshape(B, C, Ho, ph, Wo, pw)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
        idx = np.argmax(blocks, axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        if ctx.mask is not None:
            ctx.mask = ctx.mask[:, : Ho * ph].reshape(B, Ho, ph).max(axis=2)
        self._cache = (x.shape, idx) if ctx.train else None
        return y

    def backward(self, dy):
        shape, idx = self._need_cache()
        B, C, Hh, Ww = shape
        ph, pw = self.spec.pool
        Ho, Wo = Hh // ph, Ww // pw
        d = np.zeros((B, C, Ho, Wo, ph * pw))
        np.put_along_axis(d, idx[..., None], dy[..., None], axis=-1)
        d = d.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * ph, Wo * pw)
        dx = np.zeros(shape)
        dx[:, :, : Ho * ph, : Wo * pw] = d
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""

    def forward(self, x, ctx):
        rate = self.spec.rate
        if not ctx.train or rate == 0.0:
            self._cache = np.ones_like(x) if ctx.train else None
            return x
        if ctx.rng is None:
            raise StateError("train-mode dropout needs an RNG")
        keep = (ctx.rng.random(x.shape) >= rate) / (1.0 - rate)
        self._cache = keep
        return x * keep

    def backward(self, dy):
        return dy * self._need_cache()


class BatchNorm(Layer):
    """Normalizes the feature axis (last for vectors/sequences, 1 for images)."""

    EPS = 1e-5

    def build(self, in_shape, rng):
        n = in_shape[0] if len(in_shape) == 3 else in_shape[-1]
        self.params = {"gamma": np.ones(n), "beta": np.zeros(n)}
        self.buffers = {"running_mean": np.zeros(n), "running_var": np.ones(n)}
        return in_shape

    def _axes(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        return tuple(range(x.ndim - 1)), (-1,)

    def forward(self, x, ctx):
        axes, shp = self._axes(x)
        g = self.params["gamma"].reshape(shp)
        bta = self.params["beta"].reshape(shp)
        if not ctx.train:
            mu = self.buffers["running_mean"].reshape(shp)
            var = self.buffers["running_var"].reshape(shp)
            return g * (x - mu) / np.sqrt(var + self.EPS) + bta
        if x.shape[0] < 2:
            raise DegenerateInputError("batch norm in train mode needs batch size >= 2")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        mom = self.spec.momentum
        self.buffers["running_mean"] = mom * self.buffers["running_mean"] + (1 - mom) * mu
        self.buffers["running_var"] = mom * self.buffers["running_var"] + (1 - mom) * var
        inv = 1.0 / np.sqrt(var.reshape(shp) + self.EPS)
        xhat = (x - mu.reshape(shp)) * inv
        self._cache = (xhat, inv, axes, shp)
        return g * xhat + bta

    def backward(self, dy):
        xhat, inv, axes, shp = self._need_cache()
        n = np.prod([xhat.shape[a] for a in axes])
        self.grads = {"gamma": np.sum(dy * xhat, axis=axes), "beta": np.sum(dy, axis=axes)}
        dxhat = dy * self.params["gamma"].reshape(shp)
        return inv / n * (
            n * dxhat
            - np.sum(dxhat, axis=axes).reshape(shp)
            - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shp)
        )


class Flatten(Layer):
    """Flatten to ``(batch, -1)``, or with ``keep_time`` turn ``(B, C, T, F)``
    into the sequence ``(B, T, C * F)``."""

    def build(self, in_shape, rng):
        if self.spec.keep_time:
            if len(in_shape) != 3:
                raise ShapeError(f"Flatten(keep_time) expects (channels, time, features), got {in_shape}")
            C, T, F = in_shape
            return (T, C * F)
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        self._cache = x.shape if ctx.train else None
        if self.spec.keep_time:
            B, C, T, F = x.shape
            return x.transpose(0, 2, 1, 3).reshape(B, T, C * F)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        shape = self._need_cache()
        if self.spec.keep_time:
            B, C, T, F = shape
            return dy.reshape(B, T, C, F).transpose(0, 2, 1, 3)
        return dy.reshape(shape)


LAYER_CLASSES = {
    "Dense": Dense,
    "SimpleRNNCell": SimpleRNNCell,
    "LSTMCell": LSTMCell,
    "AdditiveAttention": AdditiveAttention,
    "Conv2D": Conv2D,
    "MaxPool2D": MaxPool2D,
    "Dropout": Dropout,
    "BatchNorm": BatchNorm,
    "Flatten": Flatten,
    "SigmoidHead": SigmoidHead,
}


def make_layer(spec: LayerSpec) -> Layer:
    return LAYER_CLASSES[spec.kind](spec)
