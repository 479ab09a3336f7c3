"""Layers with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward``. The
backward pass is parameterised by ``mode``:

``"sum"``
    accumulate batch-summed parameter gradients into ``self.grads``
``"per_example"``
    store gradients with a leading batch axis in ``self.grads``
``"sq_norm"``
    store each example's squared gradient norm (summed over this layer's
    parameters) in ``self.sq_norms`` without forming per-example tensors
``"none"``
    propagate the input gradient only

Input gradients are computed unless ``need_gx`` is false (first layer).
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

MODES = ("sum", "per_example", "sq_norm", "none")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def outer_sum_sq_norms(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Squared Frobenius norms of ``a[i].T @ g[i]`` for each example ``i``.

    ``a`` is (B, T, P) and ``g`` is (B, T, Q). When T is short relative to
    P*Q the Gram-matrix identity ``|A^T G|^2 = <A A^T, G G^T>`` avoids
    materialising the (B, P, Q) per-example gradient.
    """
    b, t, p = a.shape
    q = g.shape[2]
    if t * t * (p + q) < t * p * q:
        ga = a @ a.transpose(0, 2, 1)
        gg = g @ g.transpose(0, 2, 1)
        return np.einsum("bij,bij->b", ga, gg)
    full = np.einsum("btp,btq->bpq", a, g)
    return np.einsum("bpq,bpq->b", full, full)


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(B, C, L) -> (B, L_out, C * kernel). Works for float and uint64 arrays."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(x, kernel, axis=2)[:, :, ::stride]  # (B, C, L_out, k)
    b, c, lout, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, lout, c * k)


def col2im(cols: np.ndarray, channels: int, length: int, kernel: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add window gradients back to (B, C, L)."""
    b, lout, _ = cols.shape
    cols = cols.reshape(b, lout, channels, kernel).transpose(0, 2, 1, 3)
    out = np.zeros((b, channels, length + 2 * pad), dtype=cols.dtype)
    span = stride * (lout - 1) + 1
    for j in range(kernel):
        out[:, :, j : j + span : stride] += cols[:, :, :, j]
    if pad:
        out = out[:, :, pad:-pad]
    return out


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.sq_norms: np.ndarray | None = None
        self.name = self.kind

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray, mode: str = "sum", need_gx: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def _set_param_grads(self, mode: str, per_example: dict[str, tuple[np.ndarray, np.ndarray]]):
        """Finish a backward pass given per-parameter (activation, gradient) factor pairs.

        Each entry maps a parameter name to (a, g) such that example i's
        gradient for that parameter is ``a[i].T @ g[i]``; biases pass a=None
        and g of shape (B, T, Q).
        """
        if mode == "none":
            return
        if mode == "sq_norm":
            total = 0.0
            for a, g in per_example.values():
                if a is None:
                    s = g.sum(axis=1)
                    total = total + np.einsum("bq,bq->b", s, s)
                else:
                    total = total + outer_sum_sq_norms(a, g)
            self.sq_norms = total
            return
        for name, (a, g) in per_example.items():
            shape = self.params[name].shape
            if mode == "per_example":
                if a is None:
                    gr = g.sum(axis=1)
                else:
                    gr = np.einsum("btp,btq->bpq", a, g)
                self.grads[name] = gr.reshape((g.shape[0],) + self._grad_layout(name, shape))
                self.grads[name] = self._to_param_layout(name, self.grads[name], batched=True)
            else:
                if a is None:
                    gr = g.sum(axis=(0, 1))
                else:
                    b, t, p = a.shape
                    gr = a.reshape(b * t, p).T @ g.reshape(b * t, -1)
                gr = gr.reshape(self._grad_layout(name, shape))
                self.grads[name] = self._to_param_layout(name, gr, batched=False)

    def _grad_layout(self, name: str, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def _to_param_layout(self, name: str, g: np.ndarray, batched: bool) -> np.ndarray:
        return g


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = _uniform(rng, (in_features, out_features), in_features)
        self.params["bias"] = np.zeros(out_features)

    def output_shape(self, in_shape):
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"{self.name}: expected (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, gy, mode="sum", need_gx=True):
        x = self._x
        if mode == "sq_norm":
            # rank-one per-example gradient: |x_i g_i^T|^2 = |x_i|^2 |g_i|^2
            gg = np.einsum("bo,bo->b", gy, gy)
            self.sq_norms = np.einsum("bi,bi->b", x, x) * gg + gg
        elif mode == "per_example":
            self.grads["weight"] = np.einsum("bi,bo->bio", x, gy)
            self.grads["bias"] = gy.copy()
        elif mode == "sum":
            self.grads["weight"] = x.T @ gy
            self.grads["bias"] = gy.sum(axis=0)
        return gy @ self.params["weight"].T if need_gx else None


class Conv1D(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_channels * kernel
        self.params["weight"] = _uniform(rng, (out_channels, in_channels, kernel), fan_in)
        self.params["bias"] = np.zeros(out_channels)

    def out_length(self, length: int) -> int:
        return (length + 2 * self.pad - self.kernel) // self.stride + 1

    def output_shape(self, in_shape):
        return (self.out_channels, self.out_length(in_shape[1]))

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"{self.name}: expected (B, {self.in_channels}, L), got {x.shape}")
        self._in_len = x.shape[2]
        self._cols = im2col(x, self.kernel, self.stride, self.pad)
        wm = self.params["weight"].reshape(self.out_channels, -1)
        y = self._cols @ wm.T + self.params["bias"]
        return y.transpose(0, 2, 1)

    def _grad_layout(self, name, shape):
        if name == "weight":
            return (self.in_channels * self.kernel, self.out_channels)
        return shape

    def _to_param_layout(self, name, g, batched):
        if name != "weight":
            return g
        if batched:
            return np.ascontiguousarray(g.transpose(0, 2, 1)).reshape((g.shape[0],) + self.params["weight"].shape)
        return np.ascontiguousarray(g.T).reshape(self.params["weight"].shape)

    def backward(self, gy, mode="sum", need_gx=True):
        gyt = gy.transpose(0, 2, 1)  # (B, L_out, O)
        self._set_param_grads(mode, {"weight": (self._cols, gyt), "bias": (None, gyt)})
        if not need_gx:
            return None
        wm = self.params["weight"].reshape(self.out_channels, -1)
        gcols = gyt @ wm
        return col2im(gcols, self.in_channels, self._in_len, self.kernel, self.stride, self.pad)


class MaxPool1D(Layer):
    kind = "maxpool"

    def __init__(self, kernel, stride):
        super().__init__()
        self.kernel, self.stride = kernel, stride

    def out_length(self, length):
        return (length - self.kernel) // self.stride + 1

    def output_shape(self, in_shape):
        return (in_shape[0], self.out_length(in_shape[1]))

    def forward(self, x, train=False, rng=None):
        win = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride]
        self._arg = win.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, gy, mode="sum", need_gx=True):
        if not need_gx:
            return None
        gx = np.zeros(self._in_shape)
        lout = gy.shape[2]
        span = self.stride * (lout - 1) + 1
        for j in range(self.kernel):
            gx[:, :, j : j + span : self.stride] += np.where(self._arg == j, gy, 0.0)
        return gx


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy, mode="sum", need_gx=True):
        return np.where(self._mask, gy, 0.0) if need_gx else None


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        self.rate = rate

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._scale = None
            return x
        keep = 1.0 - self.rate
        self._scale = (rng.random(x.shape) < keep) / keep
        return x * self._scale

    def backward(self, gy, mode="sum", need_gx=True):
        if not need_gx:
            return None
        return gy if self._scale is None else gy * self._scale


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy, mode="sum", need_gx=True):
        return gy.reshape(self._in_shape) if need_gx else None


class GlobalAvgPool1D(Layer):
    kind = "gap"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x, train=False, rng=None):
        self._len = x.shape[2]
        return x.mean(axis=2)

    def backward(self, gy, mode="sum", need_gx=True):
        if not need_gx:
            return None
        return np.repeat(gy[:, :, None] / self._len, self._len, axis=2)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class BiLSTM(Layer):
    """Bidirectional LSTM over the length axis of (B, features, T) input.

    With ``return_sequences`` the output is (B, 2H, T), the forward and
    backward hidden states stacked on the feature axis; otherwise (B, 2H),
    the final state of each direction. Gate order is input, forget, cell,
    output.
    """

    kind = "bilstm"

    def __init__(self, in_features: int, hidden: int, return_sequences: bool, rng: np.random.Generator):
        super().__init__()
        self.in_features, self.hidden, self.return_sequences = in_features, hidden, return_sequences
        h = hidden
        for d in ("fw", "bw"):
            self.params[f"{d}_wx"] = _uniform(rng, (in_features, 4 * h), in_features)
            self.params[f"{d}_wh"] = _uniform(rng, (h, 4 * h), h)
            bias = np.zeros(4 * h)
            bias[h : 2 * h] = 1.0
            self.params[f"{d}_b"] = bias

    def output_shape(self, in_shape):
        if self.return_sequences:
            return (2 * self.hidden, in_shape[1])
        return (2 * self.hidden,)

    def _run(self, xs, d):
        wx, wh, b = self.params[f"{d}_wx"], self.params[f"{d}_wh"], self.params[f"{d}_b"]
        bsz, t_len, _ = xs.shape
        h_dim = self.hidden
        xw = xs @ wx + b
        hs = np.zeros((bsz, t_len + 1, h_dim))
        cs = np.zeros((bsz, t_len + 1, h_dim))
        gates = np.empty((bsz, t_len, 4 * h_dim))
        for t in range(t_len):
            z = xw[:, t] + hs[:, t] @ wh
            i = _sigmoid(z[:, :h_dim])
            f = _sigmoid(z[:, h_dim : 2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
            o = _sigmoid(z[:, 3 * h_dim :])
            cs[:, t + 1] = f * cs[:, t] + i * g
            hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
            gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        return hs, cs, gates

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"{self.name}: expected (B, {self.in_features}, T), got {x.shape}")
        xs = np.ascontiguousarray(x.transpose(0, 2, 1))
        self._xs = {"fw": xs, "bw": np.ascontiguousarray(xs[:, ::-1])}
        self._cache = {d: self._run(self._xs[d], d) for d in ("fw", "bw")}
        h_fw = self._cache["fw"][0][:, 1:]
        h_bw = self._cache["bw"][0][:, 1:][:, ::-1]
        if self.return_sequences:
            return np.concatenate([h_fw, h_bw], axis=2).transpose(0, 2, 1)
        return np.concatenate([h_fw[:, -1], h_bw[:, 0]], axis=1)

    def _bptt(self, dh_seq, d):
        hs, cs, gates = self._cache[d]
        wh = self.params[f"{d}_wh"]
        h_dim = self.hidden
        bsz, t_len, _ = dh_seq.shape
        dz = np.empty((bsz, t_len, 4 * h_dim))
        dh_next = np.zeros((bsz, h_dim))
        dc_next = np.zeros((bsz, h_dim))
        for t in reversed(range(t_len)):
            i = gates[:, t, :h_dim]
            f = gates[:, t, h_dim : 2 * h_dim]
            g = gates[:, t, 2 * h_dim : 3 * h_dim]
            o = gates[:, t, 3 * h_dim :]
            dh = dh_seq[:, t] + dh_next
            tc = np.tanh(cs[:, t + 1])
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:, t, :h_dim] = dc * g * i * (1.0 - i)
            dz[:, t, h_dim : 2 * h_dim] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, t, 2 * h_dim : 3 * h_dim] = dc * i * (1.0 - g * g)
            dz[:, t, 3 * h_dim :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz[:, t] @ wh.T
        return dz

    def backward(self, gy, mode="sum", need_gx=True):
        h = self.hidden
        if self.return_sequences:
            gseq = gy.transpose(0, 2, 1)  # (B, T, 2H)
            d_fw = gseq[:, :, :h]
            d_bw = gseq[:, ::-1, h:]
        else:
            t_len = self._xs["fw"].shape[1]
            d_fw = np.zeros((gy.shape[0], t_len, h))
            d_bw = np.zeros((gy.shape[0], t_len, h))
            d_fw[:, -1] = gy[:, :h]
            d_bw[:, -1] = gy[:, h:]
        factors = {}
        gx = None
        for d, dseq in (("fw", d_fw), ("bw", d_bw)):
            dz = self._bptt(np.ascontiguousarray(dseq), d)
            hs = self._cache[d][0]
            factors[f"{d}_wx"] = (self._xs[d], dz)
            factors[f"{d}_wh"] = (hs[:, :-1], dz)
            factors[f"{d}_b"] = (None, dz)
            if need_gx:
                dx = dz @ self.params[f"{d}_wx"].T
                if d == "bw":
                    dx = dx[:, ::-1]
                gx = dx if gx is None else gx + dx
        self._set_param_grads(mode, factors)
        return gx.transpose(0, 2, 1) if need_gx else None
