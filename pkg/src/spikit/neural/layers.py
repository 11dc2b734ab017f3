"""Layers with hand-written forward/backward passes (NHWC layout).

Every layer exposes ``forward(x, train) -> (out, cache)`` and
``backward(cache, grad_out, need_param_grads) -> (grad_in, param_grads)``.
Caches are plain tuples owned by the caller, so a layer object holds only its
parameters and (for batch norm) running statistics.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("linear", "relu")

# im2col chunks are capped at this many elements
_CHUNK_ELEMS = 1 << 24


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def _check_activation(name: str) -> str:
    if name not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {name!r}")
    return name


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.trainable = True

    def output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def check_input(self, x: np.ndarray) -> None:
        pass

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, cache, grad_out, need_param_grads=True):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"type": self.kind}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        out = np.maximum(x, 0)
        return out, (out > 0,)

    def backward(self, cache, grad_out, need_param_grads=True):
        (mask,) = cache
        return grad_out * mask, {}


class Dense(Layer):
    """``y = x @ W + b`` with ``W`` of shape ``(in_dim, out_dim)``."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear", use_bias: bool = True,
                 rng=None, dtype=np.float32):
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ValueError("Dense dimensions must be positive")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = _check_activation(activation)
        self.use_bias = use_bias
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim, dtype)
        if use_bias:
            self.params["b"] = np.zeros(out_dim, dtype=dtype)

    def output_shape(self, input_shape):
        return (self.out_dim,)

    def check_input(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (batch, {self.in_dim}), got {x.shape}")

    def forward(self, x, train):
        z = x @ self.params["W"]
        if self.use_bias:
            z = z + self.params["b"]
        if self.activation == "relu":
            out = np.maximum(z, 0)
            return out, (x, out > 0)
        return z, (x, None)

    def backward(self, cache, grad_out, need_param_grads=True):
        x, mask = cache
        g = grad_out if mask is None else grad_out * mask
        grads = {}
        if need_param_grads:
            grads["W"] = x.T @ g
            if self.use_bias:
                grads["b"] = g.sum(axis=0)
        return g @ self.params["W"].T, grads

    def spec(self):
        return {"type": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "activation": self.activation, "use_bias": self.use_bias}


class BatchNorm(Layer):
    """Normalizes over every axis except the last (features / channels)."""

    kind = "batchnorm"

    def __init__(self, features: int, momentum: float = 0.99, epsilon: float = 1e-3, dtype=np.float32):
        super().__init__()
        if features < 1:
            raise ValueError("BatchNorm needs a positive feature count")
        if not 0 <= momentum < 1 or epsilon <= 0:
            raise ValueError("bad BatchNorm momentum/epsilon")
        self.features, self.momentum, self.epsilon = features, momentum, epsilon
        self.params["gamma"] = np.ones(features, dtype=dtype)
        self.params["beta"] = np.zeros(features, dtype=dtype)
        self.buffers["moving_mean"] = np.zeros(features, dtype=dtype)
        self.buffers["moving_var"] = np.ones(features, dtype=dtype)
        # updated while training even when the affine parameters are frozen
        self.update_stats = True

    def check_input(self, x):
        if x.shape[-1] != self.features:
            raise ValueError(f"expected {self.features} features on the last axis, got {x.shape}")

    def forward(self, x, train):
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if self.update_stats:
                m = self.momentum
                self.buffers["moving_mean"] = (m * self.buffers["moving_mean"] + (1 - m) * mean).astype(x.dtype)
                self.buffers["moving_var"] = (m * self.buffers["moving_var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.buffers["moving_mean"], self.buffers["moving_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        return xhat * gamma + beta, (xhat, inv_std, train)

    def backward(self, cache, grad_out, need_param_grads=True):
        xhat, inv_std, train = cache
        axes = tuple(range(grad_out.ndim - 1))
        gamma = self.params["gamma"]
        grads = {}
        if need_param_grads:
            grads["gamma"] = (grad_out * xhat).sum(axis=axes)
            grads["beta"] = grad_out.sum(axis=axes)
        dxhat = grad_out * gamma
        if not train:
            return dxhat * inv_std, grads
        m = grad_out.size // grad_out.shape[-1]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads

    def spec(self):
        return {"type": self.kind, "features": self.features, "momentum": self.momentum, "epsilon": self.epsilon}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in self.shape):
            raise ValueError("Reshape target dimensions must be positive")

    def output_shape(self, input_shape):
        return self.shape

    def check_input(self, x):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {x.shape[1:]} to {self.shape}")

    def forward(self, x, train):
        return x.reshape((x.shape[0],) + self.shape), (x.shape,)

    def backward(self, cache, grad_out, need_param_grads=True):
        return grad_out.reshape(cache[0]), {}

    def spec(self):
        return {"type": self.kind, "shape": list(self.shape)}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train):
        return x.reshape(x.shape[0], -1), (x.shape,)

    def backward(self, cache, grad_out, need_param_grads=True):
        return grad_out.reshape(cache[0]), {}


class Conv2D(Layer):
    """Stride-1 'same' convolution (cross-correlation) on NHWC tensors.

    Weights have shape ``(kh, kw, in_channels, filters)``. Odd kernel sizes only.
    """

    kind = "conv2d"

    def __init__(self, kh: int, kw: int, in_channels: int, filters: int, activation: str = "relu",
                 rng=None, dtype=np.float32):
        super().__init__()
        if min(kh, kw, in_channels, filters) < 1:
            raise ValueError("Conv2D dimensions must be positive")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("only odd kernel sizes support 'same' padding")
        self.kh, self.kw, self.in_channels, self.filters = kh, kw, in_channels, filters
        self.activation = _check_activation(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = kh * kw * in_channels
        fan_out = kh * kw * filters
        self.params["W"] = glorot_uniform(rng, (kh, kw, in_channels, filters), fan_in, fan_out, dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)

    def output_shape(self, input_shape):
        h, w, _ = input_shape
        return (h, w, self.filters)

    def check_input(self, x):
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ValueError(f"expected (batch, H, W, {self.in_channels}), got {x.shape}")

    def _pad(self, x):
        ph, pw = self.kh // 2, self.kw // 2
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))

    def _cols(self, xp, H, W):
        if self.kh == 1 and self.kw == 1:
            return xp.reshape(-1, self.in_channels)
        win = sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))  # (b, H, W, C, kh, kw)
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, self.kh * self.kw * self.in_channels)

    def _chunk(self, batch, H, W):
        per_image = H * W * self.kh * self.kw * max(self.in_channels, self.filters)
        return max(1, min(batch, _CHUNK_ELEMS // max(per_image, 1)))

    def forward(self, x, train):
        B, H, W, _ = x.shape
        Wm = self.params["W"].reshape(-1, self.filters)
        xp = self._pad(x)
        out = np.empty((B, H, W, self.filters), dtype=np.result_type(x, Wm))
        step = self._chunk(B, H, W)
        for s in range(0, B, step):
            cols = self._cols(xp[s : s + step], H, W)
            out[s : s + step] = (cols @ Wm).reshape(-1, H, W, self.filters)
        out += self.params["b"]
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
            return out, (xp, out > 0)
        return out, (xp, None)

    def backward(self, cache, grad_out, need_param_grads=True):
        xp, mask = cache
        g = grad_out if mask is None else grad_out * mask
        B, H, W, F = g.shape
        kh, kw, C = self.kh, self.kw, self.in_channels
        Wm = self.params["W"].reshape(-1, F)
        dW = np.zeros_like(Wm) if need_param_grads else None
        step = self._chunk(B, H, W)
        ph, pw = kh // 2, kw // 2
        # narrow outputs: the input gradient is a 'same' conv of g with the
        # flipped, transposed kernel; wide outputs: scatter columns back (col2im)
        transposed = F <= C
        if transposed:
            flipped = self.params["W"][::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, C)
            gp = np.pad(g, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
            dx = np.empty((B, H, W, C), dtype=g.dtype)
        else:
            dxp = np.zeros_like(xp, dtype=g.dtype)
        for s in range(0, B, step):
            gs = g[s : s + step].reshape(-1, F)
            b = gs.shape[0] // (H * W)
            if need_param_grads:
                dW += self._cols(xp[s : s + step], H, W).T @ gs
            if transposed:
                win = sliding_window_view(gp[s : s + step], (kh, kw), axis=(1, 2))
                gcols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * F)
                dx[s : s + step] = (gcols @ flipped).reshape(b, H, W, C)
                continue
            dcols = (gs @ Wm.T).reshape(b, H, W, kh, kw, C)
            for i in range(kh):
                for j in range(kw):
                    dxp[s : s + step, i : i + H, j : j + W, :] += dcols[:, :, :, i, j, :]
        if not transposed:
            dx = dxp[:, ph : ph + H, pw : pw + W, :]
        grads = {}
        if need_param_grads:
            grads["W"] = dW.reshape(self.params["W"].shape)
            grads["b"] = g.sum(axis=(0, 1, 2))
        return np.ascontiguousarray(dx), grads

    def spec(self):
        return {"type": self.kind, "kh": self.kh, "kw": self.kw, "in_channels": self.in_channels,
                "filters": self.filters, "activation": self.activation}
