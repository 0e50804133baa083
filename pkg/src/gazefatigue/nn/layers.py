"""Minimal numpy layer library with hand-written backward passes.

Every layer caches what it needs during ``forward(x, train)`` and returns
the input gradient from ``backward(dout)``, accumulating parameter
gradients into ``self.grads``.  Tensors use the (batch, channels, time)
layout throughout.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def same_padding(kernel_size: int, dilation: int = 1) -> tuple[int, int]:
    """Left/right zero padding that keeps the temporal length unchanged.

    Even receptive fields put the extra element on the right.
    """
    total = dilation * (kernel_size - 1)
    left = total // 2
    return left, total - left


class Module:
    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def add(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.forward(x, train)

    def _walk(self, attr: str, prefix: str = "") -> Iterator[tuple[str, dict, str]]:
        for key in getattr(self, attr):
            yield prefix + key, getattr(self, attr), key
        for cname, child in self.children.items():
            yield from child._walk(attr, f"{prefix}{cname}.")

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, store, key in self._walk("params"):
            yield name, store[key]

    def named_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, store, key in self._walk("grads"):
            yield name, store[key]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, store, key in self._walk("buffers"):
            yield name, store[key]

    def set_array(self, dotted: str, value: np.ndarray, kind: str = "params") -> None:
        mod = self
        *path, key = dotted.split(".")
        for part in path:
            mod = mod.children[part]
        store = getattr(mod, kind)
        if store[key].shape != value.shape:
            raise ValueError(f"{dotted}: shape {value.shape} != {store[key].shape}")
        store[key] = value

    def zero_grad(self) -> None:
        self._zero()

    def _zero(self) -> None:
        for key, p in self.params.items():
            self.grads[key] = np.zeros_like(p)
        for child in self.children.values():
            child._zero()

    def astype(self, dtype) -> "Module":
        for key in self.params:
            self.params[key] = self.params[key].astype(dtype)
        for key in self.buffers:
            self.buffers[key] = self.buffers[key].astype(dtype)
        for child in self.children.values():
            child.astype(dtype)
        self._zero()
        return self


class Sequential(Module):
    """Chain of layers; pass ``(name, layer)`` pairs for readable parameter names."""

    def __init__(self, *layers) -> None:
        super().__init__()
        for i, layer in enumerate(layers):
            name, layer = layer if isinstance(layer, tuple) else (str(i), layer)
            self.add(name, layer)

    def forward(self, x, train=False):
        for layer in self.children.values():
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(list(self.children.values())):
            dout = layer.backward(dout)
        return dout


class Conv1d(Module):
    """1D convolution (cross-correlation) with dilation and zero padding.

    ``padding`` is ``"same"`` or a symmetric integer pad.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, dilation: int = 1,
                 padding: str | int = "same", bias: bool = True) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        if padding == "same":
            self.pad = same_padding(kernel_size, dilation)
        else:
            self.pad = (int(padding), int(padding))
        fan_in = in_channels * kernel_size
        self.params["weight"] = _uniform(rng, (out_channels, in_channels, kernel_size), fan_in)
        if bias:
            self.params["bias"] = _uniform(rng, (out_channels,), fan_in)
        self._zero()

    # im2col buffers above this many elements fall back to per-tap GEMMs
    IM2COL_LIMIT = 2 ** 25

    def forward(self, x, train=False):
        # Batch items are laid end to end along time as (C, B*Lp) so the whole
        # batch is one GEMM; outputs straddling two items are dropped.
        b, cin, n = x.shape
        if cin != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {cin}")
        left, right = self.pad
        k, dil = self.kernel_size, self.dilation
        span = dil * (k - 1)
        n_pad = n + left + right
        n_out = n_pad - span
        if n_out <= 0:
            raise ValueError("input shorter than the receptive field")
        xp = np.zeros((cin, b, n_pad), dtype=x.dtype)
        xp[:, :, left:left + n] = x.transpose(1, 0, 2)
        flat = xp.reshape(cin, b * n_pad)
        n_total = b * n_pad - span
        w = self.params["weight"]
        out = np.zeros((self.out_channels, b * n_pad), dtype=x.dtype)
        if k == 1:
            cols = flat
            out[:, :n_total] = w[:, :, 0] @ flat
            taps = None
        elif k * cin * n_total <= self.IM2COL_LIMIT:
            cols = np.empty((k, cin, n_total), dtype=x.dtype)
            for i in range(k):
                cols[i] = flat[:, i * dil:i * dil + n_total]
            cols = cols.reshape(k * cin, n_total)
            out[:, :n_total] = w.transpose(0, 2, 1).reshape(self.out_channels, k * cin) @ cols
            taps = None
        else:
            cols = None
            taps = np.ascontiguousarray(w.transpose(2, 0, 1))
            acc = out[:, :n_total]
            for i in range(k):
                acc += taps[i] @ flat[:, i * dil:i * dil + n_total]
        if "bias" in self.params:
            out += self.params["bias"][:, None]
        self._cache = (flat, cols, taps, b, n, n_pad, n_out)
        return np.ascontiguousarray(out.reshape(self.out_channels, b, n_pad)[:, :, :n_out].transpose(1, 0, 2))

    def backward(self, dout):
        flat, cols, taps, b, n, n_pad, n_out = self._cache
        self._cache = None
        k, dil = self.kernel_size, self.dilation
        cin, cout = self.in_channels, self.out_channels
        n_total = b * n_pad - dil * (k - 1)
        dfull = np.zeros((cout, b, n_pad), dtype=dout.dtype)
        dfull[:, :, :n_out] = dout.transpose(1, 0, 2)
        dflat = dfull.reshape(cout, b * n_pad)[:, :n_total]
        dx = np.zeros_like(flat)
        w = self.params["weight"]
        dw = self.grads["weight"]
        if taps is None:
            dw += (dflat @ cols.T).reshape(cout, k, cin).transpose(0, 2, 1)
            dcols = w.transpose(0, 2, 1).reshape(cout, k * cin).T @ dflat
            dcols = dcols.reshape(k, cin, n_total)
            for i in range(k):
                dx[:, i * dil:i * dil + n_total] += dcols[i]
        else:
            for i in range(k):
                off = i * dil
                dw[:, :, i] += dflat @ flat[:, off:off + n_total].T
                dx[:, off:off + n_total] += taps[i].T @ dflat
        if "bias" in self.params:
            self.grads["bias"] += dout.sum(axis=(0, 2))
        left = self.pad[0]
        return np.ascontiguousarray(dx.reshape(-1, b, n_pad)[:, :, left:left + n].transpose(1, 0, 2))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.params["weight"] = _uniform(rng, (out_features, in_features), in_features)
        self.params["bias"] = _uniform(rng, (out_features,), in_features)
        self._zero()

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] += dout.T @ self._x
        self.grads["bias"] += dout.sum(axis=0)
        self._x = None
        return dout @ self.params["weight"]


class BatchNorm1d(Module):
    """Batch normalization over (batch,) for 2D or (batch, time) for 3D input.

    Running statistics use the unbiased batch variance with momentum 0.1.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1) -> None:
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self._zero()

    @staticmethod
    def _shape(x):
        return (0,) if x.ndim == 2 else (0, 2), (1, -1) if x.ndim == 2 else (1, -1, 1)

    def forward(self, x, train=False):
        axes, bshape = self._shape(x)
        if train:
            n = x.size // x.shape[1]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            unbiased = var * n / (n - 1) if n > 1 else var
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = x - mean.reshape(bshape).astype(x.dtype)
        xhat *= inv_std.reshape(bshape)
        out = xhat * self.params["gamma"].reshape(bshape)
        out += self.params["beta"].reshape(bshape)
        self._cache = (xhat, inv_std, train, axes, bshape)
        return out

    def backward(self, dout):
        xhat, inv_std, train, axes, bshape = self._cache
        self._cache = None
        gamma = self.params["gamma"]
        s1 = dout.sum(axis=axes)
        s2 = (dout * xhat).sum(axis=axes)
        self.grads["gamma"] += s2
        self.grads["beta"] += s1
        scale = (gamma * inv_std).reshape(bshape)
        if not train:
            return dout * scale
        n = dout.size // dout.shape[1]
        dx = xhat * (s2 / n).reshape(bshape)
        np.subtract(dout, dx, out=dx)
        dx -= (s1 / n).reshape(bshape)
        dx *= scale
        return dx


class ReLU(Module):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        mask, self._mask = self._mask, None
        return dout * mask


class MaxPool1d(Module):
    """Non-overlapping max pooling (stride = kernel); a trailing remainder is dropped."""

    def __init__(self, kernel_size: int) -> None:
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x, train=False):
        k = self.kernel_size
        b, c, n = x.shape
        n_out = n // k
        if n_out == 0:
            raise ValueError("input shorter than pooling kernel")
        blocks = x[:, :, :n_out * k].reshape(b, c, n_out, k)
        idx = blocks.argmax(axis=3)
        self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def backward(self, dout):
        idx, shape = self._cache
        self._cache = None
        k = self.kernel_size
        b, c, n_out = dout.shape
        blocks = np.zeros((b, c, n_out, k), dtype=dout.dtype)
        np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=3)
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, :n_out * k] = blocks.reshape(b, c, n_out * k)
        return dx


class MaxPoolSame1d(Module):
    """Stride-1 max pooling padded with -inf so the length is preserved."""

    def __init__(self, kernel_size: int = 3) -> None:
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x, train=False):
        left, right = same_padding(self.kernel_size)
        xp = np.pad(x, ((0, 0), (0, 0), (left, right)), constant_values=-np.inf)
        n = x.shape[2]
        out = xp[:, :, :n].copy()
        took = []  # took[j-1]: offset j beat the running max (strict, so ties stay left)
        for j in range(1, self.kernel_size):
            cand = xp[:, :, j:j + n]
            took.append(cand > out)
            np.maximum(out, cand, out=out)
        self._cache = (took, left)
        return out

    def backward(self, dout):
        took, left = self._cache
        self._cache = None
        n = dout.shape[2]
        dxp = np.zeros(dout.shape[:2] + (n + self.kernel_size - 1,), dtype=dout.dtype)
        later = np.zeros(dout.shape, dtype=bool)
        for j in range(self.kernel_size - 1, -1, -1):
            won = ~later if j == 0 else took[j - 1] & ~later
            dxp[:, :, j:j + n] += dout * won
            if j:
                later |= took[j - 1]
        return dxp[:, :, left:left + n]


class GlobalAvgPool1d(Module):
    def forward(self, x, train=False):
        self._len = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dout):
        return np.repeat(dout[:, :, None] / self._len, self._len, axis=2)


class Flatten(Module):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
