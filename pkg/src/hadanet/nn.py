"""Ordinary multiply-based layers: the conv stem, the dense head, and the
plain-convolution bottleneck used as the like-for-like comparison twin of
the transform-based block.
"""

from __future__ import annotations

import numpy as np

from .layers import BatchNorm, BottleneckConfig, Layer, ReLU6
from .mf_ops import PadMode, conv_output_size, same_padding
from .tensor import check_nhwc

__all__ = [
    "Conv2d",
    "PointwiseConv",
    "DepthwiseConv",
    "Dense",
    "GlobalAvgPool",
    "Dropout",
    "ConvBottleneck",
]


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """Standard kxk convolution, implemented as one matmul per kernel tap."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        ksize: int = 3,
        stride: int = 1,
        padding: PadMode = PadMode.SAME,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.ksize = ksize
        self.stride = stride
        self.padding = padding
        self.weight = _fan_in_uniform(
            rng, (ksize, ksize, in_channels, out_channels),
            ksize * ksize * in_channels, dtype,
        )
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._grad_weight = np.zeros_like(self.weight)
        self._grad_bias = np.zeros_like(self.bias)
        self._xp = None
        self._in_shape = None
        self._out_hw = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self._grad_weight, "bias": self._grad_bias}

    def _window(self, arr, di, dj):
        s = self.stride
        ho, wo = self._out_hw
        return arr[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        s = self.stride
        ho = conv_output_size(x.shape[1], s, self.padding, self.ksize)
        wo = conv_output_size(x.shape[2], s, self.padding, self.ksize)
        self._out_hw = (ho, wo)
        self._in_shape = x.shape
        if self.padding is PadMode.SAME:
            ph = same_padding(x.shape[1], s, self.ksize)
            pw = same_padding(x.shape[2], s, self.ksize)
            xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
        else:
            xp = x
        self._xp = xp
        out = np.zeros((x.shape[0], ho, wo, self.weight.shape[3]), dtype=x.dtype)
        for di in range(self.ksize):
            for dj in range(self.ksize):
                win = self._window(xp, di, dj)
                out += win @ self.weight[di, dj]
        return out + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._grad_bias += np.sum(grad, axis=(0, 1, 2))
        gxp = np.zeros_like(self._xp)
        for di in range(self.ksize):
            for dj in range(self.ksize):
                win = self._window(self._xp, di, dj)
                self._grad_weight[di, dj] += np.einsum("nijc,nijo->co", win, grad)
                self._window(gxp, di, dj)[...] += grad @ self.weight[di, dj].T
        if self.padding is PadMode.VALID:
            return gxp
        _, h, w, _ = self._in_shape
        top, _ = same_padding(h, self.stride, self.ksize)
        left, _ = same_padding(w, self.stride, self.ksize)
        return np.ascontiguousarray(gxp[:, top : top + h, left : left + w])


class PointwiseConv(Layer):
    """1x1 convolution: a per-pixel channel mix (weights + bias)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.weight = _fan_in_uniform(rng, (in_channels, out_channels), in_channels, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._grad_weight = np.zeros_like(self.weight)
        self._grad_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self._grad_weight, "bias": self._grad_bias}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._grad_bias += np.sum(grad, axis=(0, 1, 2))
        self._grad_weight += np.einsum("nijc,nijo->co", self._x, grad)
        return grad @ self.weight.T


class DepthwiseConv(Layer):
    """Standard (multiply-based) depthwise 3x3 convolution."""

    def __init__(
        self,
        channels: int,
        stride: int = 1,
        padding: PadMode = PadMode.SAME,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        self.weight = _fan_in_uniform(rng, (3, 3, channels), 9 * channels, dtype)
        self._grad_weight = np.zeros_like(self.weight)
        self._xp = None
        self._in_shape = None
        self._out_hw = None

    def params(self):
        return {"weight": self.weight}

    def grads(self):
        return {"weight": self._grad_weight}

    def _window(self, arr, di, dj):
        s = self.stride
        ho, wo = self._out_hw
        return arr[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        s = self.stride
        ho = conv_output_size(x.shape[1], s, self.padding)
        wo = conv_output_size(x.shape[2], s, self.padding)
        self._out_hw = (ho, wo)
        self._in_shape = x.shape
        if self.padding is PadMode.SAME:
            ph = same_padding(x.shape[1], s)
            pw = same_padding(x.shape[2], s)
            xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
        else:
            xp = x
        self._xp = xp
        out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
        for di in range(3):
            for dj in range(3):
                out += self._window(xp, di, dj) * self.weight[di, dj]
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        gxp = np.zeros_like(self._xp)
        for di in range(3):
            for dj in range(3):
                win = self._window(self._xp, di, dj)
                self._grad_weight[di, dj] += np.sum(grad * win, axis=(0, 1, 2))
                self._window(gxp, di, dj)[...] += grad * self.weight[di, dj]
        if self.padding is PadMode.VALID:
            return gxp
        _, h, w, _ = self._in_shape
        top, _ = same_padding(h, self.stride)
        left, _ = same_padding(w, self.stride)
        return np.ascontiguousarray(gxp[:, top : top + h, left : left + w])


class Dense(Layer):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.weight = _fan_in_uniform(rng, (in_features, out_features), in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self._grad_weight = np.zeros_like(self.weight)
        self._grad_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self._grad_weight, "bias": self._grad_bias}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self._grad_bias += np.sum(grad, axis=0)
        self._grad_weight += self._x.T @ grad
        return grad @ self.weight.T


class GlobalAvgPool(Layer):
    """(n, h, w, c) -> (n, c) by spatial mean."""

    def __init__(self) -> None:
        self._in_shape = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        self._in_shape = x.shape
        return x.mean(axis=(1, 2), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, h, w, c = self._in_shape
        g = np.broadcast_to(grad[:, None, None, :], (n, h, w, c))
        return (g / (h * w)).astype(grad.dtype, copy=False)


class Dropout(Layer):
    """Inverted dropout: scales kept units at train time, identity at eval."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)
        self._mask = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad
        return grad * self._mask


class ConvBottleneck(Layer):
    """Plain-convolution twin of the transform bottleneck: 1x1 expand ->
    BN -> ReLU6 -> depthwise 3x3 -> BN -> ReLU6 -> 1x1 project -> BN
    [-> ReLU6], residual when s == 1 and k == k'.
    """

    def __init__(
        self,
        cfg: BottleneckConfig,
        final_relu6: bool = True,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        mid = cfg.expanded
        self.expand = PointwiseConv(cfg.k, mid, rng, dtype)
        self.bn1 = BatchNorm(mid, dtype=dtype)
        self.act1 = ReLU6()
        self.conv = DepthwiseConv(mid, cfg.s, PadMode.SAME, rng, dtype)
        self.bn2 = BatchNorm(mid, dtype=dtype)
        self.act2 = ReLU6()
        self.project = PointwiseConv(mid, cfg.k_prime, rng, dtype)
        self.bn3 = BatchNorm(cfg.k_prime, dtype=dtype)
        self.act3 = ReLU6() if final_relu6 else None
        self._children = [
            ("expand", self.expand),
            ("bn1", self.bn1),
            ("conv", self.conv),
            ("bn2", self.bn2),
            ("project", self.project),
            ("bn3", self.bn3),
        ]

    def _chain(self):
        seq = [self.expand, self.bn1, self.act1, self.conv, self.bn2, self.act2,
               self.project, self.bn3]
        if self.act3 is not None:
            seq.append(self.act3)
        return seq

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = x
        for layer in self._chain():
            out = layer.forward(out, training)
        if self.cfg.residual:
            out = out + x
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = grad
        for layer in reversed(self._chain()):
            g = layer.backward(g)
        if self.cfg.residual:
            g = g + grad
        return g

    def params(self):
        out = {}
        for name, child in self._children:
            for key, val in child.params().items():
                out[f"{name}.{key}"] = val
        return out

    def grads(self):
        out = {}
        for name, child in self._children:
            for key, val in child.grads().items():
                out[f"{name}.{key}"] = val
        return out

    def state(self):
        out = {}
        for name, child in self._children:
            for key, val in child.state().items():
                out[f"{name}.{key}"] = val
        return out
