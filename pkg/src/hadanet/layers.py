"""Trainable layers: transform-domain channel mixers, the multiplication-free
depthwise convolution, and the revised bottleneck block that composes them.

Channel expansion (c -> out, out >= c):
    pad to 2^d >= out, orthonormal FWHT, per-coefficient thresholding with
    the DC channel passed through, orthonormal FWHT back, keep the first
    ``out`` channels. With thresholding disabled the two transforms cancel
    exactly, so the input reappears in its first c channels.

Channel projection (c -> out, c >= out):
    pad to 2^p >= c, orthonormal FWHT, threshold coefficients 1..2^p-r
    (r = 2^(p-q), 2^q >= out), then shrink to 2^q channels by dividing the
    DC coefficient by r and average-pooling the thresholded coefficients in
    groups of r (the last r-1 coefficients are dropped), orthonormal FWHT
    of size 2^q, keep the first ``out`` channels.

Both transforms are symmetric linear maps, so the backward pass reuses the
forward transform; pad/slice and slice/pad are mutual adjoints and the
average-pool adjoint spreads gradient/r across each group.

The only trainable parameters of a transform layer are its threshold
vector (plus a weight vector for the weighted variant): 2^d - 1 for
expansion, 2^p - r for projection; far fewer than the in*out weights of
the pointwise convolution it replaces.

Layers follow a common contract: ``forward`` caches what ``backward``
needs, ``backward`` accumulates parameter gradients and returns the input
gradient, ``params``/``grads`` expose matching name->array dicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mf_ops import (
    MfKernel,
    MfVariant,
    PadMode,
    conv_output_size,
    delta_hat,
    mf_depthwise_conv,
    mf_grad,
    same_padding,
)
from .tensor import avgpool_channels, check_nhwc, concat_channels, pad_channels, slice_channels
from .thresholding import (
    ThresholdParams,
    Variant,
    apply_threshold,
    apply_threshold_backward,
)
from .wht import Ordering, Scale, TransformPlan, fwht

__all__ = [
    "Layer",
    "FwhtExpand",
    "FwhtProject",
    "fwht_layer",
    "MfDsConv",
    "BatchNorm",
    "ReLU6",
    "BottleneckConfig",
    "Bottleneck",
    "count_params",
    "pointwise_conv_params",
]


class Layer:
    """Base class for layers with cached forward state and accumulated grads."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable arrays that still belong in a checkpoint."""
        return {}

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params().values())

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0


def count_params(layer: Layer) -> int:
    """Number of trainable scalars in a layer (or composite block)."""
    return layer.param_count()


def pointwise_conv_params(in_channels: int, out_channels: int) -> int:
    """Weights + bias of the 1x1 convolution a transform layer replaces."""
    return in_channels * out_channels + out_channels


def _min_pow2_exponent(n: int) -> int:
    return max(0, (n - 1).bit_length())


def _make_threshold_params(
    count: int, variant: Variant, dtype
) -> ThresholdParams | None:
    if variant is Variant.IDENTITY or count == 0:
        return None
    weights = np.ones(count, dtype=dtype) if variant is Variant.WEIGHTED_SMOOTH else None
    return ThresholdParams(np.zeros(count, dtype=dtype), weights)


class _FwhtLayerBase(Layer):
    def __init__(self, count: int, variant: Variant, dtype) -> None:
        self.variant = variant
        self.threshold_params = _make_threshold_params(count, variant, dtype)
        self._grad_t = None
        self._grad_w = None
        if self.threshold_params is not None:
            self._grad_t = np.zeros_like(self.threshold_params.thresholds)
            if self.threshold_params.weights is not None:
                self._grad_w = np.zeros_like(self.threshold_params.weights)

    def params(self) -> dict[str, np.ndarray]:
        if self.threshold_params is None:
            return {}
        out = {"thresholds": self.threshold_params.thresholds}
        if self.threshold_params.weights is not None:
            out["weights"] = self.threshold_params.weights
        return out

    def grads(self) -> dict[str, np.ndarray]:
        if self._grad_t is None:
            return {}
        out = {"thresholds": self._grad_t}
        if self._grad_w is not None:
            out["weights"] = self._grad_w
        return out

    def _accumulate_threshold_grads(self, tg) -> None:
        if tg.thresholds is not None and self._grad_t is not None:
            self._grad_t += tg.thresholds
        if tg.weights is not None and self._grad_w is not None:
            self._grad_w += tg.weights


class FwhtExpand(_FwhtLayerBase):
    """Channel expansion through a 2^d-point transform pair."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        variant: Variant = Variant.SMOOTH,
        dtype=np.float32,
    ) -> None:
        if not 1 <= in_channels <= out_channels:
            raise ValueError(
                f"expansion requires 1 <= in <= out, got {in_channels}, {out_channels}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.d = _min_pow2_exponent(out_channels)
        self.size = 1 << self.d
        self.plan = TransformPlan(self.size, Ordering.NATURAL, Scale.ORTHONORMAL)
        super().__init__(self.size - 1, variant, dtype)
        self._y = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        if x.shape[3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[3]}")
        xp = pad_channels(x, self.size - self.in_channels)
        y = fwht(xp, self.plan)
        self._y = y
        yt = apply_threshold(y, self.threshold_params, self.variant, skip_dc=True)
        z = fwht(yt, self.plan)
        return slice_channels(z, 0, self.out_channels)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = pad_channels(grad, self.size - self.out_channels)
        g = fwht(g, self.plan)
        g, tg = apply_threshold_backward(
            g, self._y, self.threshold_params, self.variant, skip_dc=True
        )
        self._accumulate_threshold_grads(tg)
        g = fwht(g, self.plan)
        return slice_channels(g, 0, self.in_channels)


class FwhtProject(_FwhtLayerBase):
    """Channel projection through a 2^p-point and a 2^q-point transform."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        variant: Variant = Variant.SMOOTH,
        dtype=np.float32,
    ) -> None:
        if not 1 <= out_channels <= in_channels:
            raise ValueError(
                f"projection requires 1 <= out <= in, got {in_channels}, {out_channels}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.p = _min_pow2_exponent(in_channels)
        self.q = _min_pow2_exponent(out_channels)
        self.r = 1 << (self.p - self.q)
        self.size_in = 1 << self.p
        self.size_out = 1 << self.q
        self.plan_in = TransformPlan(self.size_in, Ordering.NATURAL, Scale.ORTHONORMAL)
        self.plan_out = TransformPlan(self.size_out, Ordering.NATURAL, Scale.ORTHONORMAL)
        super().__init__(self.size_in - self.r, variant, dtype)
        self._mids = None

    @property
    def thresholded_count(self) -> int:
        return self.size_in - self.r

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        if x.shape[3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[3]}")
        xp = pad_channels(x, self.size_in - self.in_channels)
        y = fwht(xp, self.plan_in)
        dc = y[..., :1] / self.r
        if self.thresholded_count:
            mids = slice_channels(y, 1, 1 + self.thresholded_count)
            self._mids = mids
            mids_t = apply_threshold(
                mids, self.threshold_params, self.variant, skip_dc=False
            )
            yhat = concat_channels(dc, avgpool_channels(mids_t, self.r))
        else:
            yhat = dc
        z = fwht(yhat, self.plan_out)
        return slice_channels(z, 0, self.out_channels)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = pad_channels(grad, self.size_out - self.out_channels)
        g = fwht(g, self.plan_out)
        gy = np.zeros(g.shape[:3] + (self.size_in,), dtype=g.dtype)
        gy[..., 0] = g[..., 0] / self.r
        if self.thresholded_count:
            # average-pool adjoint: spread each pooled gradient across its group
            g_mids = np.repeat(g[..., 1:], self.r, axis=-1) / self.r
            g_mids, tg = apply_threshold_backward(
                g_mids, self._mids, self.threshold_params, self.variant, skip_dc=False
            )
            self._accumulate_threshold_grads(tg)
            gy[..., 1 : 1 + self.thresholded_count] = g_mids
        gx = fwht(gy, self.plan_in)
        return slice_channels(gx, 0, self.in_channels)


def fwht_layer(
    in_channels: int,
    out_channels: int,
    variant: Variant = Variant.SMOOTH,
    dtype=np.float32,
):
    """Expansion when out >= in, projection otherwise."""
    if out_channels >= in_channels:
        return FwhtExpand(in_channels, out_channels, variant, dtype)
    return FwhtProject(in_channels, out_channels, variant, dtype)


class MfDsConv(Layer):
    """Depthwise 3x3 layer using the multiplication-free operator.

    ``surrogate="formula"`` (default) backpropagates the delta_hat
    surrogate. ``surrogate="relaxed"`` replaces the operator by
    tanh(alpha*w*x)*(|w|+|x|) in forward AND uses its exact gradient in
    backward; that mode exists so end-to-end finite-difference checks have
    a differentiable oracle, not for training.
    """

    def __init__(
        self,
        channels: int,
        variant: MfVariant = MfVariant.SUM_MAG,
        alpha: float = 10.0,
        stride: int = 1,
        padding: PadMode = PadMode.SAME,
        rng: np.random.Generator | None = None,
        surrogate: str = "formula",
        dtype=np.float32,
    ) -> None:
        if surrogate not in ("formula", "relaxed"):
            raise ValueError(f"unknown surrogate mode {surrogate!r}")
        if surrogate == "relaxed" and variant is not MfVariant.SUM_MAG:
            raise ValueError("relaxed mode is defined for the sum-magnitude variant")
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (9.0 * channels))
        weights = rng.uniform(-bound, bound, size=(3, 3, channels)).astype(dtype)
        self.kernel = MfKernel(weights, variant, alpha, stride, padding)
        self.surrogate = surrogate
        self._grad_w = np.zeros_like(weights)
        self._xp = None
        self._out_hw = None
        self._in_shape = None

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.kernel.weights}

    def grads(self) -> dict[str, np.ndarray]:
        return {"weights": self._grad_w}

    def _tap_window(self, arr: np.ndarray, di: int, dj: int):
        s = self.kernel.stride
        ho, wo = self._out_hw
        return arr[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        k = self.kernel
        if x.shape[3] != k.channels:
            raise ValueError(f"expected {k.channels} channels, got {x.shape[3]}")
        s = k.stride
        ho = conv_output_size(x.shape[1], s, k.padding)
        wo = conv_output_size(x.shape[2], s, k.padding)
        self._out_hw = (ho, wo)
        self._in_shape = x.shape
        if k.padding is PadMode.SAME:
            ph = same_padding(x.shape[1], s)
            pw = same_padding(x.shape[2], s)
            xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
        else:
            xp = x
        self._xp = xp
        out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
        if self.surrogate == "relaxed":
            for di in range(3):
                for dj in range(3):
                    w = k.weights[di, dj]
                    win = self._tap_window(xp, di, dj)
                    out += np.tanh(k.alpha * w * win) * (np.abs(w) + np.abs(win))
            return out
        if k.variant is not MfVariant.SUM_MAG:
            return mf_depthwise_conv(x, k)
        # sum-magnitude fast path: same conditional-negation arithmetic as
        # mf_scalar, with |x| and the sign/zero masks computed once
        ax = np.abs(xp)
        xneg = xp < 0
        xzero = xp == 0
        aw = np.abs(k.weights)
        wneg = k.weights < 0
        wzero = k.weights == 0
        for di in range(3):
            for dj in range(3):
                mag = aw[di, dj] + self._tap_window(ax, di, dj)
                np.negative(mag, out=mag, where=self._tap_window(xneg, di, dj) ^ wneg[di, dj])
                np.copyto(mag, 0.0, where=self._tap_window(xzero, di, dj) | wzero[di, dj])
                out += mag
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        k = self.kernel
        xp = self._xp
        gxp = np.zeros_like(xp)
        if self.surrogate == "formula" and k.variant is MfVariant.SUM_MAG:
            # one pass each for sign(x) and delta_hat(x); per tap only cheap
            # broadcast arithmetic and two channel reductions remain
            sx = np.sign(xp)
            dx_hat = delta_hat(xp, k.alpha)
            sw = np.sign(k.weights)
            dw_hat = delta_hat(k.weights, k.alpha)
            for di in range(3):
                for dj in range(3):
                    xwin = self._tap_window(xp, di, dj)
                    # d/dw = sign(x) + 2x*delta_hat(w)
                    self._grad_w[di, dj] += np.einsum(
                        "nijc,nijc->c", grad, self._tap_window(sx, di, dj)
                    ) + 2.0 * dw_hat[di, dj] * np.einsum("nijc,nijc->c", grad, xwin)
                    # d/dx = sign(w) + 2w*delta_hat(x)
                    u = self._tap_window(dx_hat, di, dj) * (2.0 * k.weights[di, dj])
                    u += sw[di, dj]
                    u *= grad
                    self._tap_window(gxp, di, dj)[...] += u
        else:
            for di in range(3):
                for dj in range(3):
                    w = k.weights[di, dj]
                    win = self._tap_window(xp, di, dj)
                    if self.surrogate == "formula":
                        ddw, ddx = mf_grad(w, win, k.variant, k.alpha)
                    else:
                        th = np.tanh(k.alpha * w * win)
                        dth = k.alpha * (1.0 - th * th)
                        mag = np.abs(w) + np.abs(win)
                        ddw = dth * win * mag + th * np.sign(w)
                        ddx = dth * w * mag + th * np.sign(win)
                    self._grad_w[di, dj] += np.sum(grad * ddw, axis=(0, 1, 2))
                    self._tap_window(gxp, di, dj)[...] += grad * ddx
        if self.kernel.padding is PadMode.VALID:
            return gxp
        _, h, w, _ = self._in_shape
        top, _ = same_padding(h, k.stride)
        left, _ = same_padding(w, k.stride)
        return np.ascontiguousarray(gxp[:, top : top + h, left : left + w])


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics.

    Training mode normalizes with batch moments and updates the running
    estimates as running = momentum * running + (1 - momentum) * batch;
    eval mode normalizes with the running estimates.
    """

    def __init__(
        self, channels: int, momentum: float = 0.9, eps: float = 1e-3, dtype=np.float32
    ) -> None:
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._grad_gamma = np.zeros_like(self.gamma)
        self._grad_beta = np.zeros_like(self.beta)
        self._xhat = None
        self._inv_std = None
        self._trained_batch = False

    def params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self) -> dict[str, np.ndarray]:
        return {"gamma": self._grad_gamma, "beta": self._grad_beta}

    def state(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_nhwc(x)
        if training:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            self.running_mean[...] = (
                self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            )
            self.running_var[...] = (
                self.momentum * self.running_var + (1.0 - self.momentum) * var
            )
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._xhat = xhat
        self._inv_std = inv_std
        self._trained_batch = training
        return (self.gamma * xhat + self.beta).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        self._grad_gamma += np.sum(grad * xhat, axis=(0, 1, 2))
        self._grad_beta += np.sum(grad, axis=(0, 1, 2))
        dxhat = grad * self.gamma
        if not self._trained_batch:
            return (dxhat * self._inv_std).astype(grad.dtype, copy=False)
        n = grad.shape[0] * grad.shape[1] * grad.shape[2]
        sum_dxhat = np.sum(dxhat, axis=(0, 1, 2))
        sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 1, 2))
        dx = (self._inv_std / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx.astype(grad.dtype, copy=False)


class ReLU6(Layer):
    def __init__(self) -> None:
        self._mask = None
        self._x = None  # kept so finite-difference checks can see kink margins

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        self._mask = (x > 0) & (x < 6)
        return np.minimum(np.maximum(x, 0), 6)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._mask


@dataclass(frozen=True)
class BottleneckConfig:
    """One revised bottleneck: k -> t*k -> k' channels with stride s."""

    k: int
    k_prime: int
    t: int
    s: int

    def __post_init__(self) -> None:
        if min(self.k, self.k_prime, self.t) < 1:
            raise ValueError("k, k_prime and t must be >= 1")
        if self.s not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.s}")

    @property
    def expanded(self) -> int:
        return self.t * self.k

    @property
    def residual(self) -> bool:
        return self.s == 1 and self.k == self.k_prime


class Bottleneck(Layer):
    """Expand -> BN -> ReLU6 -> MF depthwise (stride s) -> BN -> ReLU6 ->
    project -> BN [-> ReLU6], with a residual add when s == 1 and k == k'.

    ``final_relu6=False`` drops the activation after the projection stage
    for a linear-bottleneck variant.
    """

    def __init__(
        self,
        cfg: BottleneckConfig,
        variant: Variant = Variant.SMOOTH,
        mf_variant: MfVariant = MfVariant.SUM_MAG,
        alpha: float = 10.0,
        final_relu6: bool = True,
        rng: np.random.Generator | None = None,
        surrogate: str = "formula",
        dtype=np.float32,
    ) -> None:
        self.cfg = cfg
        mid = cfg.expanded
        self.expand = FwhtExpand(cfg.k, mid, variant, dtype)
        self.bn1 = BatchNorm(mid, dtype=dtype)
        self.act1 = ReLU6()
        self.conv = MfDsConv(
            mid, mf_variant, alpha, cfg.s, PadMode.SAME, rng, surrogate, dtype
        )
        self.bn2 = BatchNorm(mid, dtype=dtype)
        self.act2 = ReLU6()
        self.project = FwhtProject(mid, cfg.k_prime, variant, dtype)
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

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, child in self._children:
            for key, val in child.params().items():
                out[f"{name}.{key}"] = val
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, child in self._children:
            for key, val in child.grads().items():
                out[f"{name}.{key}"] = val
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, child in self._children:
            for key, val in child.state().items():
                out[f"{name}.{key}"] = val
        return out
