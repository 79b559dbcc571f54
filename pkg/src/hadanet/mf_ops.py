"""Multiplication-free scalar operators and the depthwise convolution built on them.

Each operator keeps the sign of the product w*x but sets the magnitude by
addition, max, or min of |w| and |x|:

    sum-magnitude  w (+) x = sign(w*x) * (|w| + |x|)
    max-magnitude  w (.) x = sign(w*x) * (|w+x| + |w-x|) = 2*sign(w*x)*max(|w|,|x|)
    min-magnitude  w (.) x = sign(w*x) * ||w+x| - |w-x|| = 2*sign(w*x)*min(|w|,|x|)

sign(0) = 0 throughout, so a zero operand (including zero padding) always
contributes 0. The hot path applies the sign by conditional negation, not
by multiplying with a sign value, so its arithmetic is additions,
comparisons, and selects only; the one-line closed form with sign
products exists in the tests as an independent oracle.

Training through the signum discontinuity uses a surrogate: the Dirac
delta arising from d sign(u)/du is replaced by
delta_hat(u) = alpha * (1 - tanh^2(alpha*u)), a steep-tanh derivative.
For the sum-magnitude operator the surrogate partials are

    d/dx = sign(w) + 2*w*delta_hat(x)
    d/dw = sign(x) + 2*x*delta_hat(w)

The max/min surrogates follow the same recipe (d|u|/du = sign(u),
d sign(u)/du = delta_hat(u)) and should be treated as experimental.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import check_nhwc

__all__ = [
    "MfVariant",
    "PadMode",
    "MfKernel",
    "mf_scalar",
    "mf_dot",
    "mf_matmul",
    "mf_depthwise_conv",
    "mf_grad",
    "delta_hat",
    "conv_output_size",
    "same_padding",
]


class MfVariant(Enum):
    SUM_MAG = "sum"
    MAX_MAG = "max"
    MIN_MAG = "min"


class PadMode(Enum):
    SAME = "same"
    VALID = "valid"


@dataclass
class MfKernel:
    """Depthwise 3x3 weight bank plus operator and surrogate configuration."""

    weights: np.ndarray
    variant: MfVariant = MfVariant.SUM_MAG
    alpha: float = 10.0
    stride: int = 1
    padding: PadMode = PadMode.SAME

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 3 or self.weights.shape[:2] != (3, 3):
            raise ValueError(
                f"weights must have shape (3, 3, channels), got {self.weights.shape}"
            )
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def channels(self) -> int:
        return self.weights.shape[2]


def mf_scalar(w, x, variant: MfVariant = MfVariant.SUM_MAG):
    """Elementwise multiplication-free product (broadcasts like w*x)."""
    w = np.asarray(w)
    x = np.asarray(x)
    if variant is MfVariant.SUM_MAG:
        mag = np.abs(w) + np.abs(x)
    elif variant is MfVariant.MAX_MAG:
        mag = np.abs(w + x) + np.abs(w - x)
    elif variant is MfVariant.MIN_MAG:
        mag = np.abs(np.abs(w + x) - np.abs(w - x))
    else:  # pragma: no cover
        raise ValueError(f"unknown variant {variant}")
    # sign application = conditional negation; zero operands force 0
    out = np.where((w < 0) ^ (x < 0), -mag, mag)
    return np.where((w == 0) | (x == 0), np.zeros_like(mag), out)


def mf_dot(w: np.ndarray, x: np.ndarray, variant: MfVariant = MfVariant.SUM_MAG):
    """Multiplication-free replacement for the inner product of two vectors."""
    w = np.asarray(w)
    x = np.asarray(x)
    if w.ndim != 1 or x.ndim != 1 or w.shape != x.shape:
        raise ValueError(f"vectors must share one length, got {w.shape} and {x.shape}")
    return np.sum(mf_scalar(w, x, variant))


def mf_matmul(W: np.ndarray, X: np.ndarray, variant: MfVariant = MfVariant.SUM_MAG):
    """W^T (+) X: entry (i, j) is the MF dot of column i of W with column j of X."""
    W = np.asarray(W)
    X = np.asarray(X)
    if W.ndim != 2 or X.ndim != 2 or W.shape[0] != X.shape[0]:
        raise ValueError(f"row counts must agree, got {W.shape} and {X.shape}")
    return np.sum(mf_scalar(W[:, :, None], X[:, None, :], variant), axis=0)


def delta_hat(u, alpha: float):
    """Steep-tanh stand-in for the Dirac delta: alpha * (1 - tanh^2(alpha*u))."""
    t = np.tanh(alpha * np.asarray(u))
    return alpha * (1.0 - t * t)


def mf_grad(w, x, variant: MfVariant = MfVariant.SUM_MAG, alpha: float = 10.0):
    """Surrogate partials (d/dw, d/dx) of the MF operator.

    Sum-magnitude uses the formulas above exactly; max/min apply the
    same delta_hat recipe to their closed forms (experimental).
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    w = np.asarray(w)
    x = np.asarray(x)
    sw = np.sign(w)
    sx = np.sign(x)
    if variant is MfVariant.SUM_MAG:
        ddw = sx + 2.0 * x * delta_hat(w, alpha)
        ddx = sw + 2.0 * w * delta_hat(x, alpha)
        return ddw, ddx
    aw = np.abs(w)
    ax = np.abs(x)
    if variant is MfVariant.MAX_MAG:
        mag = np.maximum(aw, ax)
        w_branch = aw >= ax  # ties go to the w branch
    elif variant is MfVariant.MIN_MAG:
        mag = np.minimum(aw, ax)
        w_branch = aw <= ax
    else:  # pragma: no cover
        raise ValueError(f"unknown variant {variant}")
    x_branch = ~w_branch
    # d/dw of 2*sign(w)*sign(x)*mag with d|u|/du = sign(u), d sign(u)/du = delta_hat
    ddw = 2.0 * (sx * delta_hat(w, alpha) * mag + sx * sw * sw * w_branch)
    ddx = 2.0 * (sw * delta_hat(x, alpha) * mag + sw * sx * sx * x_branch)
    return ddw, ddx


def conv_output_size(size: int, stride: int, padding: PadMode, ksize: int = 3) -> int:
    if padding is PadMode.SAME:
        return -(-size // stride)  # ceil division
    if size < ksize:
        raise ValueError(f"spatial size {size} smaller than kernel {ksize}")
    return (size - ksize) // stride + 1


def same_padding(size: int, stride: int, ksize: int = 3) -> tuple[int, int]:
    """TensorFlow-style SAME padding: total split low/high, extra goes high."""
    out = -(-size // stride)
    total = max((out - 1) * stride + ksize - size, 0)
    return total // 2, total - total // 2


def _pad_spatial(x: np.ndarray, stride: int, padding: PadMode) -> np.ndarray:
    if padding is PadMode.VALID:
        return x
    ph = same_padding(x.shape[1], stride)
    pw = same_padding(x.shape[2], stride)
    return np.pad(x, ((0, 0), ph, pw, (0, 0)))


def mf_depthwise_conv(x: np.ndarray, kernel: MfKernel) -> np.ndarray:
    """Depthwise 3x3 convolution with every per-tap product replaced by the MF operator."""
    check_nhwc(x)
    if x.shape[3] != kernel.channels:
        raise ValueError(
            f"input has {x.shape[3]} channels, kernel has {kernel.channels}"
        )
    s = kernel.stride
    ho = conv_output_size(x.shape[1], s, kernel.padding)
    wo = conv_output_size(x.shape[2], s, kernel.padding)
    xp = _pad_spatial(x, s, kernel.padding)
    out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            win = xp[:, di : di + (ho - 1) * s + 1 : s, dj : dj + (wo - 1) * s + 1 : s]
            out += mf_scalar(kernel.weights[di, dj], win, kernel.variant).astype(
                x.dtype, copy=False
            )
    return out
