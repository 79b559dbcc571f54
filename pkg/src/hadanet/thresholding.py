"""Shrinkage nonlinearities for transform-domain coefficients.

Soft-thresholding  S_T(x)  = sign(x) * max(|x| - T, 0)
Smooth-thresholding S'_T(x) = tanh(x) * max(|x| - T, 0)
Weighted smooth     S_WT(x) = tanh(w*x) * max(|w*x| - T, 0)

T (and w, for the weighted variant) are trainable, one value per
coefficient channel, shared across batch and spatial positions. The
derivative of soft-thresholding w.r.t. T is only ever -1, 0, or +1; the
smooth variant replaces it with -tanh(x), which is the point of using it.
At the dead-zone boundary |x| == T all derivatives take the dead-zone
branch (zero).

The DC coefficient (channel 0) carries the channel mean and is passed
through untouched when ``skip_dc`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Variant",
    "ThresholdParams",
    "ThresholdGrads",
    "soft_threshold",
    "soft_threshold_grad",
    "smooth_threshold",
    "smooth_threshold_grad",
    "weighted_smooth_threshold",
    "weighted_smooth_threshold_grad",
    "apply_threshold",
    "apply_threshold_backward",
]


class Variant(Enum):
    SOFT = "soft"
    SMOOTH = "smooth"
    WEIGHTED_SMOOTH = "weighted"
    RELU_SHIFT = "relu"
    IDENTITY = "identity"


@dataclass
class ThresholdParams:
    """Per-coefficient threshold vector, plus weights for the weighted variant."""

    thresholds: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds))
        if self.thresholds.ndim != 1:
            raise ValueError("thresholds must be a 1-D vector")
        if self.weights is not None:
            self.weights = np.atleast_1d(np.asarray(self.weights))
            if self.weights.shape != self.thresholds.shape:
                raise ValueError(
                    f"weights shape {self.weights.shape} != thresholds shape "
                    f"{self.thresholds.shape}"
                )


@dataclass
class ThresholdGrads:
    thresholds: np.ndarray | None
    weights: np.ndarray | None = None


def soft_threshold(x, t):
    x = np.asarray(x)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def soft_threshold_grad(x, t):
    """Returns (d/dx, d/dT). d/dT is -sign(x) outside the dead zone."""
    x = np.asarray(x)
    live = np.abs(x) > t
    ddx = np.where(live, 1.0, 0.0)
    ddt = np.where(live, -np.sign(x), 0.0)
    return ddx, ddt


def smooth_threshold(x, t):
    x = np.asarray(x)
    return np.tanh(x) * np.maximum(np.abs(x) - t, 0.0)


def smooth_threshold_grad(x, t):
    """Returns (d/dx, d/dT) of tanh(x) * max(|x| - T, 0)."""
    x = np.asarray(x)
    live = np.abs(x) > t
    th = np.tanh(x)
    ddx = np.where(live, (1.0 - th * th) * (np.abs(x) - t) + th * np.sign(x), 0.0)
    ddt = np.where(live, -th, 0.0)
    return ddx, ddt


def weighted_smooth_threshold(x, w, t):
    u = np.asarray(w) * np.asarray(x)
    return np.tanh(u) * np.maximum(np.abs(u) - t, 0.0)


def weighted_smooth_threshold_grad(x, w, t):
    """Returns (d/dx, d/dw, d/dT) of tanh(w*x) * max(|w*x| - T, 0)."""
    x = np.asarray(x)
    w = np.asarray(w)
    u = w * x
    ddu, ddt = smooth_threshold_grad(u, t)
    return ddu * w, ddu * x, ddt


def _split_dc(y: np.ndarray, skip_dc: bool):
    if skip_dc:
        return y[..., :1], y[..., 1:]
    return None, y


def _check_params(params: ThresholdParams | None, variant: Variant, count: int) -> None:
    if variant is Variant.IDENTITY:
        return
    if params is None:
        raise ValueError(f"variant {variant.value} requires ThresholdParams")
    if params.thresholds.shape[0] != count:
        raise ValueError(
            f"{count} channels to threshold but {params.thresholds.shape[0]} "
            "threshold values"
        )
    if variant is Variant.WEIGHTED_SMOOTH and params.weights is None:
        raise ValueError("weighted variant requires a weight vector")


def apply_threshold(
    y: np.ndarray,
    params: ThresholdParams | None,
    variant: Variant = Variant.SMOOTH,
    skip_dc: bool = True,
) -> np.ndarray:
    """Threshold each coefficient channel of ``y`` with its own T value.

    Channel j is thresholded with T_j (and weight w_j for the weighted
    variant). With ``skip_dc`` the DC channel (index 0) bypasses the
    nonlinearity and T covers channels 1..c-1.
    """
    if variant is Variant.IDENTITY:
        return y
    dc, rest = _split_dc(y, skip_dc)
    if rest.shape[-1] == 0:
        return y
    _check_params(params, variant, rest.shape[-1])
    t = params.thresholds
    if variant is Variant.SOFT:
        out = soft_threshold(rest, t)
    elif variant is Variant.SMOOTH:
        out = smooth_threshold(rest, t)
    elif variant is Variant.WEIGHTED_SMOOTH:
        out = weighted_smooth_threshold(rest, params.weights, t)
    elif variant is Variant.RELU_SHIFT:
        out = np.maximum(rest - t, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown variant {variant}")
    out = out.astype(y.dtype, copy=False)
    if dc is None:
        return out
    return np.concatenate([dc, out], axis=-1)


def apply_threshold_backward(
    grad_out: np.ndarray,
    y: np.ndarray,
    params: ThresholdParams | None,
    variant: Variant = Variant.SMOOTH,
    skip_dc: bool = True,
) -> tuple[np.ndarray, ThresholdGrads]:
    """Backward pass of ``apply_threshold`` at pre-threshold input ``y``.

    Returns the gradient w.r.t. ``y`` and per-coefficient parameter
    gradients summed over batch and spatial axes.
    """
    if grad_out.shape != y.shape:
        raise ValueError(f"grad shape {grad_out.shape} != input shape {y.shape}")
    if variant is Variant.IDENTITY:
        return grad_out, ThresholdGrads(None)
    g_dc, g_rest = _split_dc(grad_out, skip_dc)
    _, rest = _split_dc(y, skip_dc)
    if rest.shape[-1] == 0:
        return grad_out, ThresholdGrads(None)
    _check_params(params, variant, rest.shape[-1])
    t = params.thresholds
    grad_w = None
    if variant is Variant.SOFT:
        ddx, ddt = soft_threshold_grad(rest, t)
    elif variant is Variant.SMOOTH:
        ddx, ddt = smooth_threshold_grad(rest, t)
    elif variant is Variant.WEIGHTED_SMOOTH:
        ddx, ddw, ddt = weighted_smooth_threshold_grad(rest, params.weights, t)
        grad_w = np.sum(g_rest * ddw, axis=(0, 1, 2))
    elif variant is Variant.RELU_SHIFT:
        live = rest > t
        ddx = np.where(live, 1.0, 0.0)
        ddt = np.where(live, -1.0, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown variant {variant}")
    grad_rest = (g_rest * ddx).astype(grad_out.dtype, copy=False)
    grad_t = np.sum(g_rest * ddt, axis=(0, 1, 2))
    if g_dc is not None:
        grad_rest = np.concatenate([g_dc, grad_rest], axis=-1)
    return grad_rest, ThresholdGrads(grad_t, grad_w)
