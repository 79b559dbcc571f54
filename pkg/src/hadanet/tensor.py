"""Channel-axis helpers for dense NHWC tensors.

Everything in this package runs on rank-4 arrays laid out
(batch, height, width, channels) with channels fastest-varying, so the
length-2^k channel transforms touch contiguous memory. float32 is the
working dtype; float64 is accepted for verification runs. None of these
functions mutate their inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_nhwc",
    "pad_channels",
    "slice_channels",
    "concat_channels",
    "avgpool_channels",
]


def check_nhwc(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate that ``x`` is a rank-4 float array with all dims >= 1."""
    if not isinstance(x, np.ndarray):
        raise ValueError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ValueError(f"{name} must have shape (n, h, w, c), got {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} dimensions must all be >= 1, got {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        raise ValueError(f"{name} must be a float array, got dtype {x.dtype}")
    return x


def pad_channels(x: np.ndarray, b: int) -> np.ndarray:
    """Append ``b`` zero channels after the existing ones."""
    check_nhwc(x)
    if b < 0:
        raise ValueError(f"pad count must be >= 0, got {b}")
    if b == 0:
        return x.copy()
    return np.pad(x, ((0, 0), (0, 0), (0, 0), (0, b)))


def slice_channels(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Keep channels ``lo..hi-1`` (half-open, like Python slicing)."""
    check_nhwc(x)
    c = x.shape[3]
    if not (0 <= lo < hi <= c):
        raise ValueError(f"channel slice [{lo}:{hi}] out of range for c={c}")
    return np.ascontiguousarray(x[..., lo:hi])


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack the channels of ``b`` after the channels of ``a``."""
    check_nhwc(a, "a")
    check_nhwc(b, "b")
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(
            f"batch/spatial dims must match: {a.shape[:3]} vs {b.shape[:3]}"
        )
    return np.concatenate([a, b], axis=3)


def avgpool_channels(x: np.ndarray, r: int) -> np.ndarray:
    """Average non-overlapping groups of ``r`` adjacent channels."""
    check_nhwc(x)
    if r < 1:
        raise ValueError(f"pool size must be >= 1, got {r}")
    n, h, w, c = x.shape
    if c % r:
        raise ValueError(f"channel count {c} not divisible by pool size {r}")
    if r == 1:
        return x.copy()
    return x.reshape(n, h, w, c // r, r).mean(axis=4, dtype=x.dtype)
