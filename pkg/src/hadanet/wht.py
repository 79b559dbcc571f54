"""Walsh-Hadamard transforms along the channel axis.

Two orderings are supported: natural (the order the recursive Hadamard
construction produces) and sequency (rows sorted by sign-change count,
reached from natural order by a bit-reversal + Gray-code index
permutation). ``naive_wht`` is the reference O(m^2) matrix-product
implementation; ``fwht`` is the O(m log m) butterfly, which must agree
with it to float32 round-off. The butterfly uses only additions and
subtractions plus one final scale pass.

A transform of an (n, h, w, m) tensor runs n*h*w independent length-m
transforms. ``HADANET_THREADS`` (unset or 0 = serial) splits those rows
across a thread pool; chunks are disjoint rows, so results are
bit-identical to the serial path.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .tensor import check_nhwc

__all__ = [
    "Ordering",
    "Scale",
    "TransformPlan",
    "hadamard_matrix",
    "sequency_permutation",
    "walsh_matrix",
    "naive_wht",
    "fwht",
    "thread_count",
]

# Row-chunk size keeps a working pair of (rows x m) float32 buffers inside
# L2 so the log2(m) butterfly stages do not each round-trip DRAM.
_CHUNK_ROWS = 256
# Stages with pair distance below this run on a transposed block instead of
# strided views (stride-2 inner loops are the slow case for numpy).
_TAIL_BLOCK = 32


class Ordering(Enum):
    NATURAL = "natural"
    SEQUENCY = "sequency"


class Scale(Enum):
    NONE = "none"
    ORTHONORMAL = "orthonormal"
    INVERSE = "inverse"


@dataclass(frozen=True)
class TransformPlan:
    """Size, row ordering, and scaling of one channel transform."""

    size: int
    ordering: Ordering = Ordering.NATURAL
    scale: Scale = Scale.NONE

    def __post_init__(self) -> None:
        if self.size < 1 or self.size & (self.size - 1):
            raise ValueError(f"transform size must be a power of two, got {self.size}")

    @property
    def k(self) -> int:
        return self.size.bit_length() - 1

    @property
    def scale_factor(self) -> float:
        if self.scale is Scale.NONE:
            return 1.0
        if self.scale is Scale.ORTHONORMAL:
            return 1.0 / float(np.sqrt(self.size))
        return 1.0 / float(self.size)


def hadamard_matrix(k: int) -> np.ndarray:
    """2^k x 2^k Hadamard matrix in natural order (entries +-1, int32)."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    h = np.ones((1, 1), dtype=np.int32)
    for _ in range(k):
        h = np.block([[h, h], [h, -h]])
    return h


def sequency_permutation(k: int) -> np.ndarray:
    """Index map sigma with walsh row i == hadamard row sigma(i).

    sigma(i) = bit_reverse(gray_code(i)) over k bits, which sorts rows by
    ascending sign-change count.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    idx = np.arange(1 << k, dtype=np.int64)
    gray = idx ^ (idx >> 1)
    rev = np.zeros_like(gray)
    for _ in range(k):
        rev = (rev << 1) | (gray & 1)
        gray >>= 1
    return rev


def walsh_matrix(k: int) -> np.ndarray:
    """2^k x 2^k Walsh matrix in sequency order (entries +-1, int32)."""
    return hadamard_matrix(k)[sequency_permutation(k)]


@lru_cache(maxsize=32)
def _matrix_for(k: int, ordering: Ordering, dtype_name: str) -> np.ndarray:
    if ordering is Ordering.NATURAL:
        m = hadamard_matrix(k)
    else:
        m = walsh_matrix(k)
    return np.ascontiguousarray(m, dtype=np.dtype(dtype_name))


def _check_transform_input(x: np.ndarray, plan: TransformPlan) -> None:
    check_nhwc(x)
    if x.shape[3] != plan.size:
        raise ValueError(
            f"tensor has {x.shape[3]} channels but plan expects {plan.size}"
        )


def naive_wht(x: np.ndarray, plan: TransformPlan) -> np.ndarray:
    """Reference transform: one m x m matrix product per channel vector."""
    _check_transform_input(x, plan)
    mat = _matrix_for(plan.k, plan.ordering, x.dtype.name)
    rows = np.ascontiguousarray(x).reshape(-1, plan.size)
    out = rows @ mat.T
    if plan.scale is not Scale.NONE:
        out *= x.dtype.type(plan.scale_factor)
    return out.reshape(x.shape)


def _butterfly_rows(x2: np.ndarray, out: np.ndarray) -> None:
    """Unordered, unscaled butterfly of every row of ``x2`` into ``out``.

    Large-distance stages run on (rows, blocks, 2, h) views; once the pair
    distance drops below _TAIL_BLOCK the remaining short transforms run on
    one transposed block so every inner loop stays contiguous.
    """
    r, m = x2.shape
    if m == 1:
        out[:] = x2
        return
    # keep roughly 1 MiB of rows per chunk so small transforms are not
    # dominated by per-chunk overhead while large ones stay cache-resident
    rows = min(r, max(_CHUNK_ROWS, (1 << 18) // m))
    buf_a = np.empty((rows, m), dtype=x2.dtype)
    buf_b = np.empty_like(buf_a)
    for i in range(0, r, rows):
        n = min(rows, r - i)
        src = buf_a[:n]
        dst = buf_b[:n]
        src[:] = x2[i : i + n]
        h = m // 2
        while 2 * h > _TAIL_BLOCK:
            s = src.reshape(-1, 2, h)
            d = dst.reshape(-1, 2, h)
            np.add(s[:, 0], s[:, 1], out=d[:, 0])
            np.subtract(s[:, 0], s[:, 1], out=d[:, 1])
            src, dst = dst, src
            h //= 2
        b = 2 * h  # remaining per-block transform size, <= _TAIL_BLOCK
        if b >= 2:
            t = np.ascontiguousarray(src.reshape(-1, b).T)
            td = np.empty_like(t)
            hh = b // 2
            while hh >= 1:
                s = t.reshape(-1, 2, hh, t.shape[-1])
                d = td.reshape(-1, 2, hh, t.shape[-1])
                np.add(s[:, 0], s[:, 1], out=d[:, 0])
                np.subtract(s[:, 0], s[:, 1], out=d[:, 1])
                t, td = td, t
                hh //= 2
            out[i : i + n] = t.T.reshape(n, m)
        else:
            out[i : i + n] = src


def thread_count() -> int:
    """Data-parallel width from HADANET_THREADS (unset/invalid/0 -> 1)."""
    raw = os.environ.get("HADANET_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def fwht(x: np.ndarray, plan: TransformPlan) -> np.ndarray:
    """Fast Walsh-Hadamard transform of the channel axis.

    log2(m) add/subtract butterfly stages per channel vector, a gather for
    sequency ordering, and one multiply pass for the scale factor. Matches
    ``naive_wht`` to float32 round-off.
    """
    _check_transform_input(x, plan)
    m = plan.size
    rows = np.ascontiguousarray(x).reshape(-1, m)
    out = np.empty_like(rows)
    threads = thread_count()
    if threads > 1 and rows.shape[0] >= 2 * threads:
        bounds = np.linspace(0, rows.shape[0], threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(
                pool.map(
                    lambda ab: _butterfly_rows(rows[ab[0] : ab[1]], out[ab[0] : ab[1]]),
                    zip(bounds[:-1], bounds[1:]),
                )
            )
    else:
        _butterfly_rows(rows, out)
    if plan.ordering is Ordering.SEQUENCY:
        out = out[:, sequency_permutation(plan.k)]
    if plan.scale is not Scale.NONE:
        out *= x.dtype.type(plan.scale_factor)
    return out.reshape(x.shape)
