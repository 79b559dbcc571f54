"""Wall-clock micro-benchmarks for the channel mixers.

Three c -> c mixers run on one shared random (n, h, w, c) tensor: a dense
1x1 convolution expressed as a matrix product with a random c x c weight,
the reference matrix-product transform (O(c^2)), and the fast butterfly
transform (O(c log c)). Before anything is timed, the fast transform is
checked against the reference on the benchmark input; a mismatch aborts
the run, so a wrong kernel can never post a time.

All cases run under one thread budget (HADANET_THREADS, default 1): the
BLAS pool is pinned to it and the butterfly's row chunking uses it, which
keeps the comparison about algorithms rather than thread counts. Absolute
times are machine-specific; the stable observables are the ordering at
large c and the per-doubling growth ratios.
"""

from __future__ import annotations

import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .wht import Ordering, Scale, TransformPlan, fwht, naive_wht, thread_count

__all__ = [
    "OracleMismatchError",
    "BenchReport",
    "machine_descriptor",
    "bench_channel_mixers",
    "bench_sweep",
    "growth_ratios",
]


class OracleMismatchError(RuntimeError):
    """Fast transform disagreed with the reference on the benchmark input."""


def machine_descriptor(threads: int) -> str:
    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    return (
        f"{platform.platform()} | {cpu} | python {platform.python_version()} | "
        f"numpy {np.__version__} | threads={threads}"
    )


@dataclass
class BenchReport:
    case: str
    shape: tuple[int, int, int, int]
    reps: int
    warmup: int
    times: list[float] = field(repr=False)
    machine: str = ""

    def __post_init__(self) -> None:
        if self.reps < 5:
            raise ValueError(f"need >= 5 recorded repetitions, got {self.reps}")
        if self.warmup < 2:
            raise ValueError(f"need >= 2 warmup runs, got {self.warmup}")
        if len(self.times) != self.reps:
            raise ValueError(f"{len(self.times)} times for {self.reps} reps")

    @property
    def median(self) -> float:
        return statistics.median(self.times)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times)

    @property
    def stddev(self) -> float:
        return statistics.stdev(self.times) if len(self.times) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "shape": list(self.shape),
            "reps": self.reps,
            "warmup": self.warmup,
            "times_s": self.times,
            "median_s": self.median,
            "mean_s": self.mean,
            "stddev_s": self.stddev,
            "machine": self.machine,
        }


def _time_case(fn, reps: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def _relative_error(got: np.ndarray, want: np.ndarray) -> float:
    scale = float(np.max(np.abs(want)))
    if scale == 0.0:
        return float(np.max(np.abs(got)))
    return float(np.max(np.abs(got - want))) / scale


def bench_channel_mixers(
    n: int = 10,
    h: int = 32,
    w: int = 32,
    c: int = 1024,
    reps: int = 7,
    warmup: int = 2,
    seed: int = 0,
    gate_tol: float = 1e-4,
) -> list[BenchReport]:
    """Time the three mixers on one random tensor; gate on transform agreement."""
    if c < 1 or c & (c - 1):
        raise ValueError(f"channel count must be a power of two, got {c}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, h, w, c), dtype=np.float32)
    weight = rng.standard_normal((c, c), dtype=np.float32)
    plan = TransformPlan(c, Ordering.NATURAL, Scale.NONE)
    threads = thread_count()
    machine = machine_descriptor(threads)
    shape = (n, h, w, c)
    with threadpool_limits(limits=threads):
        rel = _relative_error(fwht(x, plan), naive_wht(x, plan))
        if rel > gate_tol:
            raise OracleMismatchError(
                f"fwht deviates from naive transform by {rel:.3e} "
                f"(gate {gate_tol:.0e}) on the benchmark input"
            )
        x2 = x.reshape(-1, c)
        cases = [
            ("conv1x1", lambda: x2 @ weight),
            ("wht-naive", lambda: naive_wht(x, plan)),
            ("fwht", lambda: fwht(x, plan)),
        ]
        return [
            BenchReport(name, shape, reps, warmup, _time_case(fn, reps, warmup), machine)
            for name, fn in cases
        ]


def bench_sweep(
    channels=(256, 512, 1024, 2048),
    n: int = 10,
    h: int = 32,
    w: int = 32,
    reps: int = 5,
    warmup: int = 2,
    seed: int = 0,
) -> dict[int, list[BenchReport]]:
    return {
        c: bench_channel_mixers(n, h, w, c, reps, warmup, seed)
        for c in channels
    }


def growth_ratios(sweep: dict[int, list[BenchReport]], case: str) -> tuple[list[float], float]:
    """Median-time ratios between consecutive channel doublings and their geomean."""
    sizes = sorted(sweep)
    medians = []
    for c in sizes:
        match = [r for r in sweep[c] if r.case == case]
        if not match:
            raise ValueError(f"case {case!r} missing from sweep at c={c}")
        medians.append(match[0].median)
    ratios = [b / a for a, b in zip(medians[:-1], medians[1:])]
    geomean = float(np.exp(np.mean(np.log(ratios))))
    return ratios, geomean
