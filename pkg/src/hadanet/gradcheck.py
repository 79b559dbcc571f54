"""Finite-difference verification of analytic gradients.

Every check compares an implemented backward pass against central finite
differences of a scalar loss sum(output * R) with a fixed random R, in
float64. The reported error per parameter group is

    max |g_analytic - g_fd| / max(1, max |g_fd|)

so tolerances behave absolutely for order-one gradients.

Piecewise operators need care:

* Threshold and ReLU6 kinks are harmless as long as no cached
  pre-activation sits within a few finite-difference steps of a kink;
  configurations are redrawn until that margin holds.
* The multiplication-free surrogate is, by construction, not the gradient
  of the true forward near zero operands. The standalone conv check
  therefore compares the production surrogate against finite differences
  of the alpha-relaxed forward (sign -> tanh(alpha*u)) with operand
  magnitudes drawn in [0.7, 1.5], outside the surrogate's delta region.
  The end-to-end bottleneck check runs its conv stage in relaxed mode
  (relaxed forward + its exact gradient), which exercises the whole
  backward chain against a differentiable oracle; the surrogate formula
  itself is verified symbolically in the operator tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Bottleneck, BottleneckConfig, FwhtExpand, FwhtProject, MfDsConv
from .mf_ops import MfVariant, PadMode
from .thresholding import (
    Variant,
    smooth_threshold,
    smooth_threshold_grad,
    weighted_smooth_threshold,
    weighted_smooth_threshold_grad,
)

__all__ = ["GroupResult", "CheckResult", "numeric_grad", "run_check", "CHECK_TARGETS"]


@dataclass
class GroupResult:
    name: str
    max_abs: float
    max_rel: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel <= self.tol

    def to_dict(self) -> dict:
        return {
            "group": self.name,
            "max_abs": self.max_abs,
            "max_rel": self.max_rel,
            "tol": self.tol,
            "ok": self.ok,
        }


@dataclass
class CheckResult:
    target: str
    groups: list[GroupResult]

    @property
    def ok(self) -> bool:
        return all(g.ok for g in self.groups)


def numeric_grad(loss_fn, arr: np.ndarray, eps: float) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. the live array ``arr``."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = loss_fn()
        flat[i] = old - eps
        fm = loss_fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def _group(name: str, analytic: np.ndarray, fd: np.ndarray, tol: float) -> GroupResult:
    diff = float(np.max(np.abs(np.asarray(analytic, dtype=np.float64) - fd))) if fd.size else 0.0
    scale = max(1.0, float(np.max(np.abs(fd)))) if fd.size else 1.0
    return GroupResult(name, diff, diff / scale, tol)


def _check_smooth(seed: int, tol: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    n = 512
    x = rng.uniform(-3, 3, n)
    t = rng.uniform(0.0, 1.5, n)
    keep = np.abs(np.abs(x) - t) >= 1e-2
    x, t = x[keep], t[keep]
    eps = 1e-4
    fd_x = (smooth_threshold(x + eps, t) - smooth_threshold(x - eps, t)) / (2 * eps)
    fd_t = (smooth_threshold(x, t + eps) - smooth_threshold(x, t - eps)) / (2 * eps)
    ddx, ddt = smooth_threshold_grad(x, t)
    return CheckResult(
        "smooth",
        [_group("d/dx", ddx, fd_x, tol), _group("d/dT", ddt, fd_t, tol)],
    )


def _check_weighted(seed: int, tol: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    n = 512
    x = rng.uniform(-3, 3, n)
    w = rng.uniform(-2, 2, n)
    t = rng.uniform(0.0, 1.5, n)
    keep = np.abs(np.abs(w * x) - t) >= 1e-2
    x, w, t = x[keep], w[keep], t[keep]
    eps = 1e-4
    f = weighted_smooth_threshold
    fd_x = (f(x + eps, w, t) - f(x - eps, w, t)) / (2 * eps)
    fd_w = (f(x, w + eps, t) - f(x, w - eps, t)) / (2 * eps)
    fd_t = (f(x, w, t + eps) - f(x, w, t - eps)) / (2 * eps)
    ddx, ddw, ddt = weighted_smooth_threshold_grad(x, w, t)
    return CheckResult(
        "weighted",
        [
            _group("d/dx", ddx, fd_x, tol),
            _group("d/dw", ddw, fd_w, tol),
            _group("d/dT", ddt, fd_t, tol),
        ],
    )


def _set_thresholds(layer, rng) -> None:
    tp = layer.threshold_params
    if tp is not None:
        tp.thresholds[...] = rng.uniform(0.05, 0.25, tp.thresholds.shape)


def _threshold_margin(layer) -> float:
    tp = layer.threshold_params
    if tp is None:
        return np.inf
    if isinstance(layer, FwhtExpand):
        coeffs = layer._y[..., 1:]
    else:
        coeffs = layer._mids
    return float(np.min(np.abs(np.abs(coeffs) - tp.thresholds)))


def _layer_check(
    name: str, layer, x: np.ndarray, margin_fn, tol: float, eps: float, rng
) -> CheckResult:
    upstream = rng.standard_normal(layer.forward(x, training=True).shape)
    if margin_fn is not None and margin_fn() < 10 * eps:
        raise _RetryDraw()

    def loss() -> float:
        return float(np.sum(layer.forward(x, training=True) * upstream))

    layer.zero_grads()
    layer.forward(x, training=True)
    grad_in = layer.backward(upstream.copy())
    analytic = {"input": grad_in}
    analytic.update({k: v.copy() for k, v in layer.grads().items()})
    groups = [_group("input", analytic["input"], numeric_grad(loss, x, eps), tol)]
    for key, arr in layer.params().items():
        groups.append(_group(key, analytic[key], numeric_grad(loss, arr, eps), tol))
    return CheckResult(name, groups)


class _RetryDraw(Exception):
    pass


def _with_retries(builder, attempts: int = 50) -> CheckResult:
    last = None
    for trial in range(attempts):
        try:
            return builder(trial)
        except _RetryDraw as exc:  # margin too tight; redraw
            last = exc
    raise RuntimeError(f"no margin-safe configuration found in {attempts} draws") from last


def _check_fwht_expand(seed: int, tol: float) -> CheckResult:
    def build(trial: int) -> CheckResult:
        rng = np.random.default_rng(seed + 1000 * trial)
        layer = FwhtExpand(5, 12, Variant.SMOOTH, dtype=np.float64)
        _set_thresholds(layer, rng)
        x = rng.standard_normal((2, 3, 3, 5))

        def margin() -> float:
            return _threshold_margin(layer)

        return _layer_check("fwht-expand", layer, x, margin, tol, 1e-5, rng)

    return _with_retries(build)


def _check_fwht_project(seed: int, tol: float) -> CheckResult:
    def build(trial: int) -> CheckResult:
        rng = np.random.default_rng(seed + 1000 * trial)
        layer = FwhtProject(8, 3, Variant.SMOOTH, dtype=np.float64)
        _set_thresholds(layer, rng)
        x = rng.standard_normal((2, 4, 4, 8))

        def margin() -> float:
            return _threshold_margin(layer)

        return _layer_check("fwht-project", layer, x, margin, tol, 1e-5, rng)

    return _with_retries(build)


def _check_mf_conv(seed: int, tol: float) -> CheckResult:
    """Production surrogate vs finite differences of the relaxed forward."""
    rng = np.random.default_rng(seed)
    channels = 3
    formula = MfDsConv(channels, MfVariant.SUM_MAG, 10.0, 1, PadMode.VALID,
                       rng, "formula", np.float64)
    relaxed = MfDsConv(channels, MfVariant.SUM_MAG, 10.0, 1, PadMode.VALID,
                       rng, "relaxed", np.float64)
    # magnitudes in [0.7, 1.5] keep every operand out of the delta region
    w = rng.uniform(0.7, 1.5, formula.kernel.weights.shape) * rng.choice(
        [-1.0, 1.0], formula.kernel.weights.shape
    )
    formula.kernel.weights[...] = w
    relaxed.kernel.weights[...] = w
    x = rng.uniform(0.7, 1.5, (2, 5, 5, channels)) * rng.choice(
        [-1.0, 1.0], (2, 5, 5, channels)
    )
    upstream = rng.standard_normal(formula.forward(x).shape)

    def loss() -> float:
        return float(np.sum(relaxed.forward(x) * upstream))

    formula.zero_grads()
    formula.forward(x)
    grad_in = formula.backward(upstream.copy())
    eps = 1e-5
    groups = [
        _group("input", grad_in, numeric_grad(loss, x, eps), tol),
        _group(
            "weights",
            formula.grads()["weights"],
            numeric_grad(loss, relaxed.kernel.weights, eps),
            tol,
        ),
    ]
    return CheckResult("mf-conv", groups)


def _relu_margin(block: Bottleneck) -> float:
    margins = []
    for act in (block.act1, block.act2, block.act3):
        if act is None or act._x is None:
            continue
        margins.append(float(np.min(np.minimum(np.abs(act._x), np.abs(act._x - 6.0)))))
    return min(margins) if margins else np.inf


def _check_bottleneck(seed: int, tol: float) -> CheckResult:
    def build(trial: int) -> CheckResult:
        rng = np.random.default_rng(seed + 1000 * trial)
        cfg = BottleneckConfig(k=4, k_prime=4, t=4, s=1)
        block = Bottleneck(cfg, Variant.SMOOTH, rng=rng, surrogate="relaxed",
                           dtype=np.float64)
        _set_thresholds(block.expand, rng)
        _set_thresholds(block.project, rng)
        x = rng.standard_normal((2, 4, 4, 4))

        def margin() -> float:
            return min(
                _threshold_margin(block.expand),
                _threshold_margin(block.project),
                _relu_margin(block),
            )

        return _layer_check("bottleneck", block, x, margin, tol, 1e-5, rng)

    return _with_retries(build)


CHECK_TARGETS = {
    "smooth": (_check_smooth, 1e-4),
    "weighted": (_check_weighted, 1e-4),
    "fwht-expand": (_check_fwht_expand, 1e-3),
    "fwht-project": (_check_fwht_project, 1e-3),
    "mf-conv": (_check_mf_conv, 1e-2),
    "bottleneck": (_check_bottleneck, 1e-2),
}


def run_check(target: str, seed: int = 0, tol: float | None = None) -> CheckResult:
    """Run one named finite-difference check; ``tol=None`` uses the default."""
    if target not in CHECK_TARGETS:
        raise ValueError(
            f"unknown target {target!r}; choose from {sorted(CHECK_TARGETS)}"
        )
    fn, default_tol = CHECK_TARGETS[target]
    return fn(seed, default_tol if tol is None else tol)
