"""Desk-scale training harness.

A Model is a plain layer stack trained by SGD with momentum on softmax
cross-entropy. Two reference builders exist: ``toy-fwht`` (conv stem,
three transform-based bottlenecks, global average pool, dropout, dense
head) and ``toy-conv``, its twin with the transform bottlenecks replaced
by ordinary pointwise/depthwise convolutions. Runs are deterministic for
a fixed seed: init, shuffling, and dropout all derive from it.

Checkpoints are a text manifest (one ``name shape dtype offset`` line per
stored array, byte offsets into the blob) next to a flat little-endian
float32 blob; a leading comment line records the model spec so a model
can be rebuilt from the checkpoint alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import (
    BatchNorm,
    Bottleneck,
    BottleneckConfig,
    Layer,
    ReLU6,
)
from .mf_ops import MfVariant, PadMode
from .nn import Conv2d, ConvBottleneck, Dense, Dropout, GlobalAvgPool
from .thresholding import Variant

__all__ = [
    "TrainConfig",
    "Model",
    "ModelSpec",
    "build_model",
    "build_toy_fwht",
    "build_toy_conv",
    "sgd_momentum_step",
    "cross_entropy",
    "evaluate",
    "train_loop",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CheckpointLengthError",
    "UnknownLayerKindError",
]

MODEL_KINDS = ("toy-fwht", "toy-conv")


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class ModelSpec:
    """Enough to rebuild a model: kind plus its keyword options."""

    kind: str
    threshold: str = "smooth"
    class_count: int = 10
    seed: int = 0
    final_relu6: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "class_count": self.class_count,
            "seed": self.seed,
            "final_relu6": self.final_relu6,
        }


class Model:
    def __init__(self, layers: list[Layer], spec: ModelSpec) -> None:
        self.layers = layers
        self.spec = spec

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = x
        for layer in self.layers:
            out = layer.forward(out, training)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = grad
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def _collect(self, getter) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for key, val in getter(layer).items():
                out[f"layer{i}.{key}"] = val
        return out

    def params(self) -> dict[str, np.ndarray]:
        return self._collect(lambda l: l.params())

    def grads(self) -> dict[str, np.ndarray]:
        return self._collect(lambda l: l.grads())

    def state(self) -> dict[str, np.ndarray]:
        return self._collect(lambda l: l.state())

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params().values())

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def predict_logits(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = [
            self.forward(x[i : i + batch_size], training=False)
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(outs, axis=0)


def _toy_bottleneck_configs() -> list[BottleneckConfig]:
    # stride-2 first so the two wider blocks run at quarter resolution;
    # the last block exercises the residual case (s == 1, k == k')
    return [
        BottleneckConfig(k=8, k_prime=8, t=4, s=2),
        BottleneckConfig(k=8, k_prime=16, t=4, s=1),
        BottleneckConfig(k=16, k_prime=16, t=4, s=1),
    ]


def build_toy_fwht(
    threshold: Variant = Variant.SMOOTH,
    class_count: int = 10,
    seed: int = 0,
    final_relu6: bool = True,
) -> Model:
    rng = np.random.default_rng(seed)
    layers: list[Layer] = [
        Conv2d(1, 8, ksize=3, stride=2, padding=PadMode.SAME, rng=rng),
        BatchNorm(8),
        ReLU6(),
    ]
    for cfg in _toy_bottleneck_configs():
        layers.append(
            Bottleneck(
                cfg,
                variant=threshold,
                mf_variant=MfVariant.SUM_MAG,
                final_relu6=final_relu6,
                rng=rng,
            )
        )
    layers += [
        GlobalAvgPool(),
        Dropout(0.2, rng=np.random.default_rng(seed + 1)),
        Dense(16, class_count, rng=rng),
    ]
    spec = ModelSpec("toy-fwht", threshold.value, class_count, seed, final_relu6)
    return Model(layers, spec)


def build_toy_conv(
    class_count: int = 10, seed: int = 0, final_relu6: bool = True
) -> Model:
    rng = np.random.default_rng(seed)
    layers: list[Layer] = [
        Conv2d(1, 8, ksize=3, stride=2, padding=PadMode.SAME, rng=rng),
        BatchNorm(8),
        ReLU6(),
    ]
    for cfg in _toy_bottleneck_configs():
        layers.append(ConvBottleneck(cfg, final_relu6=final_relu6, rng=rng))
    layers += [
        GlobalAvgPool(),
        Dropout(0.2, rng=np.random.default_rng(seed + 1)),
        Dense(16, class_count, rng=rng),
    ]
    spec = ModelSpec("toy-conv", "smooth", class_count, seed, final_relu6)
    return Model(layers, spec)


def build_model(spec: ModelSpec | dict) -> Model:
    if isinstance(spec, dict):
        spec = ModelSpec(
            kind=spec["kind"],
            threshold=spec.get("threshold", "smooth"),
            class_count=spec.get("class_count", 10),
            seed=spec.get("seed", 0),
            final_relu6=spec.get("final_relu6", True),
        )
    if spec.kind == "toy-fwht":
        return build_toy_fwht(
            Variant(spec.threshold), spec.class_count, spec.seed, spec.final_relu6
        )
    if spec.kind == "toy-conv":
        return build_toy_conv(spec.class_count, spec.seed, spec.final_relu6)
    raise UnknownLayerKindError(f"unknown model kind {spec.kind!r}")


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    cfg: TrainConfig,
):
    """v <- momentum*v + g; p <- p - lr*v. Updates arrays in place."""
    for key, p in params.items():
        g = grads[key]
        v = velocity.setdefault(key, np.zeros_like(p))
        v *= p.dtype.type(cfg.momentum)
        v += g
        p -= p.dtype.type(cfg.learning_rate) * v
    return params, velocity


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    n, classes = logits.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels must lie in [0, {classes}), got "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    logsumexp = np.log(exp.sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    grad = softmax.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def evaluate(model: Model, x: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    logits = model.predict_logits(x, batch_size)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_loop(
    model: Model,
    train_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    test_data: tuple[np.ndarray, np.ndarray] | None = None,
    sink=None,
) -> list[dict]:
    """Train and return one history record per epoch.

    ``sink``, if given, is called with each epoch record as it is produced
    (the CLI uses it to stream JSON lines).
    """
    x, labels = train_data
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    # surface layer-stack shape mismatches before any parameter is touched
    probe = model.forward(x[:1], training=False)
    if probe.ndim != 2 or probe.shape[0] != 1:
        raise ValueError(f"model must map one image to logits, got {probe.shape}")
    rng = np.random.default_rng(cfg.seed)
    velocity: dict[str, np.ndarray] = {}
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(x.shape[0])
        total_loss = 0.0
        correct = 0
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], labels[idx]
            model.zero_grads()
            logits = model.forward(xb, training=True)
            loss, grad = cross_entropy(logits, yb)
            model.backward(grad)
            sgd_momentum_step(model.params(), model.grads(), velocity, cfg)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        record = {
            "epoch": epoch,
            "loss": total_loss / x.shape[0],
            "train_accuracy": correct / x.shape[0],
            "seconds": round(time.perf_counter() - t0, 3),
        }
        if test_data is not None:
            record["test_accuracy"] = evaluate(model, *test_data, cfg.batch_size)
        history.append(record)
        if sink is not None:
            sink(record)
    return history


class CheckpointError(ValueError):
    """Base class for malformed checkpoints."""


class CheckpointLengthError(CheckpointError):
    """Manifest and blob disagree about sizes/offsets."""


class UnknownLayerKindError(CheckpointError):
    """Checkpoint names a model or parameter this build does not know."""


def _checkpoint_entries(model: Model) -> dict[str, np.ndarray]:
    entries = dict(model.params())
    entries.update(model.state())
    return entries


def save_checkpoint(model: Model, prefix) -> None:
    """Write ``<prefix>.manifest`` and ``<prefix>.bin``."""
    prefix = Path(prefix)
    entries = _checkpoint_entries(model)
    lines = [f"# hadanet-checkpoint v1 {json.dumps(model.spec.to_dict())}"]
    blob = bytearray()
    for name, arr in entries.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        shape = ",".join(str(d) for d in arr32.shape)
        lines.append(f"{name} {shape} f32 {len(blob)}")
        blob.extend(arr32.tobytes())
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(str(prefix) + ".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
    Path(str(prefix) + ".bin").write_bytes(bytes(blob))


def _parse_manifest(text: str):
    spec = None
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            brace = line.find("{")
            if spec is None and brace != -1:
                spec = json.loads(line[brace:])
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CheckpointError(f"manifest line {lineno} malformed: {line!r}")
        name, shape_s, dtype_s, offset_s = parts
        if dtype_s != "f32":
            raise CheckpointError(f"unsupported dtype {dtype_s!r} on line {lineno}")
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        entries.append((name, shape, int(offset_s)))
    if spec is None:
        raise CheckpointError("manifest has no model-spec header line")
    return spec, entries


def load_checkpoint(prefix) -> Model:
    """Rebuild the model recorded at ``<prefix>`` and restore every array bit-exactly."""
    prefix = Path(prefix)
    manifest_path = Path(str(prefix) + ".manifest")
    blob_path = Path(str(prefix) + ".bin")
    spec, entries = _parse_manifest(manifest_path.read_text(encoding="utf-8"))
    blob = blob_path.read_bytes()
    model = build_model(spec)
    targets = _checkpoint_entries(model)
    seen = set()
    total = 0
    for name, shape, offset in entries:
        if name not in targets:
            raise UnknownLayerKindError(f"checkpoint parameter {name!r} not in model")
        arr = targets[name]
        if tuple(arr.shape) != shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {shape} != model shape {tuple(arr.shape)}"
            )
        nbytes = arr.size * 4
        if offset + nbytes > len(blob):
            raise CheckpointLengthError(
                f"{name}: needs bytes [{offset}, {offset + nbytes}) but blob has "
                f"{len(blob)}"
            )
        arr[...] = np.frombuffer(blob, dtype="<f4", count=arr.size, offset=offset).reshape(shape)
        seen.add(name)
        total += nbytes
    if total != len(blob):
        raise CheckpointLengthError(
            f"blob has {len(blob)} bytes but manifest accounts for {total}"
        )
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
