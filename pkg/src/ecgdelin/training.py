"""Gradient-descent training: Adam, data sources, checkpoints, loss logs.

The training loss is a weighted sum of the three segmentation losses; all
three are evaluated every step so the log always carries the full picture,
whatever the weights. Synthetic samples are generated online: each batch
advances the generator's record index, so no dataset is materialized and a
(config, seed) pair fixes the whole loss trajectory. A non-finite loss
aborts the run with the parameters from the last finite step attached.

Checkpoints are a single file: a one-line JSON manifest (format version,
config echo, step, seed, tensor table) followed by the raw tensor values as
little-endian 32-bit floats in manifest order. Batch-norm running statistics
are stored alongside the weights, flagged non-trainable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationConfig, augment
from .errors import ConfigError, DataFormatError, TrainingDiverged
from .evaluation import normalize_input
from .losses import boundary_loss, dice_loss, f1_instance_loss
from .network import ModelParams, NetworkConfig, build, forward
from .records import DelineationMask, EcgRecord
from .synth import SyntheticGenerator

_CHECKPOINT_VERSION = 1
LOG_HEADER = "epoch,step,loss_total,loss_dice,loss_boundary,loss_f1"

_DATA_MIXES = ("real", "synthetic", "both")


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    steps_per_epoch: int = 100
    epochs: int = 1
    w_dice: float = 1.0
    w_boundary: float = 0.0
    w_f1: float = 0.0
    boundary_n: int = 11
    loss_eps: float = 1.0
    data_mix: str = "synthetic"
    input_length: int = 512
    seed: int = 123456

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("moment decays must be in [0,1)")
        for name in ("batch_size", "steps_per_epoch", "epochs", "input_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("w_dice", "w_boundary", "w_f1"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.data_mix not in _DATA_MIXES:
            raise ConfigError(f"data_mix must be one of {_DATA_MIXES}, got {self.data_mix!r}")


class Adam:
    """Adam with bias correction; one slot pair per trainable tensor."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# Data sources: anything with .batch(batch_size, rng) -> (x, y)


def _fit_length(signal: np.ndarray, mask: np.ndarray, n: int):
    if signal.size >= n:
        return signal[:n], mask[:, :n]
    pad = n - signal.size
    return np.pad(signal, (0, pad)), np.pad(mask, ((0, 0), (0, pad)))


class SyntheticSource:
    """Online generation; every drawn sample advances the record index."""

    def __init__(
        self,
        generator: SyntheticGenerator,
        input_length: int | None = None,
        augmentation: AugmentationConfig | None = None,
    ):
        self.generator = generator
        self.input_length = input_length or generator.config.target_length
        self.augmentation = augmentation
        self.cursor = 0

    def batch(self, batch_size: int, rng: np.random.Generator):
        fs = self.generator.config.target_fs
        xs, ys = [], []
        for _ in range(batch_size):
            rec = self.generator.record(self.cursor)
            self.cursor += 1
            sig, mask = _fit_length(rec.signal.signal[0], rec.mask.data, self.input_length)
            if self.augmentation is not None and self.augmentation.any_enabled():
                sig = augment(sig, self.augmentation, rng, fs=fs)
            xs.append(normalize_input(sig))
            ys.append(mask)
        x = np.stack(xs)[:, None, :]
        y = np.stack(ys).astype(np.float64)
        return x, y


class RealSource:
    """Random single-lead windows from annotated records."""

    def __init__(
        self,
        pairs: list[tuple[EcgRecord, DelineationMask]],
        input_length: int,
        augmentation: AugmentationConfig | None = None,
    ):
        if not pairs:
            raise ConfigError("real data source needs at least one record")
        self.pairs = pairs
        self.input_length = input_length
        self.augmentation = augmentation

    def batch(self, batch_size: int, rng: np.random.Generator):
        xs, ys = [], []
        for _ in range(batch_size):
            rec, mask = self.pairs[int(rng.integers(0, len(self.pairs)))]
            lead = int(rng.integers(0, rec.n_leads))
            start = 0
            if rec.n_samples > self.input_length:
                start = int(rng.integers(0, rec.n_samples - self.input_length + 1))
            sig = rec.signal[lead, start:start + self.input_length]
            m = mask.data[:, start:start + self.input_length]
            sig, m = _fit_length(sig, m, self.input_length)
            if self.augmentation is not None and self.augmentation.any_enabled():
                sig = augment(sig, self.augmentation, rng, fs=rec.sampling_rate)
            xs.append(normalize_input(sig))
            ys.append(m)
        return np.stack(xs)[:, None, :], np.stack(ys).astype(np.float64)


class MixedSource:
    """Per-sample coin flip between two sources."""

    def __init__(self, first, second, first_fraction: float = 0.5):
        if not 0.0 <= first_fraction <= 1.0:
            raise ConfigError(f"first_fraction must be in [0,1], got {first_fraction}")
        self.first = first
        self.second = second
        self.first_fraction = first_fraction

    def batch(self, batch_size: int, rng: np.random.Generator):
        k = int(rng.binomial(batch_size, self.first_fraction))
        parts = []
        if k:
            parts.append(self.first.batch(k, rng))
        if batch_size - k:
            parts.append(self.second.batch(batch_size - k, rng))
        xs = np.concatenate([p[0] for p in parts])
        ys = np.concatenate([p[1] for p in parts])
        return xs, ys


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    params: ModelParams
    log: list[tuple[int, int, float, float, float, float]] = field(default_factory=list)


def _pad_to_divisor(x: np.ndarray, y: np.ndarray, divisor: int):
    n = x.shape[-1]
    if n % divisor == 0:
        return x, y
    pad = divisor - n % divisor
    return (
        np.pad(x, ((0, 0), (0, 0), (0, pad))),
        np.pad(y, ((0, 0), (0, 0), (0, pad))),
    )


def train(
    trainer: TrainerConfig,
    net: NetworkConfig,
    source,
    *,
    params: ModelParams | None = None,
    on_step=None,
) -> TrainResult:
    """Run the configured number of epochs over online batches.

    Returns the trained parameters plus one log row per step:
    (epoch, step, loss_total, loss_dice, loss_boundary, loss_f1).
    Raises :class:`TrainingDiverged` (carrying the last finite parameters
    and the partial log) as soon as the total loss goes non-finite.
    """
    rng = np.random.default_rng(trainer.seed)
    if params is None:
        params = build(net, rng)
    opt = Adam(
        params.trainable(),
        lr=trainer.learning_rate,
        beta1=trainer.beta1,
        beta2=trainer.beta2,
        eps=trainer.adam_eps,
    )
    rows: list[tuple[int, int, float, float, float, float]] = []
    last_good = params.copy()
    step = 0
    for epoch in range(trainer.epochs):
        for _ in range(trainer.steps_per_epoch):
            x, y = source.batch(trainer.batch_size, rng)
            x, y = _pad_to_divisor(x, y, net.length_divisor)
            pred = forward(params, x, training=True, rng=rng)
            l_dice = dice_loss(pred, y, eps=trainer.loss_eps)
            l_bound = boundary_loss(pred, y, n=trainer.boundary_n, eps=trainer.loss_eps)
            l_f1 = f1_instance_loss(pred, y, eps=trainer.loss_eps)
            total = (
                trainer.w_dice * l_dice
                + trainer.w_boundary * l_bound
                + trainer.w_f1 * l_f1
            )
            total_value = float(total.item())
            if not np.isfinite(total_value):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} step {step}",
                    params=last_good,
                    log=rows,
                )
            row = (
                epoch, step, total_value,
                float(l_dice.item()), float(l_bound.item()), float(l_f1.item()),
            )
            rows.append(row)
            opt.zero_grad()
            total.backward()
            opt.step()
            last_good = params.copy()
            if on_step is not None:
                on_step(row)
            step += 1
    return TrainResult(params=params, log=rows)


def write_loss_log(rows, path) -> None:
    lines = [LOG_HEADER]
    for epoch, step, total, d, b, f in rows:
        lines.append(f"{epoch},{step},{total!r},{d!r},{b!r},{f!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    params: ModelParams,
    path,
    *,
    step: int = 0,
    seed: int | None = None,
    extra: dict | None = None,
) -> None:
    """Write the versioned manifest line plus little-endian float32 tensors."""
    manifest = {
        "version": _CHECKPOINT_VERSION,
        "step": int(step),
        "seed": seed,
        "network": asdict(params.config),
        "tensors": [
            {
                "name": name,
                "shape": list(t.shape),
                "trainable": bool(t.requires_grad),
            }
            for name, t in params.tensors.items()
        ],
    }
    if extra:
        manifest["extra"] = extra
    blob = bytearray(json.dumps(manifest).encode("utf-8") + b"\n")
    for t in params.tensors.values():
        blob += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns the parameters and the manifest."""
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataFormatError(f"{path}: missing checkpoint manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable manifest: {exc}") from None
    if manifest.get("version") != _CHECKPOINT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}"
        )
    config = NetworkConfig(**manifest["network"])
    from .autodiff import DiffTensor  # local to avoid cycle at import time

    tensors: dict[str, DiffTensor] = {}
    offset = nl + 1
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise DataFormatError(f"{path}: truncated tensor data for {entry['name']}")
        values = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = DiffTensor(
            values.astype(np.float64),
            requires_grad=bool(entry["trainable"]),
            name=entry["name"],
        )
        offset = end
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes after tensors")
    return ModelParams(config=config, tensors=tensors), manifest
