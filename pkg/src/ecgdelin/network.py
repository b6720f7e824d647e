"""1-D U-Net / W-Net segmenter assembled from the autodiff primitives.

Channel widths follow the doubling ladder: level i holds start_channels * 2^i
filters. Every conv block applies convolution, leaky rectifier, batch
normalization and whole-channel (spatial) dropout, in that order. Levels are
joined by max-pooling (kernel 2) on the way down and nearest-neighbor
upsampling followed by a convolution plus skip concatenation on the way up.
The head is a kernel-1 convolution to 3 channels with an elementwise logistic
activation: the three wave masks are independent binary targets, so each
channel gets its own probability rather than a softmax share.

The W-Net stacks a second U-Net on the first one's 3-channel output and
additionally feeds the first decoder's per-level feature maps into the
matching levels of the second encoder.

Parameters live in an ordered name -> tensor mapping; batch-norm running
statistics ride along as non-trainable entries so checkpoints capture them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ConfigError, ShapeError
from .records import DelineationMask

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.9  # running = m * running + (1 - m) * batch
_INIT_GAIN = 1.0    # uniform init bound = sqrt(3 * gain / fan_in)


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 5
    blocks_per_level: int = 1
    start_channels: int = 8
    kernel_size: int = 3
    use_wnet: bool = False
    use_eca: bool = False
    dropout: float = 0.25
    negative_slope: float = 0.01
    in_channels: int = 1
    out_channels: int = 3

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.blocks_per_level < 1:
            raise ConfigError(f"blocks_per_level must be >= 1, got {self.blocks_per_level}")
        if self.start_channels < 1:
            raise ConfigError(f"start_channels must be >= 1, got {self.start_channels}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")

    def channels(self, level: int) -> int:
        return self.start_channels * (1 << level)

    @property
    def length_divisor(self) -> int:
        return 1 << (self.depth - 1)


@dataclass
class ModelParams:
    """Ordered named tensors; trainables carry requires_grad."""

    config: NetworkConfig
    tensors: dict[str, DiffTensor] = field(default_factory=dict)

    def trainable(self) -> list[DiffTensor]:
        return [t for t in self.tensors.values() if t.requires_grad]

    def parameter_count(self, trainable_only: bool = True) -> int:
        return sum(
            t.size for t in self.tensors.values() if t.requires_grad or not trainable_only
        )

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        clone = {
            name: DiffTensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)
            for name, t in self.tensors.items()
        }
        return ModelParams(config=self.config, tensors=clone)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}


def eca_kernel_size(channels: int, gamma: float = 2.0, b: float = 1.0) -> int:
    """Adaptive odd kernel width from the channel count."""
    if channels < 1:
        raise ConfigError(f"channel count must be >= 1, got {channels}")
    t = int(abs((math.log2(channels) + b) / gamma))
    return max(1, t if t % 2 else t + 1)


def eca(x, weight: DiffTensor) -> DiffTensor:
    """Efficient channel attention: gate each channel by its neighbors.

    Channel descriptors (mean over length) are convolved across the channel
    axis and squashed to (0,1); the input is scaled per channel, uniformly
    along the length axis.
    """
    x = ad.astensor(x)
    bsz, c, _ = x.shape
    desc = ad.tmean(x, axis=2)                        # (B, C)
    desc = ad.reshape(desc, (bsz, 1, c))
    gate = ad.sigmoid(ad.conv1d(desc, weight))        # same-length padding
    return ad.mul(x, ad.reshape(gate, (bsz, c, 1)))


# ---------------------------------------------------------------------------
# Parameter construction


def _encoder_in_channels(config: NetworkConfig, unet_index: int, level: int) -> int:
    if level == 0:
        base = config.in_channels if unet_index == 0 else config.out_channels
    else:
        base = config.channels(level - 1)
    # the second U-Net's encoder also sees the first decoder's features
    if unet_index == 1 and level <= config.depth - 2:
        base += config.channels(level)
    return base


def _init_conv(tensors, name, rng, out_ch, in_ch, k):
    fan_in = in_ch * k
    bound = math.sqrt(3.0 * _INIT_GAIN / fan_in)
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k))
    tensors[f"{name}.w"] = ad.parameter(w, name=f"{name}.w")
    tensors[f"{name}.b"] = ad.parameter(np.zeros(out_ch), name=f"{name}.b")


def _init_block(tensors, name, rng, out_ch, in_ch, k):
    _init_conv(tensors, name, rng, out_ch, in_ch, k)
    tensors[f"{name}.bn.gamma"] = ad.parameter(np.ones(out_ch), name=f"{name}.bn.gamma")
    tensors[f"{name}.bn.beta"] = ad.parameter(np.zeros(out_ch), name=f"{name}.bn.beta")
    tensors[f"{name}.bn.mean"] = DiffTensor(np.zeros(out_ch), name=f"{name}.bn.mean")
    tensors[f"{name}.bn.var"] = DiffTensor(np.ones(out_ch), name=f"{name}.bn.var")


def _init_eca(tensors, name, rng, channels):
    k = eca_kernel_size(channels)
    bound = math.sqrt(3.0 * _INIT_GAIN / k)
    w = rng.uniform(-bound, bound, size=(1, 1, k))
    tensors[f"{name}.w"] = ad.parameter(w, name=f"{name}.w")


def build(config: NetworkConfig, rng: np.random.Generator) -> ModelParams:
    """Create freshly initialized parameters for the configured network.

    Weights are uniform with a fan-in bound sqrt(3/fan_in); biases start at
    zero, normalization at identity. The draw order is fixed so one seed
    always yields the same parameters.
    """
    tensors: dict[str, DiffTensor] = {}
    k = config.kernel_size
    n_unets = 2 if config.use_wnet else 1
    for u in range(n_unets):
        prefix = f"u{u + 1}."
        for i in range(config.depth):
            ch = config.channels(i)
            for blk in range(config.blocks_per_level):
                in_ch = _encoder_in_channels(config, u, i) if blk == 0 else ch
                _init_block(tensors, f"{prefix}enc{i}.b{blk}", rng, ch, in_ch, k)
            if config.use_eca:
                _init_eca(tensors, f"{prefix}eca_enc{i}", rng, ch)
        for j in reversed(range(config.depth - 1)):
            ch = config.channels(j)
            _init_conv(tensors, f"{prefix}up{j}", rng, ch, config.channels(j + 1), k)
            for blk in range(config.blocks_per_level):
                in_ch = 2 * ch if blk == 0 else ch
                _init_block(tensors, f"{prefix}dec{j}.b{blk}", rng, ch, in_ch, k)
            if config.use_eca:
                _init_eca(tensors, f"{prefix}eca_dec{j}", rng, ch)
        _init_conv(tensors, f"{prefix}head", rng, config.out_channels, config.channels(0), 1)
    return ModelParams(config=config, tensors=tensors)


# ---------------------------------------------------------------------------
# Forward pass


def _batch_norm(params, name, h, training):
    gamma = params.tensors[f"{name}.gamma"]
    beta = params.tensors[f"{name}.beta"]
    rmean = params.tensors[f"{name}.mean"]
    rvar = params.tensors[f"{name}.var"]
    c = h.shape[1]
    if training:
        mu = ad.tmean(h, axis=(0, 2), keepdims=True)
        centered = ad.add(h, ad.mul(mu, -1.0))
        var = ad.tmean(ad.mul(centered, centered), axis=(0, 2), keepdims=True)
        rmean.data = _BN_MOMENTUM * rmean.data + (1.0 - _BN_MOMENTUM) * mu.data.reshape(-1)
        rvar.data = _BN_MOMENTUM * rvar.data + (1.0 - _BN_MOMENTUM) * var.data.reshape(-1)
        inv = ad.power(ad.add(var, _BN_EPS), -0.5)
        normed = ad.mul(centered, inv)
    else:
        inv = (1.0 / np.sqrt(rvar.data + _BN_EPS)).reshape(1, c, 1)
        normed = ad.mul(ad.add(h, -rmean.data.reshape(1, c, 1)), inv)
    scaled = ad.mul(normed, ad.reshape(gamma, (1, c, 1)))
    return ad.add(scaled, ad.reshape(beta, (1, c, 1)))


def _conv(params, name, h):
    w = params.tensors[f"{name}.w"]
    b = params.tensors[f"{name}.b"]
    out = ad.conv1d(h, w)
    return ad.add(out, ad.reshape(b, (1, b.size, 1)))


def _dropout(h, p, rng):
    if p <= 0.0:
        return h
    bsz, c, _ = h.shape
    keep = (rng.uniform(size=(bsz, c, 1)) >= p) / (1.0 - p)
    return ad.mul(h, keep)


def _block(params, name, h, config, training, rng):
    h = _conv(params, name, h)
    h = ad.leaky_relu(h, config.negative_slope)
    h = _batch_norm(params, f"{name}.bn", h, training)
    if training:
        h = _dropout(h, config.dropout, rng)
    return h


def _level(params, scope, h, config, training, rng):
    for blk in range(config.blocks_per_level):
        h = _block(params, f"{scope}.b{blk}", h, config, training, rng)
    return h


def _unet(params, prefix, x, config, training, rng, extra_enc=None, collect_decoder=None):
    skips = []
    h = x
    for i in range(config.depth):
        if extra_enc is not None and i in extra_enc:
            h = ad.concat([h, extra_enc[i]], axis=1)
        h = _level(params, f"{prefix}enc{i}", h, config, training, rng)
        if config.use_eca:
            h = eca(h, params.tensors[f"{prefix}eca_enc{i}.w"])
        if i < config.depth - 1:
            skips.append(h)
            h = ad.maxpool2(h)
    for j in reversed(range(config.depth - 1)):
        h = ad.upsample2(h)
        h = _conv(params, f"{prefix}up{j}", h)
        h = ad.concat([skips[j], h], axis=1)
        h = _level(params, f"{prefix}dec{j}", h, config, training, rng)
        if config.use_eca:
            h = eca(h, params.tensors[f"{prefix}eca_dec{j}.w"])
        if collect_decoder is not None:
            collect_decoder[j] = h
    return h


def forward(
    params: ModelParams,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> DiffTensor:
    """Run the segmenter; returns per-channel probabilities in (0, 1).

    Output length equals input length; the input length must be divisible
    by 2^(depth-1) so the pooling ladder closes. Dropout and batch-stat
    updates happen only when ``training`` is true (which then requires an
    rng when dropout is enabled).
    """
    config = params.config
    x = ad.astensor(x)
    if x.ndim != 3 or x.shape[1] != config.in_channels:
        raise ShapeError(
            f"expected (batch, {config.in_channels}, length) input, got {x.shape}"
        )
    div = config.length_divisor
    n = x.shape[-1]
    if n % div:
        raise ShapeError(
            f"input length {n} is not divisible by {div}; pad to {((n // div) + 1) * div}"
        )
    if training and config.dropout > 0 and rng is None:
        raise ConfigError("training forward with dropout needs an rng")

    dec_feats: dict[int, DiffTensor] = {}
    h = _unet(
        params, "u1.", x, config, training, rng,
        collect_decoder=dec_feats if config.use_wnet else None,
    )
    out = ad.sigmoid(_conv(params, "u1.head", h))
    if not config.use_wnet:
        return out
    h = _unet(params, "u2.", out, config, training, rng, extra_enc=dec_feats)
    return ad.sigmoid(_conv(params, "u2.head", h))


def predict_mask(params: ModelParams, signal, threshold: float = 0.5) -> DelineationMask:
    """Segment one lead: pad to the pooling divisor, threshold, crop back."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D lead, got shape {x.shape}")
    n = x.size
    div = params.config.length_divisor
    pad = (div - n % div) % div
    batch = np.pad(x, (0, pad))[None, None, :]
    with ad.no_grad():
        probs = forward(params, batch, training=False)
    return DelineationMask(probs.data[0, :, :n] >= threshold)
