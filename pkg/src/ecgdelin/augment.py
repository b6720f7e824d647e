"""Training-time stochastic signal corruption.

All effects perturb the signal only; delineation targets are untouched.
Effects are applied in a fixed order (wander, powerline, spikes, pacemaker,
white noise, saturation) so a given (signal, config, seed) triple always
yields the same output, and the all-disabled path returns the input
bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PACEMAKER_RATE_HZ = 1.0
_WANDER_COUNT = (1, 3)


@dataclass(frozen=True)
class AugmentationConfig:
    """Per-effect switches and magnitudes; everything defaults to off."""

    wander: bool = False
    wander_band: tuple[float, float] = (0.05, 0.5)   # Hz
    wander_amplitude: float = 0.1                     # mV, per-sinusoid maximum
    powerline: bool = False
    powerline_freq: float = 50.0                      # Hz, mains
    powerline_amplitude: float = 0.05                 # mV
    spikes: bool = False
    spike_rate: float = 1.0                           # per second
    spike_amplitude: float = 0.3                      # fraction of max |signal|
    pacemaker: bool = False
    pacemaker_width: int = 3                          # samples
    pacemaker_amplitude: float = 1.0                  # mV
    white_noise: bool = False
    snr_db: float = 20.0
    saturation: bool = False
    saturation_level: float = 0.8                     # fraction of max |signal|
    rng_seed: int = 0

    def __post_init__(self):
        for name in (
            "wander_amplitude", "powerline_amplitude", "spike_rate",
            "spike_amplitude", "pacemaker_amplitude", "saturation_level",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.wander_band[0] > self.wander_band[1] or self.wander_band[0] <= 0:
            raise ValueError(f"wander_band must be a positive range, got {self.wander_band}")
        if self.powerline_freq <= 0:
            raise ValueError("powerline_freq must be positive")
        if self.pacemaker_width < 1:
            raise ValueError("pacemaker_width must be >= 1")

    def any_enabled(self) -> bool:
        return any((
            self.wander, self.powerline, self.spikes,
            self.pacemaker, self.white_noise, self.saturation,
        ))


def _periodic_indices(n: int, period: float, rng: np.random.Generator) -> np.ndarray:
    start = rng.uniform(0.0, period)
    idx = np.arange(start, n, period)
    return idx.astype(np.intp)


def augment(
    signal: np.ndarray,
    config: AugmentationConfig,
    rng: np.random.Generator,
    *,
    fs: float,
) -> np.ndarray:
    """Apply the enabled corruptions to a 1-D signal.

    Output length always equals input length.  The white-noise power is set
    against the power of the signal as it enters that stage; the saturation
    clip level is a fraction of the maximum absolute value entering that
    stage, so with saturation alone enabled the output peak is exactly
    ``saturation_level`` times the input peak.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal must be finite")
    out = x.copy()
    n = out.size
    if n == 0 or not config.any_enabled():
        return out

    t = np.arange(n) / fs

    if config.wander:
        for _ in range(int(rng.integers(_WANDER_COUNT[0], _WANDER_COUNT[1] + 1))):
            freq = rng.uniform(*config.wander_band)
            amp = rng.uniform(0.0, config.wander_amplitude)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            out += amp * np.sin(2.0 * np.pi * freq * t + phase)

    if config.powerline:
        if config.powerline_freq >= fs / 2.0:
            raise ValueError(
                f"powerline_freq {config.powerline_freq} Hz is not below fs/2 = {fs / 2.0} Hz"
            )
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += config.powerline_amplitude * np.sin(2.0 * np.pi * config.powerline_freq * t + phase)

    if config.spikes and config.spike_rate > 0:
        period = fs / config.spike_rate
        idx = _periodic_indices(n, period, rng)
        peak = float(np.max(np.abs(out)))
        for i in idx:
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            out[i] += sign * config.spike_amplitude * peak

    if config.pacemaker:
        period = fs / _PACEMAKER_RATE_HZ
        idx = _periodic_indices(n, period, rng)
        w = config.pacemaker_width
        for i in idx:
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            out[i:i + w] += sign * config.pacemaker_amplitude

    if config.white_noise:
        power = float(np.mean(out ** 2))
        sigma = np.sqrt(power / 10.0 ** (config.snr_db / 10.0))
        out += rng.normal(0.0, sigma, n)

    if config.saturation:
        clip = config.saturation_level * float(np.max(np.abs(out)))
        out = np.clip(out, -clip, clip)

    return out
