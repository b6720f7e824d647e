"""Core signal and annotation types.

An ECG recording is carried around as an :class:`EcgRecord` (leads x samples,
millivolts).  Ground truth exists in two interchangeable forms: a boolean
:class:`DelineationMask` of shape ``3 x N`` (one channel per wave, fixed order
P=0, QRS=1, T=2) and a :class:`FiducialSet` of per-wave ``(onset, offset)``
index pairs.  Onsets are inclusive and offsets exclusive, so a pair's length
is simply ``offset - onset``; zero-length waves are therefore impossible by
construction.

All types are immutable values after construction and safe to share between
workers.  Conversions between the two ground-truth forms live here as pure
functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import DataFormatError, ShapeError


class WaveKind(IntEnum):
    """The three annotated wave classes, in fixed channel order."""

    P = 0
    QRS = 1
    T = 2


class SegmentKind(Enum):
    """The six building blocks of a cardiac cycle, in cyclic order."""

    P = "P"
    PQ = "PQ"
    QRS = "QRS"
    ST = "ST"
    T = "T"
    TP = "TP"


#: Cyclic composition order of a full cardiac cycle.
CYCLE_ORDER: tuple[SegmentKind, ...] = (
    SegmentKind.P,
    SegmentKind.PQ,
    SegmentKind.QRS,
    SegmentKind.ST,
    SegmentKind.T,
    SegmentKind.TP,
)

#: Segment kinds that carry a wave label in the mask.
WAVE_OF_SEGMENT: dict[SegmentKind, WaveKind] = {
    SegmentKind.P: WaveKind.P,
    SegmentKind.QRS: WaveKind.QRS,
    SegmentKind.T: WaveKind.T,
}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EcgRecord:
    """A multi-lead sampled trace with its sampling rate and identifiers.

    ``signal`` has shape ``(n_leads, n_samples)`` in millivolts.
    """

    id: str
    sampling_rate: float
    lead_names: tuple[str, ...]
    signal: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        if sig.ndim != 2:
            raise ShapeError(f"signal must be 2-D (leads x samples), got {sig.shape}")
        if self.sampling_rate <= 0:
            raise DataFormatError(f"sampling_rate must be > 0, got {self.sampling_rate}")
        if len(self.lead_names) != sig.shape[0]:
            raise DataFormatError(
                f"{len(self.lead_names)} lead names for {sig.shape[0]} signal rows"
            )
        object.__setattr__(self, "lead_names", tuple(self.lead_names))
        object.__setattr__(self, "signal", _readonly(sig))

    @property
    def n_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def duration(self) -> float:
        """Record length in seconds."""
        return self.n_samples / self.sampling_rate

    def lead(self, name: str) -> np.ndarray:
        """Return one lead's samples by name."""
        try:
            return self.signal[self.lead_names.index(name)]
        except ValueError:
            raise KeyError(f"no lead named {name!r}") from None


@dataclass(frozen=True)
class DelineationMask:
    """Per-wave boolean mask of shape ``3 x N``.

    Each channel is a union of disjoint maximal runs of ``True``; channel
    order is fixed by :class:`WaveKind`.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2 or d.shape[0] != len(WaveKind):
            raise ShapeError(f"mask must be 3 x N, got {d.shape}")
        if d.shape[1] == 0:
            raise ShapeError("mask must have N > 0 samples")
        object.__setattr__(self, "data", _readonly(d))

    @classmethod
    def zeros(cls, n: int) -> "DelineationMask":
        return cls(np.zeros((len(WaveKind), n), dtype=bool))

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def channel(self, wave: WaveKind) -> np.ndarray:
        return self.data[int(wave)]


def _validate_pairs(wave: WaveKind, pairs) -> tuple[tuple[int, int], ...]:
    clean = []
    prev_off = -1
    for on, off in pairs:
        on, off = int(on), int(off)
        if on < 0 or not on < off:
            raise DataFormatError(f"{wave.name}: invalid pair ({on}, {off})")
        if on < prev_off:
            raise DataFormatError(f"{wave.name}: pairs overlap or are unsorted at ({on}, {off})")
        clean.append((on, off))
        prev_off = off
    return tuple(clean)


@dataclass(frozen=True)
class FiducialSet:
    """Ordered ``(onset, offset)`` pairs per wave, offsets exclusive."""

    waves: dict[WaveKind, tuple[tuple[int, int], ...]] = field(default_factory=dict)

    def __post_init__(self):
        full = {w: _validate_pairs(w, self.waves.get(w, ())) for w in WaveKind}
        object.__setattr__(self, "waves", full)

    @classmethod
    def empty(cls) -> "FiducialSet":
        return cls({})

    def pairs(self, wave: WaveKind) -> tuple[tuple[int, int], ...]:
        return self.waves[wave]

    def count(self, wave: WaveKind) -> int:
        return len(self.waves[wave])

    def is_empty(self) -> bool:
        return all(not v for v in self.waves.values())

    def shift(self, delta: int) -> "FiducialSet":
        """Translate all pairs by ``delta`` samples."""
        return FiducialSet(
            {w: tuple((on + delta, off + delta) for on, off in ps) for w, ps in self.waves.items()}
        )


def fiducials_from_mask(mask: DelineationMask) -> FiducialSet:
    """Extract one ``(onset, offset)`` pair per maximal true-run of each channel.

    Runs touching the record edges are reported with onset 0 / offset N.
    Total function: an all-false mask yields an empty set.
    """
    waves = {}
    for wave in WaveKind:
        ch = mask.channel(wave)
        padded = np.concatenate(([False], ch, [False]))
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        waves[wave] = tuple(zip(edges[0::2].tolist(), edges[1::2].tolist()))
    return FiducialSet(waves)


def mask_from_fiducials(fids: FiducialSet, n: int) -> DelineationMask:
    """Rasterize fiducial pairs into a ``3 x n`` boolean mask.

    Raises :class:`ShapeError` if any offset exceeds ``n``.
    """
    data = np.zeros((len(WaveKind), n), dtype=bool)
    for wave in WaveKind:
        for on, off in fids.pairs(wave):
            if off > n:
                raise ShapeError(f"{wave.name}: offset {off} out of range for n={n}")
            data[int(wave), on:off] = True
    return DelineationMask(data)
