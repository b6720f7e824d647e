"""Pseudo-synthetic ECG composition from segment pools.

Records are assembled cycle by cycle.  Global rules (ventricular
tachycardia, atrial fibrillation, AV block, sinus arrest, ST shift) are
drawn once per record; per-cycle rules (segment suppression, U waves,
ectopics, wave merges) are drawn for every cardiac cycle.  Each rule flag is
set by comparing an independent uniform(0,1) draw against its configured
probability, in the fixed order documented on the sampling functions, so a
given (config, seed) pair always produces the same record.

Amplitudes follow the pooled laws: the QRS peak is a clamped normal draw and
every other wave's peak is the QRS peak times a log-normal draw.  Segment
templates are resampled to jittered lengths, sign-corrected against the
record's first segment of the same kind, and concatenated.  Post-composition
the whole trace is optionally stretched to a slower or faster rhythm (mask
boundaries remapped by exact index arithmetic), baseline wander and a global
amplitude factor are applied to the signal only, and the edges are flattened.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError
from .pools import AmplitudeModel, SegmentPool
from .records import (
    CYCLE_ORDER,
    DelineationMask,
    EcgRecord,
    FiducialSet,
    SegmentKind,
    WaveKind,
    fiducials_from_mask,
    mask_from_fiducials,
)

# Interpretation constants for rules the source material names but does not
# quantify.  All multiplicative; uniform ranges are sampled per occurrence.
_ECTOPIC_AMPLITUDE = (1.2, 2.0)
_ECTOPIC_DURATION = (1.5, 2.5)
_VT_QRS_DURATION = (1.4, 2.0)   # VT widens the QRS
_VT_TP_FACTOR = 0.3             # and shortens the diastolic pause
_AF_AMPLITUDE = (0.05, 0.15)    # fibrillatory ripple, fraction of QRS peak
_AF_JITTER_WIDEN = 2.0          # AF doubles the cycle-length jitter span
_U_AMPLITUDE = (0.1, 0.3)       # U peak as a fraction of the drawn P peak
_WANDER_COUNT = (1, 3)
_WANDER_FREQ = (0.05, 0.5)      # Hz
_WANDER_AMPLITUDE = (0.02, 0.15)  # mV
_ARREST_AFTER_CYCLES = (1, 5)   # sinus arrest slots in after this many cycles
_MAX_EMPTY_CYCLES = 1000

_LABEL_OF_KIND = {
    SegmentKind.P: int(WaveKind.P),
    SegmentKind.QRS: int(WaveKind.QRS),
    SegmentKind.T: int(WaveKind.T),
}


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for the synthesizer; every probability is a per-draw threshold."""

    target_fs: float = 250.0
    target_length: int = 2048
    p_vt: float = 0.05
    p_af: float = 0.05
    p_av_block: float = 0.05
    p_sinus_arrest: float = 0.05
    p_st_shift: float = 0.10
    p_no_p: float = 0.05
    p_no_qrst: float = 0.05
    p_no_pq: float = 0.05
    p_no_st: float = 0.05
    p_no_tp: float = 0.05
    p_u_wave: float = 0.05
    p_ectopic: float = 0.08
    p_merge_pqrs: float = 0.05
    p_merge_qrst: float = 0.05
    p_merge_tp: float = 0.05
    sinus_arrest_duration: tuple[float, float] = (1.0, 3.0)   # seconds
    st_shift_range: tuple[float, float] = (-0.25, 0.25)       # fraction of QRS peak
    jitter_range: tuple[float, float] = (0.8, 1.2)
    qrs_amplitude_range: tuple[float, float] = (0.1, 2.0)     # clamp on the normal draw
    global_amplitude_range: tuple[float, float] = (0.5, 2.0)
    rhythm_range: tuple[float, float] = (0.9, 1.1)            # whole-trace stretch factor
    flat_edge_max: float = 0.4                                # seconds per edge
    interpolation: str = "linear"
    rng_seed: int = 123456

    def __post_init__(self):
        for name in (
            "p_vt", "p_af", "p_av_block", "p_sinus_arrest", "p_st_shift",
            "p_no_p", "p_no_qrst", "p_no_pq", "p_no_st", "p_no_tp",
            "p_u_wave", "p_ectopic", "p_merge_pqrs", "p_merge_qrst", "p_merge_tp",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        for name in (
            "sinus_arrest_duration", "st_shift_range", "jitter_range",
            "qrs_amplitude_range", "global_amplitude_range", "rhythm_range",
        ):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: ({lo}, {hi})")
        if self.target_length <= 0 or self.target_fs <= 0:
            raise ValueError("target_length and target_fs must be positive")
        if self.jitter_range[0] <= 0 or self.rhythm_range[0] <= 0:
            raise ValueError("jitter and rhythm factors must be positive")
        if self.qrs_amplitude_range[0] <= 0:
            raise ValueError("qrs_amplitude_range lower bound must be positive")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"interpolation must be 'linear' or 'cubic', got {self.interpolation!r}")
        if self.flat_edge_max < 0:
            raise ValueError("flat_edge_max must be >= 0")


@dataclass(frozen=True)
class GlobalRules:
    """Record-level rules; ``vt`` and ``af`` are mutually exclusive."""

    vt: bool = False
    af: bool = False
    av_block: bool = False
    av_block_period: int = 0
    sinus_arrest: int | None = None   # duration in samples at target_fs
    st_shift: float | None = None     # signed fraction of QRS peak


@dataclass(frozen=True)
class CycleRules:
    has_p: bool = True
    has_qrst: bool = True
    has_pq: bool = True
    has_st: bool = True
    has_tp: bool = True
    has_u: bool = False
    ectopic: bool = False
    merge_p_qrs: bool = False
    merge_qrs_t: bool = False
    merge_t_nextp: bool = False


@dataclass(frozen=True)
class SyntheticRecord:
    signal: EcgRecord
    mask: DelineationMask
    provenance: dict

    def __post_init__(self):
        if self.signal.n_samples != self.mask.n_samples:
            raise ValueError(
                f"signal length {self.signal.n_samples} != mask length {self.mask.n_samples}"
            )


def sample_global_rules(config: GenerationConfig, rng: np.random.Generator) -> GlobalRules:
    """Draw the record-level rules.

    Flag draws happen first, in the order vt, af, av_block, sinus_arrest,
    st_shift; parameter draws (block period, arrest duration, shift size)
    follow for whichever flags came up.  An AF draw is made even when VT won
    so the flag stream stays aligned, then discarded.
    """
    vt = rng.uniform() < config.p_vt
    af = (rng.uniform() < config.p_af) and not vt
    av_block = rng.uniform() < config.p_av_block
    arrest = rng.uniform() < config.p_sinus_arrest
    shifted = rng.uniform() < config.p_st_shift
    period = int(rng.integers(2, 5)) if av_block else 0
    duration = None
    if arrest:
        seconds = rng.uniform(*config.sinus_arrest_duration)
        duration = max(1, round(seconds * config.target_fs))
    st_shift = float(rng.uniform(*config.st_shift_range)) if shifted else None
    return GlobalRules(
        vt=vt, af=af, av_block=av_block, av_block_period=period,
        sinus_arrest=duration, st_shift=st_shift,
    )


def sample_cycle_rules(
    config: GenerationConfig,
    global_rules: GlobalRules,
    cycle_index: int,
    rng: np.random.Generator,
) -> CycleRules:
    """Draw one cycle's rules.

    Ten uniform draws in the order no_p, no_qrst, no_pq, no_st, no_tp,
    u_wave, ectopic, merge_p_qrs, merge_qrs_t, merge_t_nextp; the global
    constraints are applied afterwards.  An AV block drops the QRS and T of
    every ``av_block_period``-th cycle while keeping its P.  VT, AF and
    ectopics remove the P wave.
    """
    has_p = not (rng.uniform() < config.p_no_p)
    has_qrst = not (rng.uniform() < config.p_no_qrst)
    has_pq = not (rng.uniform() < config.p_no_pq)
    has_st = not (rng.uniform() < config.p_no_st)
    has_tp = not (rng.uniform() < config.p_no_tp)
    has_u = rng.uniform() < config.p_u_wave
    ectopic = rng.uniform() < config.p_ectopic
    merge_p_qrs = rng.uniform() < config.p_merge_pqrs
    merge_qrs_t = rng.uniform() < config.p_merge_qrst
    merge_t_nextp = rng.uniform() < config.p_merge_tp

    period = global_rules.av_block_period
    if global_rules.av_block and period > 0 and cycle_index % period == period - 1:
        has_qrst = False
        has_p = True   # conducted atrial activity without a ventricular response
    if global_rules.vt or global_rules.af or ectopic:
        has_p = False
    ectopic = ectopic and has_qrst
    has_u = has_u and has_qrst
    return CycleRules(
        has_p=has_p, has_qrst=has_qrst, has_pq=has_pq, has_st=has_st,
        has_tp=has_tp, has_u=has_u, ectopic=ectopic,
        merge_p_qrs=merge_p_qrs, merge_qrs_t=merge_qrs_t, merge_t_nextp=merge_t_nextp,
    )


def _resample(samples: np.ndarray, n: int, interpolation: str = "linear") -> np.ndarray:
    if n == samples.size:
        return np.array(samples, dtype=np.float64)
    if samples.size == 1:
        return np.full(n, samples[0], dtype=np.float64)
    old = np.linspace(0.0, 1.0, samples.size)
    new = np.linspace(0.0, 1.0, n)
    if interpolation == "cubic":
        from scipy.interpolate import CubicSpline

        return CubicSpline(old, samples)(new)
    return np.interp(new, old, samples)


def _draw_template(pool: SegmentPool, kind: SegmentKind, rng: np.random.Generator):
    candidates = pool.of(kind)
    if not candidates:
        raise GenerationError(f"segment pool has no {kind.value} templates")
    return candidates[int(rng.integers(0, len(candidates)))]


def _scaled_draw(pool, kind, rng, fs_ratio, stretch, target_peak, interpolation):
    """Draw a template, resample it, scale its peak to ``target_peak``."""
    for _ in range(8):
        t = _draw_template(pool, kind, rng)
        n = max(1, round(t.native_length * fs_ratio * stretch))
        y = _resample(t.samples, n, interpolation)
        peak = float(np.max(np.abs(y)))
        if peak > 0:
            return y * (target_peak / peak), t
    raise GenerationError(f"all drawn {kind.value} templates are flat; cannot set amplitude")


def _af_fill(pool, n, a_qrs, rng, fs_ratio, interpolation):
    """Fibrillatory filler: sign-alternating rescaled P templates, cropped to n."""
    parts = []
    total = 0
    sign = -1.0
    while total < n:
        amp = a_qrs * rng.uniform(*_AF_AMPLITUDE)
        y, _ = _scaled_draw(pool, SegmentKind.P, rng, fs_ratio, 1.0, amp, interpolation)
        parts.append(sign * y)
        sign = -sign
        total += y.size
    return np.concatenate(parts)[:n]


def compose_cycle(
    pool: SegmentPool,
    model: AmplitudeModel,
    global_rules: GlobalRules,
    rules: CycleRules,
    rng: np.random.Generator,
    *,
    config: GenerationConfig,
    polarity: dict | None = None,
    start_kind: SegmentKind | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Compose one cardiac cycle.

    Returns ``(samples, labels)`` where labels hold the wave index per
    sample (P=0, QRS=1, T=2) and -1 for unlabeled stretches (pauses, U
    waves, fibrillatory filler).  The QRS peak is one clamped draw from the
    normal amplitude law; P, T and U peaks are that times their log-normal
    draws; pause templates are passed through scaled by the QRS peak so
    their pooled fraction-of-QRS amplitude is preserved.  ``start_kind``
    crops the cycle plan to segments at or after that kind, which realizes a
    record's random starting segment.  ``polarity`` (a mutable dict) pins
    each wave kind's dominant sign to the first occurrence in the record.
    ``trace`` collects one entry per emitted segment for provenance.
    """
    plan: list[SegmentKind] = []
    if rules.has_p:
        plan.append(SegmentKind.P)
    if rules.has_p and rules.has_qrst and rules.has_pq and not rules.merge_p_qrs:
        plan.append(SegmentKind.PQ)
    if rules.has_qrst:
        plan.append(SegmentKind.QRS)
        if rules.has_st and not rules.merge_qrs_t:
            plan.append(SegmentKind.ST)
        plan.append(SegmentKind.T)
    if rules.has_tp and not rules.merge_t_nextp:
        plan.append(SegmentKind.TP)
    if start_kind is not None:
        order = {k: i for i, k in enumerate(CYCLE_ORDER)}
        plan = [k for k in plan if order[k] >= order[start_kind]]

    mu, sigma = model.qrs
    a_qrs = float(np.clip(rng.normal(mu, sigma), *config.qrs_amplitude_range))
    if rules.ectopic:
        a_qrs *= rng.uniform(*_ECTOPIC_AMPLITUDE)

    jlo, jhi = config.jitter_range
    if global_rules.af:
        mid, half = (jlo + jhi) / 2.0, (jhi - jlo) / 2.0
        jlo = max(0.1, mid - _AF_JITTER_WIDEN * half)
        jhi = mid + _AF_JITTER_WIDEN * half

    fs_ratio = config.target_fs / pool.sampling_rate
    interp = config.interpolation
    pieces: list[tuple[np.ndarray, int, str]] = []

    for kind in plan:
        stretch = float(rng.uniform(jlo, jhi))
        if kind is SegmentKind.QRS:
            if rules.ectopic:
                stretch *= rng.uniform(*_ECTOPIC_DURATION)
            if global_rules.vt:
                stretch *= rng.uniform(*_VT_QRS_DURATION)
        if kind is SegmentKind.TP and global_rules.vt:
            stretch *= _VT_TP_FACTOR

        if kind is SegmentKind.QRS:
            y, t = _scaled_draw(pool, kind, rng, fs_ratio, stretch, a_qrs, interp)
        elif kind in (SegmentKind.P, SegmentKind.T):
            frac = math.exp(rng.normal(*model.lognormal[kind]))
            y, t = _scaled_draw(pool, kind, rng, fs_ratio, stretch, a_qrs * frac, interp)
        else:
            t = _draw_template(pool, kind, rng)
            n = max(1, round(t.native_length * fs_ratio * stretch))
            y = _resample(t.samples, n, interp) * a_qrs

        if polarity is not None and kind in _LABEL_OF_KIND:
            sign = float(np.sign(y[int(np.argmax(np.abs(y)))]))
            if sign != 0.0:
                if kind not in polarity:
                    polarity[kind] = sign
                elif sign != polarity[kind]:
                    y = -y

        if kind is SegmentKind.TP and global_rules.af:
            y = _af_fill(pool, y.size, a_qrs, rng, fs_ratio, interp)
        if kind is SegmentKind.ST and global_rules.st_shift is not None:
            y = y + global_rules.st_shift * a_qrs

        pieces.append((y, _LABEL_OF_KIND.get(kind, -1), kind.value))
        if trace is not None:
            trace.append({
                "kind": kind.value, "source_id": t.source_id, "lead": t.lead,
                "native_length": t.native_length, "length": int(y.size),
                "stretch": stretch, "a_qrs": a_qrs,
                "peak": float(np.max(np.abs(y))),
            })

        if kind is SegmentKind.T and rules.has_u:
            frac = math.exp(rng.normal(*model.lognormal[SegmentKind.P]))
            frac *= rng.uniform(*_U_AMPLITUDE)
            uy, ut = _scaled_draw(
                pool, SegmentKind.P, rng, fs_ratio, float(rng.uniform(jlo, jhi)),
                a_qrs * frac, interp,
            )
            pieces.append((uy, -1, "U"))
            if trace is not None:
                trace.append({
                    "kind": "U", "source_id": ut.source_id, "lead": ut.lead,
                    "native_length": ut.native_length, "length": int(uy.size),
                    "stretch": 1.0, "a_qrs": a_qrs, "peak": float(np.max(np.abs(uy))),
                })

    if not pieces:
        return np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int8)
    signal = np.concatenate([p[0] for p in pieces])
    labels = np.concatenate([np.full(p[0].size, p[1], dtype=np.int8) for p in pieces])
    return signal, labels


def _remap_fiducials(fids: FiducialSet, n_old: int, n_new: int) -> FiducialSet:
    """Rescale run boundaries to a resampled length by index arithmetic.

    Boundaries map through round(i * n_new / n_old); runs are kept at least
    one sample long and consecutive runs of the same wave are kept separated
    so no two runs fuse under rounding.
    """
    ratio = n_new / n_old
    waves = {}
    for wave, pairs in fids.waves.items():
        out = []
        prev_off = -1
        for on, off in pairs:
            non = round(on * ratio)
            noff = round(off * ratio)
            non = max(non, prev_off + 1)
            noff = max(noff, non + 1)
            if non >= n_new:
                break
            noff = min(noff, n_new)
            out.append((non, noff))
            prev_off = noff
        waves[wave] = tuple(out)
    return FiducialSet(waves=waves)


def compose_record(
    config: GenerationConfig,
    pool: SegmentPool,
    model: AmplitudeModel,
    rng: np.random.Generator,
    *,
    record_id: str = "synthetic",
) -> SyntheticRecord:
    """Compose one full record with its mask and provenance log.

    Cycles are appended until the rhythm-stretched trace covers the target
    length, then the trace is stretched by the drawn rhythm factor (signal
    interpolated, mask boundaries remapped exactly), cropped to the target
    length, and finished with baseline wander, a global amplitude factor and
    flattened edges; those finishing touches alter the signal only, except
    that flattened edges also clear the mask columns they overwrite.
    """
    g = sample_global_rules(config, rng)
    rhythm = float(rng.uniform(*config.rhythm_range))
    start_kind = CYCLE_ORDER[int(rng.integers(0, len(CYCLE_ORDER)))]
    arrest_after = int(rng.integers(*_ARREST_AFTER_CYCLES)) if g.sinus_arrest else -1

    polarity: dict = {}
    sig_parts: list[np.ndarray] = []
    lab_parts: list[np.ndarray] = []
    cycles: list[dict] = []
    total = 0
    last_label = -1
    last_value = 0.0
    empties = 0
    i = 0
    while round(total * rhythm) < config.target_length:
        rules = sample_cycle_rules(config, g, i, rng)
        ctrace: list = []
        sig, lab = compose_cycle(
            pool, model, g, rules, rng, config=config, polarity=polarity,
            start_kind=start_kind if i == 0 else None, trace=ctrace,
        )
        if sig.size == 0:
            empties += 1
            if empties > _MAX_EMPTY_CYCLES:
                raise GenerationError(
                    f"{empties} consecutive empty cycles; rules leave nothing to compose"
                )
            i += 1
            continue
        empties = 0
        if last_label >= 0 and lab[0] == last_label:
            # keep back-to-back same-wave runs from fusing in the mask
            sig_parts.append(np.array([last_value]))
            lab_parts.append(np.full(1, -1, dtype=np.int8))
            total += 1
        sig_parts.append(sig)
        lab_parts.append(lab)
        a_qrs = next((e["a_qrs"] for e in ctrace if e["kind"] == "QRS"), None)
        cycles.append({
            "index": i, "start": total, "length": int(sig.size),
            "rules": dataclasses.asdict(rules), "a_qrs": a_qrs, "segments": ctrace,
        })
        total += sig.size
        last_label = int(lab[-1])
        last_value = float(sig[-1])
        if i == arrest_after:
            k = int(g.sinus_arrest)
            sig_parts.append(np.full(k, last_value))
            lab_parts.append(np.full(k, -1, dtype=np.int8))
            cycles.append({"index": i, "start": total, "length": k, "note": "sinus_arrest"})
            total += k
            last_label = -1
        i += 1

    signal = np.concatenate(sig_parts)
    labels = np.concatenate(lab_parts)

    mask = np.stack([labels == int(w) for w in WaveKind])
    n_old = signal.size
    n_new = int(round(n_old * rhythm))
    if n_new != n_old:
        fids = fiducials_from_mask(DelineationMask(mask))
        fids = _remap_fiducials(fids, n_old, n_new)
        signal = _resample(signal, n_new, config.interpolation)
        mask = mask_from_fiducials(fids, n_new).data.copy()

    n = config.target_length
    signal = np.array(signal[:n])
    mask = np.array(mask[:, :n])

    t = np.arange(n) / config.target_fs
    wander = []
    for _ in range(int(rng.integers(_WANDER_COUNT[0], _WANDER_COUNT[1] + 1))):
        amp = float(rng.uniform(*_WANDER_AMPLITUDE))
        freq = float(rng.uniform(*_WANDER_FREQ))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        signal = signal + amp * np.sin(2.0 * np.pi * freq * t + phase)
        wander.append({"amplitude": amp, "frequency": freq, "phase": phase})

    gain = float(rng.uniform(*config.global_amplitude_range))
    signal = signal * gain

    edge_max = round(config.flat_edge_max * config.target_fs)
    k1 = int(rng.integers(0, edge_max + 1))
    k2 = int(rng.integers(0, edge_max + 1))
    k1 = min(k1, n - 1)
    k2 = min(k2, n - 1 - k1)
    if k1:
        signal[:k1] = signal[k1]
        mask[:, :k1] = False
    if k2:
        signal[n - k2:] = signal[n - k2 - 1]
        mask[:, n - k2:] = False

    record = EcgRecord(
        id=record_id,
        sampling_rate=config.target_fs,
        lead_names=("synthetic",),
        signal=signal[None, :],
    )
    provenance = {
        "global": dataclasses.asdict(g),
        "rhythm_factor": rhythm,
        "start_kind": start_kind.value,
        "global_amplitude": gain,
        "flat_edges": [k1, k2],
        "wander": wander,
        "cycles": cycles,
    }
    return SyntheticRecord(signal=record, mask=DelineationMask(mask), provenance=provenance)


class SyntheticGenerator:
    """Seeded record factory with a fixed per-index stream-splitting rule.

    Record ``k`` always uses ``numpy.random.default_rng((base_seed, k))``,
    so any partition of the index range across workers reproduces the exact
    records a single worker would have produced.  Instances share nothing
    mutable: pools and models are read-only.
    """

    def __init__(
        self,
        pool: SegmentPool,
        model: AmplitudeModel,
        config: GenerationConfig,
        base_seed: int | None = None,
    ):
        self.pool = pool
        self.model = model
        self.config = config
        self.base_seed = config.rng_seed if base_seed is None else int(base_seed)

    def record(self, index: int) -> SyntheticRecord:
        rng = np.random.default_rng((self.base_seed, int(index)))
        return compose_record(
            self.config, self.pool, self.model, rng,
            record_id=f"synthetic-{index:06d}",
        )

    def records(self, count: int, start: int = 0):
        for k in range(start, start + count):
            yield self.record(k)
