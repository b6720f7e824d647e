"""Delineation scoring: fiducial matching, detection metrics, timing errors.

Matching follows interval containment: a true and a predicted wave
correspond when either interval contains one of the other's fiducials
(onset, midpoint, offset). Containment is checked on closed sample
intervals, so the half-open (onset, offset) pairs used elsewhere are read as
[onset, offset - 1] here, with the midpoint halfway between those bounds.

Correspondence is many-to-many; detection counts resolve it one-to-one
greedily, consuming candidate pairs in order of increasing timing cost
(|onset error| + |offset error|) so each true and each predicted wave is
counted at most once. Timing errors are reported per true wave against its
cost-minimizing match, signed predicted minus true (positive = late), in
milliseconds of the record's sampling rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ShapeError
from .records import DelineationMask, EcgRecord, FiducialSet, WaveKind, fiducials_from_mask

_DIVISOR_FLOOR = 1e-6

MODES = ("single", "multi", "fused")


def normalize_input(signal: np.ndarray, window: int = 256) -> np.ndarray:
    """Scale a signal by the median of the moving mean of its magnitude.

    The moving window is centered and clipped at the edges; the divisor is
    floored at 1e-6 so silent signals stay finite. The transform is
    homogeneous of degree 0 (scaling the input changes nothing) and
    idempotent for signals above the floor.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"expected a non-empty 1-D signal, got shape {x.shape}")
    csum = np.concatenate(([0.0], np.cumsum(np.abs(x))))
    half = window // 2
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + (window - half), x.size)
    means = (csum[hi] - csum[lo]) / (hi - lo)
    divisor = max(float(np.median(means)), _DIVISOR_FLOOR)
    return x / divisor


# ---------------------------------------------------------------------------
# Matching


def _fiducial_points(pairs: tuple[tuple[int, int], ...]) -> np.ndarray:
    """Closed-interval fiducials per pair: onset, midpoint, last sample."""
    if not pairs:
        return np.zeros((0, 3))
    arr = np.asarray(pairs, dtype=np.float64)
    on = arr[:, 0]
    last = arr[:, 1] - 1.0
    return np.stack([on, (on + last) / 2.0, last], axis=1)


def correspondence_matrix(true_pairs, pred_pairs) -> np.ndarray:
    """Binary M x N containment matrix for one wave kind.

    Entry (i, j) is 1 iff any fiducial of predicted pair j lies inside the
    closed true interval i, or any fiducial of true pair i lies inside the
    closed predicted interval j.
    """
    true_pairs = tuple(true_pairs)
    pred_pairs = tuple(pred_pairs)
    m, n = len(true_pairs), len(pred_pairs)
    h = np.zeros((m, n), dtype=np.int8)
    if not (m and n):
        return h
    t = np.asarray(true_pairs, dtype=np.float64)
    p = np.asarray(pred_pairs, dtype=np.float64)
    t_fids = _fiducial_points(true_pairs)          # (M, 3)
    p_fids = _fiducial_points(pred_pairs)          # (N, 3)
    t_lo, t_hi = t[:, :1], t[:, 1:] - 1.0          # (M, 1)
    p_lo, p_hi = p[:, :1], p[:, 1:] - 1.0          # (N, 1)
    pred_in_true = (
        (p_fids[None, :, :] >= t_lo[:, :, None]) & (p_fids[None, :, :] <= t_hi[:, :, None])
    ).any(axis=2)
    true_in_pred = (
        (t_fids[:, None, :] >= p_lo[None, :, :]) & (t_fids[:, None, :] <= p_hi[None, :, :])
    ).any(axis=2)
    h[pred_in_true | true_in_pred] = 1
    return h


def timing_cost(true_pairs, pred_pairs, fs: float) -> np.ndarray:
    """|onset error| + |offset error| in ms for every (true, pred) pair."""
    t = np.asarray(tuple(true_pairs), dtype=np.float64).reshape(-1, 2)
    p = np.asarray(tuple(pred_pairs), dtype=np.float64).reshape(-1, 2)
    scale = 1000.0 / fs
    d_on = np.abs(p[None, :, 0] - t[:, 0, None]) * scale
    d_off = np.abs(p[None, :, 1] - t[:, 1, None]) * scale
    return d_on + d_off


@dataclass(frozen=True)
class DetectionMetrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        pr, re = self.precision, self.recall
        return 2.0 * pr * re / (pr + re) if pr + re else 0.0


def resolve_matches(h: np.ndarray, cost: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Greedy one-to-one resolution of a correspondence matrix.

    Candidate cells are consumed by ascending cost (ties by row-major
    position; plain row-major order when no cost is given); a cell is kept
    only if neither its row nor its column was already used.
    """
    cells = np.argwhere(h != 0)
    if cells.size == 0:
        return []
    if cost is not None:
        if cost.shape != h.shape:
            raise ShapeError(f"cost shape {cost.shape} != matrix shape {h.shape}")
        order = sorted(range(len(cells)), key=lambda k: (cost[tuple(cells[k])], *cells[k]))
        cells = cells[order]
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    out = []
    for i, j in cells:
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(int(i))
        used_cols.add(int(j))
        out.append((int(i), int(j)))
    return out


def detection_metrics(h: np.ndarray, cost: np.ndarray | None = None) -> DetectionMetrics:
    """TP/FP/FN from a correspondence matrix under one-to-one resolution."""
    m, n = h.shape
    tp = len(resolve_matches(h, cost))
    return DetectionMetrics(tp=tp, fp=n - tp, fn=m - tp)


@dataclass(frozen=True)
class DelineationErrors:
    onset_errors: np.ndarray    # signed ms, one per matched true wave
    offset_errors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "onset_errors", np.asarray(self.onset_errors, dtype=np.float64))
        object.__setattr__(self, "offset_errors", np.asarray(self.offset_errors, dtype=np.float64))

    @staticmethod
    def _stats(v: np.ndarray) -> tuple[float, float]:
        if v.size == 0:
            return float("nan"), float("nan")
        return float(v.mean()), float(v.std())

    @property
    def onset_mean_sd(self) -> tuple[float, float]:
        return self._stats(self.onset_errors)

    @property
    def offset_mean_sd(self) -> tuple[float, float]:
        return self._stats(self.offset_errors)

    def merged(self, other: "DelineationErrors") -> "DelineationErrors":
        return DelineationErrors(
            onset_errors=np.concatenate([self.onset_errors, other.onset_errors]),
            offset_errors=np.concatenate([self.offset_errors, other.offset_errors]),
        )


def delineation_errors(
    h: np.ndarray,
    true_pairs,
    pred_pairs,
    fs: float,
    *,
    sign_true_minus_pred: bool = False,
) -> DelineationErrors:
    """Onset/offset errors in ms, one per true wave with any correspondence.

    A true wave matched by several predictions is scored against the one
    minimizing |onset error| + |offset error|. The default sign is
    predicted minus true (late predictions positive); the flag flips it.
    """
    true_pairs = tuple(true_pairs)
    pred_pairs = tuple(pred_pairs)
    if h.shape != (len(true_pairs), len(pred_pairs)):
        raise ShapeError(
            f"matrix shape {h.shape} does not fit {len(true_pairs)} true x {len(pred_pairs)} pred"
        )
    scale = 1000.0 / fs
    flip = -1.0 if sign_true_minus_pred else 1.0
    cost = timing_cost(true_pairs, pred_pairs, fs) if pred_pairs else None
    on_errs, off_errs = [], []
    for i, (t_on, t_off) in enumerate(true_pairs):
        cols = np.flatnonzero(h[i])
        if cols.size == 0:
            continue
        j = int(cols[np.argmin(cost[i, cols])])
        p_on, p_off = pred_pairs[j]
        on_errs.append(flip * (p_on - t_on) * scale)
        off_errs.append(flip * (p_off - t_off) * scale)
    return DelineationErrors(onset_errors=np.array(on_errs), offset_errors=np.array(off_errs))


def majority_vote(masks) -> DelineationMask:
    """Per-sample strict majority across masks (ties are false)."""
    masks = list(masks)
    if not masks:
        raise ShapeError("majority_vote needs at least one mask")
    shapes = {m.data.shape for m in masks}
    if len(shapes) > 1:
        raise ShapeError(f"mask shapes differ: {sorted(shapes)}")
    votes = np.sum([m.data for m in masks], axis=0)
    return DelineationMask(votes > len(masks) / 2.0)


# ---------------------------------------------------------------------------
# Record-level evaluation


@dataclass
class WaveOutcome:
    """Per-wave tallies from one or more records, mergeable."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    errors: DelineationErrors = field(
        default_factory=lambda: DelineationErrors(np.zeros(0), np.zeros(0))
    )

    def merge(self, other: "WaveOutcome") -> "WaveOutcome":
        return WaveOutcome(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            errors=self.errors.merged(other.errors),
        )

    @property
    def detection(self) -> DetectionMetrics:
        return DetectionMetrics(tp=self.tp, fp=self.fp, fn=self.fn)


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    sampling_rate: float
    waves: dict[WaveKind, WaveOutcome]

    REPORT_HEADER = "wave,Pr,Re,F1,onE_mean,onE_sd,offE_mean,offE_sd"

    def rows(self) -> list[str]:
        lines = [self.REPORT_HEADER]
        for wave in WaveKind:
            o = self.waves[wave]
            det = o.detection
            on_m, on_s = o.errors.onset_mean_sd
            off_m, off_s = o.errors.offset_mean_sd
            lines.append(
                f"{wave.name},{det.precision:.4f},{det.recall:.4f},{det.f1:.4f},"
                f"{on_m:.3f},{on_s:.3f},{off_m:.3f},{off_s:.3f}"
            )
        return lines

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "sampling_rate": self.sampling_rate, "waves": {}}
        for wave, o in self.waves.items():
            det = o.detection
            on_m, on_s = o.errors.onset_mean_sd
            off_m, off_s = o.errors.offset_mean_sd
            out["waves"][wave.name] = {
                "tp": o.tp, "fp": o.fp, "fn": o.fn,
                "precision": det.precision, "recall": det.recall, "f1": det.f1,
                "onset_mean_ms": on_m, "onset_sd_ms": on_s,
                "offset_mean_ms": off_m, "offset_sd_ms": off_s,
                "n_matched": int(o.errors.onset_errors.size),
            }
        return out


def _eval_wave_single(true_pairs, pred_pairs_by_lead, fs, sign_flip) -> WaveOutcome:
    out = WaveOutcome()
    for pred_pairs in pred_pairs_by_lead:
        h = correspondence_matrix(true_pairs, pred_pairs)
        cost = timing_cost(true_pairs, pred_pairs, fs) if (len(true_pairs) and len(pred_pairs)) else None
        det = detection_metrics(h, cost)
        errs = delineation_errors(h, true_pairs, pred_pairs, fs, sign_true_minus_pred=sign_flip)
        out = out.merge(WaveOutcome(tp=det.tp, fp=det.fp, fn=det.fn, errors=errs))
    return out


def _eval_wave_multi(true_pairs, pred_pairs_by_lead, fs, sign_flip) -> WaveOutcome:
    """Best-lead scoring: each true wave is matched in whichever lead fits best.

    The false-positive count is the minimum over leads: extra predictions in
    the other, unused leads are not charged in this mode.
    """
    m = len(true_pairs)
    scale = 1000.0 / fs
    flip = -1.0 if sign_flip else 1.0
    per_lead = []
    for pred_pairs in pred_pairs_by_lead:
        h = correspondence_matrix(true_pairs, pred_pairs)
        cost = timing_cost(true_pairs, pred_pairs, fs) if (m and len(pred_pairs)) else None
        det = detection_metrics(h, cost)
        per_lead.append((tuple(pred_pairs), h, cost, det))
    on_errs, off_errs = [], []
    matched_rows = 0
    for i in range(m):
        best = None
        for pred_pairs, h, cost, _ in per_lead:
            cols = np.flatnonzero(h[i]) if h.size else np.zeros(0, dtype=int)
            for j in cols:
                c = cost[i, j]
                if best is None or c < best[0]:
                    best = (c, pred_pairs[j])
        if best is None:
            continue
        matched_rows += 1
        t_on, t_off = true_pairs[i]
        p_on, p_off = best[1]
        on_errs.append(flip * (p_on - t_on) * scale)
        off_errs.append(flip * (p_off - t_off) * scale)
    fp = min((det.fp for *_, det in per_lead), default=0)
    return WaveOutcome(
        tp=matched_rows, fp=fp, fn=m - matched_rows,
        errors=DelineationErrors(np.array(on_errs), np.array(off_errs)),
    )


def evaluate_record(
    record: EcgRecord,
    true_fids: FiducialSet,
    predictor,
    mode: str = "single",
    *,
    sign_true_minus_pred: bool = False,
) -> MetricsReport:
    """Score a predictor against one annotated record.

    ``predictor`` maps a normalized single-lead signal to a
    :class:`DelineationMask`. Modes: ``single`` pools every lead's matches
    and misses; ``multi`` scores each true wave against its best lead;
    ``fused`` majority-votes the per-lead masks first, then scores the
    fused mask.
    """
    if mode not in MODES:
        raise DataFormatError(f"unknown evaluation mode {mode!r}; choose from {MODES}")
    if record.n_leads < 1:
        raise DataFormatError(f"record {record.id} has no leads to evaluate")
    masks = []
    for lead in range(record.n_leads):
        mask = predictor(normalize_input(record.signal[lead]))
        if mask.n_samples != record.n_samples:
            raise ShapeError(
                f"predictor returned {mask.n_samples} samples for a {record.n_samples}-sample lead"
            )
        masks.append(mask)
    if mode == "fused":
        masks = [majority_vote(masks)]
    fids_by_lead = [fiducials_from_mask(m) for m in masks]
    fs = record.sampling_rate
    waves = {}
    for wave in WaveKind:
        true_pairs = true_fids.pairs(wave)
        pred_by_lead = [f.pairs(wave) for f in fids_by_lead]
        if mode == "multi":
            waves[wave] = _eval_wave_multi(true_pairs, pred_by_lead, fs, sign_true_minus_pred)
        else:
            waves[wave] = _eval_wave_single(true_pairs, pred_by_lead, fs, sign_true_minus_pred)
    return MetricsReport(mode=mode, sampling_rate=fs, waves=waves)


def evaluate_records(
    pairs,
    predictor,
    mode: str = "single",
    *,
    sign_true_minus_pred: bool = False,
) -> MetricsReport:
    """Pool per-record outcomes over (record, fiducials) pairs.

    Records are processed in sorted id order so the reduction is
    deterministic regardless of input order.
    """
    pairs = sorted(pairs, key=lambda p: p[0].id)
    if not pairs:
        raise DataFormatError("no records to evaluate")
    fs = pairs[0][0].sampling_rate
    totals = {wave: WaveOutcome() for wave in WaveKind}
    for record, fids in pairs:
        report = evaluate_record(
            record, fids, predictor, mode, sign_true_minus_pred=sign_true_minus_pred
        )
        for wave in WaveKind:
            totals[wave] = totals[wave].merge(report.waves[wave])
    return MetricsReport(mode=mode, sampling_rate=fs, waves=totals)
