"""Segment pools: cropping annotated records and fitting amplitude laws.

Annotated recordings are cut into their constituent pieces, one template per
wave run (P, QRS, T) and one per inter-wave pause (PQ, ST, TP).  Templates
are amplitude-normalized in two stages: every QRS is divided by the largest
absolute QRS amplitude of its source recording (all leads pooled), and every
other segment is divided by the normalized peak of the QRS of its own beat.
After normalization a template's peak therefore *is* its amplitude fraction:
1.0 for the registry-maximal QRS, and the segment/QRS amplitude ratio for
everything else.

Fractions are summarized per kind: a normal law for the QRS fraction and
log-normal laws for the remaining kinds (maximum-likelihood fits; standard
deviations use the population convention, dividing by n).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError, FitError
from .records import CYCLE_ORDER, EcgRecord, FiducialSet, SegmentKind, WaveKind

log = logging.getLogger(__name__)

_WAVE_TO_SEGMENT = {
    WaveKind.P: SegmentKind.P,
    WaveKind.QRS: SegmentKind.QRS,
    WaveKind.T: SegmentKind.T,
}


@dataclass(frozen=True)
class SegmentTemplate:
    """One cropped segment, plus the bookkeeping needed to normalize it.

    ``assoc_qrs_peak`` is the raw absolute peak of the QRS belonging to the
    same beat (for a QRS template, its own peak); ``None`` when the beat has
    no QRS neighbour.  ``amplitude_fraction`` is filled by normalization.
    """

    kind: SegmentKind
    samples: np.ndarray
    source_id: str
    lead: str
    native_length: int
    source_fs: float
    assoc_qrs_peak: float | None = None
    amplitude_fraction: float | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise DataFormatError(f"template samples must be 1-D and non-empty, got {s.shape}")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "native_length", int(s.size))

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))


@dataclass(frozen=True)
class SegmentPool:
    """Normalized templates grouped by kind; drawing is uniform per kind."""

    templates: dict[SegmentKind, tuple[SegmentTemplate, ...]]
    sampling_rate: float
    discarded: int = 0

    def __post_init__(self):
        full = {k: tuple(self.templates.get(k, ())) for k in SegmentKind}
        object.__setattr__(self, "templates", full)

    def of(self, kind: SegmentKind) -> tuple[SegmentTemplate, ...]:
        return self.templates[kind]

    def counts(self) -> dict[SegmentKind, int]:
        return {k: len(v) for k, v in self.templates.items()}


@dataclass(frozen=True)
class AmplitudeModel:
    """Fitted amplitude laws: normal for QRS, log-normal per other kind.

    ``qrs`` is ``(mu, sigma)`` of the QRS amplitude fraction;
    ``lognormal[kind]`` is ``(mu_log, sigma_log)`` of the natural log of the
    kind's fraction-of-QRS amplitude.
    """

    qrs: tuple[float, float]
    lognormal: dict[SegmentKind, tuple[float, float]]

    def __post_init__(self):
        if not np.isfinite(self.qrs).all() or self.qrs[1] < 0:
            raise FitError(f"invalid QRS law {self.qrs}")
        for kind, (mu, sd) in self.lognormal.items():
            if not (np.isfinite(mu) and np.isfinite(sd)) or sd < 0:
                raise FitError(f"invalid log-normal law for {kind.name}: ({mu}, {sd})")


def _check_disjoint(fids: FiducialSet):
    events = sorted(
        (on, off, w) for w in WaveKind for on, off in fids.pairs(w)
    )
    for (on, off, w), (non, noff, nw) in zip(events, events[1:]):
        if non < off:
            raise DataFormatError(
                f"annotations overlap: {w.name}({on},{off}) and {nw.name}({non},{noff})"
            )
    return events


def crop_segments(record: EcgRecord, fids: FiducialSet) -> list[SegmentTemplate]:
    """Cut one record into wave and pause templates, per lead.

    Wave templates are the annotated runs themselves.  Pauses fill the gaps
    between them: PQ from a P offset to the next QRS onset, ST from a QRS
    offset to the next T onset, and TP from a T offset to the next P (or, for
    P-less beats, QRS) onset.  Zero-length gaps are skipped.  Each non-QRS
    template is tagged with the raw peak of its beat's QRS so normalization
    can relate amplitudes within a beat; the beat of a pause is the beat of
    the wave preceding it.
    """
    events = _check_disjoint(fids)
    for _, off, _ in events:
        if off > record.n_samples:
            raise DataFormatError(f"annotation offset {off} beyond record length {record.n_samples}")

    qrs_pairs = fids.pairs(WaveKind.QRS)

    def qrs_after(t: int):
        for on, off in qrs_pairs:
            if on >= t:
                return on, off
        return None

    def qrs_before(t: int):
        found = None
        for on, off in qrs_pairs:
            if off <= t:
                found = (on, off)
        return found

    # (kind, start, stop, associated QRS interval) on the shared timeline
    cuts: list[tuple[SegmentKind, int, int, tuple[int, int] | None]] = []
    for on, off, w in events:
        assoc = {
            WaveKind.P: qrs_after(off),
            WaveKind.QRS: (on, off),
            WaveKind.T: qrs_before(on),
        }[w]
        cuts.append((_WAVE_TO_SEGMENT[w], on, off, assoc))
        nxt = next(((non, noff, nw) for non, noff, nw in events if non >= off), None)
        if nxt is None:
            continue
        non, _, nw = nxt
        if w is WaveKind.P and nw is WaveKind.QRS and non > off:
            cuts.append((SegmentKind.PQ, off, non, qrs_after(off)))
        elif w is WaveKind.QRS and nw is WaveKind.T and non > off:
            cuts.append((SegmentKind.ST, off, non, (on, off)))
        elif w is WaveKind.T and nw in (WaveKind.P, WaveKind.QRS) and non > off:
            cuts.append((SegmentKind.TP, off, non, qrs_before(on)))

    out = []
    for lead_idx, lead in enumerate(record.lead_names):
        sig = record.signal[lead_idx]
        for kind, start, stop, assoc in cuts:
            peak = float(np.max(np.abs(sig[assoc[0]:assoc[1]]))) if assoc else None
            out.append(
                SegmentTemplate(
                    kind=kind,
                    samples=sig[start:stop],
                    source_id=record.id,
                    lead=lead,
                    native_length=stop - start,
                    source_fs=record.sampling_rate,
                    assoc_qrs_peak=peak,
                )
            )
    return out


def registry_qrs_maxima(templates) -> dict[str, float]:
    """Per-source maximum absolute QRS amplitude, pooled over all leads."""
    maxima: dict[str, float] = {}
    for t in templates:
        if t.kind is SegmentKind.QRS:
            maxima[t.source_id] = max(maxima.get(t.source_id, 0.0), t.peak)
    return maxima


def normalize_pool(templates, qrs_maxima: dict[str, float]) -> SegmentPool:
    """Scale templates to the pooled amplitude convention.

    QRS templates are divided by their source registry's maximum |QRS|;
    every other template by the raw peak of its associated QRS (making its
    stored peak equal to its fraction of that QRS).  Templates whose
    associated QRS is missing or flat are discarded and counted.
    """
    fss = {t.source_fs for t in templates}
    if len(fss) > 1:
        raise DataFormatError(
            f"templates mix sampling rates {sorted(fss)}; resample before pooling"
        )
    by_kind: dict[SegmentKind, list[SegmentTemplate]] = {k: [] for k in SegmentKind}
    discarded = 0
    for t in sorted(templates, key=lambda t: (t.source_id, t.lead)):
        if t.kind is SegmentKind.QRS:
            m = qrs_maxima.get(t.source_id, 0.0)
            if m <= 0:
                discarded += 1
                continue
            scaled = t.samples / m
        else:
            if not t.assoc_qrs_peak:  # None or 0
                discarded += 1
                continue
            scaled = t.samples / t.assoc_qrs_peak
        frac = float(np.max(np.abs(scaled)))
        by_kind[t.kind].append(replace(t, samples=scaled, amplitude_fraction=frac))
    if discarded:
        log.warning("normalize_pool discarded %d templates without a usable QRS", discarded)
    fs = fss.pop() if fss else 0.0
    return SegmentPool(
        templates={k: tuple(v) for k, v in by_kind.items()},
        sampling_rate=fs,
        discarded=discarded,
    )


def fit_amplitude_models(pool: SegmentPool) -> AmplitudeModel:
    """Maximum-likelihood fits of the per-kind amplitude fractions.

    QRS fractions get a normal law; every other kind gets a log-normal law
    fitted on the natural log of its strictly positive fractions (zero
    fractions are excluded).  Raises :class:`FitError` when a kind has fewer
    than two usable fractions.
    """
    fracs = {
        k: np.array([t.amplitude_fraction for t in pool.of(k)], dtype=np.float64)
        for k in SegmentKind
    }
    q = fracs[SegmentKind.QRS]
    if q.size < 2:
        raise FitError(f"QRS: need >= 2 fractions to fit, got {q.size}")
    qrs = (float(q.mean()), float(q.std()))
    lognormal = {}
    for kind in SegmentKind:
        if kind is SegmentKind.QRS:
            continue
        usable = np.log(fracs[kind][fracs[kind] > 0])
        if usable.size < 2:
            raise FitError(f"{kind.name}: need >= 2 positive fractions to fit, got {usable.size}")
        lognormal[kind] = (float(usable.mean()), float(usable.std()))
    return AmplitudeModel(qrs=qrs, lognormal=lognormal)


def build_pool(pairs) -> SegmentPool:
    """Crop and normalize a collection of ``(record, fiducials)`` pairs.

    Records are processed in sorted id order, so the merged pool is
    deterministic regardless of input order.  Records whose sampling rate
    differs from the first (sorted) record's are linearly resampled to it.
    """
    pairs = sorted(pairs, key=lambda p: p[0].id)
    if not pairs:
        raise DataFormatError("no records to build a pool from")
    pool_fs = pairs[0][0].sampling_rate
    templates = []
    for record, fids in pairs:
        cropped = crop_segments(record, fids)
        if record.sampling_rate != pool_fs:
            cropped = [_resample_template(t, pool_fs) for t in cropped]
        templates.extend(cropped)
    return normalize_pool(templates, registry_qrs_maxima(templates))


def _resample_template(t: SegmentTemplate, fs: float) -> SegmentTemplate:
    n = max(1, round(t.native_length * fs / t.source_fs))
    old = np.linspace(0.0, 1.0, t.native_length)
    new = np.linspace(0.0, 1.0, n)
    return replace(t, samples=np.interp(new, old, t.samples), source_fs=fs)


# ---------------------------------------------------------------------------
# Pool serialization: one samples file per kind plus a manifest.

_MANIFEST_HEADER = "kind,source_id,lead,length,amplitude_fraction"


def save_pool(pool: SegmentPool, directory, model: AmplitudeModel | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = [_MANIFEST_HEADER]
    for kind in CYCLE_ORDER:
        lines = [f"fs={pool.sampling_rate!r}"]
        for t in pool.of(kind):
            lines.append(",".join(repr(v) for v in t.samples.tolist()))
            manifest.append(
                f"{kind.value},{t.source_id},{t.lead},{t.native_length},{t.amplitude_fraction!r}"
            )
        (directory / f"{kind.value}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / "manifest.csv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    if model is not None:
        save_amplitude_model(model, directory / "amplitude_model.json")


def load_pool(directory) -> SegmentPool:
    directory = Path(directory)
    templates: dict[SegmentKind, list[SegmentTemplate]] = {k: [] for k in SegmentKind}
    manifest_path = directory / "manifest.csv"
    if not manifest_path.exists():
        raise DataFormatError(f"{manifest_path}: missing pool manifest")
    rows: dict[SegmentKind, list[tuple[str, str, int, float]]] = {k: [] for k in SegmentKind}
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != _MANIFEST_HEADER:
        raise DataFormatError(f"{manifest_path}:1: expected header {_MANIFEST_HEADER!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataFormatError(f"{manifest_path}:{lineno}: expected 5 fields")
        try:
            kind = SegmentKind(parts[0])
            rows[kind].append((parts[1], parts[2], int(parts[3]), float(parts[4])))
        except (ValueError, KeyError):
            raise DataFormatError(f"{manifest_path}:{lineno}: cannot parse {line!r}") from None
    fs = None
    for kind in SegmentKind:
        kind_path = directory / f"{kind.value}.csv"
        if not kind_path.exists():
            raise DataFormatError(f"{kind_path}: missing pool segment file")
        klines = kind_path.read_text(encoding="utf-8").splitlines()
        if not klines or not klines[0].startswith("fs="):
            raise DataFormatError(f"{kind_path}:1: expected 'fs=<Hz>' header")
        kfs = float(klines[0][3:])
        if fs is None:
            fs = kfs
        elif kfs != fs:
            raise DataFormatError(f"{kind_path}: sampling rate {kfs} != {fs}")
        data_lines = [l for l in klines[1:] if l.strip()]
        if len(data_lines) != len(rows[kind]):
            raise DataFormatError(
                f"{kind_path}: {len(data_lines)} templates but manifest lists {len(rows[kind])}"
            )
        for (src, lead, length, frac), line in zip(rows[kind], data_lines):
            samples = np.array([float(v) for v in line.split(",")], dtype=np.float64)
            if samples.size != length:
                raise DataFormatError(
                    f"{kind_path}: template length {samples.size} != manifest length {length}"
                )
            templates[kind].append(
                SegmentTemplate(
                    kind=kind,
                    samples=samples,
                    source_id=src,
                    lead=lead,
                    native_length=length,
                    source_fs=kfs,
                    amplitude_fraction=frac,
                )
            )
    return SegmentPool(
        templates={k: tuple(v) for k, v in templates.items()}, sampling_rate=float(fs)
    )


def save_amplitude_model(model: AmplitudeModel, path) -> None:
    payload = {
        "qrs": {"mu": model.qrs[0], "sigma": model.qrs[1]},
        "lognormal": {
            k.value: {"mu_log": v[0], "sigma_log": v[1]} for k, v in model.lognormal.items()
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_amplitude_model(path) -> AmplitudeModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        qrs = (float(payload["qrs"]["mu"]), float(payload["qrs"]["sigma"]))
        lognormal = {
            SegmentKind(k): (float(v["mu_log"]), float(v["sigma_log"]))
            for k, v in payload["lognormal"].items()
        }
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: cannot parse amplitude model: {exc}") from None
    return AmplitudeModel(qrs=qrs, lognormal=lognormal)
