"""Plain-text loaders and writers for signals and annotations.

Signal files are UTF-8 text: line 1 ``fs=<Hz>``, line 2 comma-separated lead
names, then one comma-separated row of samples (one column per lead) per time
point, decimal point, no thousands separators.  Annotation files carry the
header ``wave,onset,offset`` followed by rows like ``QRS,120,153``; indices
are 0-based samples with exclusive offsets.

Values are written with Python's shortest round-trip ``repr``, so a
save/load cycle is bit-exact for indices and exact well below 1e-9 mV for
samples.  The record id is taken from the file stem on load.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .records import EcgRecord, FiducialSet, WaveKind


def _fail(path, lineno: int, msg: str):
    raise DataFormatError(f"{path}:{lineno}: {msg}")


def save_record(record: EcgRecord, path) -> None:
    path = Path(path)
    for name in record.lead_names:
        if "," in name or "\n" in name:
            raise DataFormatError(f"lead name {name!r} may not contain ',' or newline")
    lines = [f"fs={record.sampling_rate!r}", ",".join(record.lead_names)]
    cols = record.signal.T  # one row per sample
    lines.extend(",".join(repr(v) for v in row) for row in cols.tolist())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_record(path) -> EcgRecord:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("fs="):
        _fail(path, 1, "expected 'fs=<Hz>' header")
    try:
        fs = float(lines[0][3:])
    except ValueError:
        _fail(path, 1, f"cannot parse sampling rate from {lines[0]!r}")
    if fs <= 0:
        _fail(path, 1, f"sampling rate must be > 0, got {fs}")
    if len(lines) < 2:
        _fail(path, 2, "missing lead-name line")
    names = tuple(lines[1].split(","))
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            _fail(path, lineno, f"expected {len(names)} values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            _fail(path, lineno, f"cannot parse sample row {line!r}")
    if not rows:
        _fail(path, 3, "file contains no samples")
    signal = np.asarray(rows, dtype=np.float64).T
    return EcgRecord(id=path.stem, sampling_rate=fs, lead_names=names, signal=signal)


_ANNOT_HEADER = "wave,onset,offset"


def save_annotations(fids: FiducialSet, path) -> None:
    path = Path(path)
    lines = [_ANNOT_HEADER]
    for wave in WaveKind:
        lines.extend(f"{wave.name},{on},{off}" for on, off in fids.pairs(wave))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_annotations(path) -> FiducialSet:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != _ANNOT_HEADER:
        _fail(path, 1, f"expected header {_ANNOT_HEADER!r}")
    waves: dict[WaveKind, list[tuple[int, int]]] = {w: [] for w in WaveKind}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            _fail(path, lineno, f"expected 3 fields, got {len(parts)}")
        name, on_s, off_s = (p.strip() for p in parts)
        try:
            wave = WaveKind[name]
        except KeyError:
            _fail(path, lineno, f"unknown wave {name!r}")
        try:
            on, off = int(on_s), int(off_s)
        except ValueError:
            _fail(path, lineno, f"cannot parse indices {on_s!r},{off_s!r}")
        if off <= on:
            _fail(path, lineno, f"offset {off} must exceed onset {on}")
        if on < 0:
            _fail(path, lineno, f"onset {on} must be >= 0")
        waves[wave].append((on, off))
    try:
        return FiducialSet({w: tuple(sorted(ps)) for w, ps in waves.items()})
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def record_path(directory, record_id: str) -> Path:
    return Path(directory) / f"{record_id}.csv"


def annotation_path(directory, record_id: str) -> Path:
    return Path(directory) / f"{record_id}.ann"


def subject_of(record_id: str, mapping: dict[str, str] | None = None) -> str:
    """Subject owning a record: mapped explicitly, else the prefix before '-'."""
    if mapping and record_id in mapping:
        return mapping[record_id]
    return record_id.split("-", 1)[0]


def load_subject_map(path) -> dict[str, str]:
    """Read a `record_id,subject_id` override table."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "record_id,subject_id":
        _fail(path, 1, "expected header 'record_id,subject_id'")
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            _fail(path, lineno, f"expected 'record_id,subject_id', got {line!r}")
        mapping[parts[0]] = parts[1]
    return mapping
