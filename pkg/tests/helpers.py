"""Deterministic fixture builders shared across the test modules.

The corpus records are piecewise-analytic beats (Hann bumps for P and T, a
piecewise-linear spike for QRS, low-ripple pauses) so every fiducial is known
exactly and segment-level assertions can be computed by hand.
"""

import numpy as np

from ecgdelin.records import EcgRecord, FiducialSet, WaveKind

FS = 250.0


def hann_bump(n: int, amplitude: float) -> np.ndarray:
    return amplitude * np.hanning(n)


def qrs_shape(n: int, amplitude: float) -> np.ndarray:
    """A sharp biphasic spike peaking at exactly +amplitude."""
    xp = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    fp = np.array([0.0, -0.15, 1.0, -0.25, 0.0]) * amplitude
    return np.interp(np.linspace(0.0, 1.0, n), xp, fp)


def pause_ripple(n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Near-isoelectric filler with a small positive-peak ripple.

    The ripple keeps every pause's peak amplitude strictly positive so the
    log-amplitude fits downstream always see usable fractions.
    """
    return scale * 0.02 * np.sin(np.linspace(0, 4 * np.pi, n)) + rng.normal(0, 0.002, n)


def beat_record(
    record_id: str,
    rng: np.random.Generator,
    n_beats: int = 8,
    n_leads: int = 1,
    fs: float = FS,
    p_amp: float = 0.18,
    t_amp: float = 0.35,
    amp_sd: float = 0.2,
    p_len=(22, 28),
    qrs_len=(18, 24),
    t_len=(34, 42),
    tp_len=(30, 40),
    pq_len=(10, 14),
    st_len=(14, 18),
) -> tuple[EcgRecord, FiducialSet]:
    """One annotated record of clean beats with exact wave boundaries."""
    sig, p_pairs, q_pairs, t_pairs, pos = [], [], [], [], 0
    for _ in range(n_beats):
        amp = 1.0 + amp_sd * rng.standard_normal()
        tp = pause_ripple(tp_len[0] + int(rng.integers(0, tp_len[1] - tp_len[0])), amp, rng)
        sig.append(tp)
        pos += tp.size
        p = hann_bump(p_len[0] + int(rng.integers(0, p_len[1] - p_len[0])), p_amp * amp)
        p_pairs.append((pos, pos + p.size))
        sig.append(p)
        pos += p.size
        pq = pause_ripple(pq_len[0] + int(rng.integers(0, pq_len[1] - pq_len[0])), amp, rng)
        sig.append(pq)
        pos += pq.size
        q = qrs_shape(qrs_len[0] + int(rng.integers(0, qrs_len[1] - qrs_len[0])), amp)
        q_pairs.append((pos, pos + q.size))
        sig.append(q)
        pos += q.size
        st = pause_ripple(st_len[0] + int(rng.integers(0, st_len[1] - st_len[0])), amp, rng)
        sig.append(st)
        pos += st.size
        t = hann_bump(t_len[0] + int(rng.integers(0, t_len[1] - t_len[0])), t_amp * amp)
        t_pairs.append((pos, pos + t.size))
        sig.append(t)
        pos += t.size
    sig.append(pause_ripple(25, 1.0, rng))
    lead0 = np.concatenate(sig)
    leads = [lead0 * (1.0 - 0.2 * k) for k in range(n_leads)]
    names = tuple(f"l{k}" for k in range(n_leads))
    record = EcgRecord(
        id=record_id, sampling_rate=fs, lead_names=names, signal=np.stack(leads)
    )
    fids = FiducialSet({
        WaveKind.P: tuple(p_pairs),
        WaveKind.QRS: tuple(q_pairs),
        WaveKind.T: tuple(t_pairs),
    })
    return record, fids


def beat_corpus(n_records: int = 6, seed: int = 11, n_leads: int = 1, **kw):
    """Records named subj<k>-<i> so three subjects share the corpus."""
    rng = np.random.default_rng(seed)
    return [
        beat_record(f"subj{i % 3}-{i:03d}", rng, n_leads=n_leads, **kw)
        for i in range(n_records)
    ]


def random_counting_mask(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random binary mask whose runs and interior gaps are >= 2 samples.

    Edge-touching runs are allowed (and common). Under these constraints the
    edge-response counting scheme is exact, so brute-force run counts are a
    valid oracle.
    """
    out = np.zeros(n, dtype=np.float64)
    pos = 0 if rng.uniform() < 0.3 else int(rng.integers(2, max(3, n // 3)))
    while pos < n - 1:
        run = int(rng.integers(2, 9))
        end = min(pos + run, n)
        if end - pos < 2:
            break
        out[pos:end] = 1.0
        pos = end + int(rng.integers(2, 9))
    return out


def count_runs(mask: np.ndarray) -> int:
    """Brute-force maximal-run count, the counting oracle."""
    count = 0
    prev = 0
    for v in np.asarray(mask).ravel():
        v = int(v > 0.5)
        if v and not prev:
            count += 1
        prev = v
    return count


def numeric_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative disagreement between two gradient arrays."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / max(na, nb)


def random_fiducials(rng: np.random.Generator, n: int, max_waves: int = 6) -> FiducialSet:
    """Random well-formed fiducial sets over [0, n) for round-trip tests."""
    waves = {}
    for wave in WaveKind:
        pairs = []
        pos = int(rng.integers(0, 8))
        for _ in range(int(rng.integers(0, max_waves + 1))):
            if pos >= n - 1:
                break
            on = pos
            off = on + int(rng.integers(1, 12))
            off = min(off, n)
            pairs.append((on, off))
            pos = off + 1 + int(rng.integers(0, 15))
        waves[wave] = tuple(pairs)
    return FiducialSet(waves)
