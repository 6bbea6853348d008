"""EDA cleaning, tonic/phasic decomposition, and SCR event detection.

The decomposition is deliberately simple: a moving median plus a slow
low-pass gives the tonic level, and the phasic series is defined as the
remainder, so the two components always add back to the clean signal
exactly. SCR events are read off the phasic series as (local-minimum onset,
local-maximum peak) pairs above an amplitude floor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import butter, sosfiltfilt

from .errors import LengthError, NumericError

CLEAN_CUTOFF_HZ = 1.0
TONIC_CUTOFF_HZ = 0.05
TONIC_MEDIAN_S = 4.0
MIN_SCR_AMPLITUDE = 0.01  # microsiemens


@dataclass
class EdaDecomposition:
    """Clean signal split into slow (tonic) and fast (phasic) components."""

    clean: np.ndarray
    tonic: np.ndarray
    phasic: np.ndarray

    def __post_init__(self):
        if not (len(self.clean) == len(self.tonic) == len(self.phasic)):
            raise LengthError("decomposition series must share one length")


@dataclass
class ScrEvent:
    """One skin-conductance response on the phasic series."""

    onset_idx: int
    peak_idx: int
    height: float       # phasic value at the peak
    amplitude: float    # peak minus onset value
    rise_time_s: float
    recovery_idx: int | None = None
    recovery_time_s: float | None = None


def _zero_phase_lowpass(x: np.ndarray, fs: float, cutoff_hz: float) -> np.ndarray:
    """Forward-backward 2nd-order Butterworth. Identity when the cutoff is at
    or above Nyquist (nothing representable to remove)."""
    nyquist = fs / 2.0
    if cutoff_hz >= nyquist:
        return x.copy()
    sos = butter(2, cutoff_hz / nyquist, btype="low", output="sos")
    # pad on the filter's time scale, else slow cutoffs leak edge transients
    padlen = min(len(x) - 1, max(9, int(round(3.0 * fs / cutoff_hz))))
    return sosfiltfilt(sos, x, padlen=padlen)


def _filter_around_nans(x: np.ndarray, fs: float, cutoff_hz: float) -> np.ndarray:
    """Low-pass with NaN positions preserved (gaps interpolated before the
    filter, then re-masked so downstream windowing can drop them)."""
    nan_mask = ~np.isfinite(x)
    if nan_mask.all():
        return x.copy()
    if nan_mask.any():
        idx = np.arange(len(x))
        filled = x.copy()
        filled[nan_mask] = np.interp(idx[nan_mask], idx[~nan_mask], x[~nan_mask])
        out = _zero_phase_lowpass(filled, fs, cutoff_hz)
        out[nan_mask] = np.nan
        return out
    return _zero_phase_lowpass(x, fs, cutoff_hz)


def clean_eda(raw: np.ndarray, fs: float) -> np.ndarray:
    """Zero-phase low-pass of the raw EDA signal at 1.0 Hz."""
    raw = np.asarray(raw, dtype=float)
    if fs <= 0:
        raise LengthError("fs must be positive")
    if len(raw) < 5:
        raise LengthError(f"need >= 5 samples to filter, got {len(raw)}")
    return _filter_around_nans(raw, fs, CLEAN_CUTOFF_HZ)


def _exact_complement(clean: np.ndarray, tonic0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round (tonic, phasic) so that tonic + phasic == clean bit-exactly.

    One or two complement iterations reach a fixed point for signals at EDA
    scale; entries that still miss (possible only at extreme magnitude
    ratios) fall back to the degenerate exact split (tonic = clean).
    """
    tonic = tonic0
    for _ in range(3):
        phasic = clean - tonic
        tonic = clean - phasic
        if np.all(tonic + phasic == clean):
            return tonic, phasic
    bad = (tonic + phasic) != clean
    tonic = tonic.copy()
    phasic = phasic.copy()
    tonic[bad] = clean[bad]
    phasic[bad] = 0.0
    return tonic, phasic


def _median_odd_ext(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving median with odd (line-continuing) edge extension, so
    ramps pass through unchanged at the boundaries."""
    pad = window // 2
    if len(x) < pad + 2:
        return median_filter(x, size=window, mode="nearest")
    left = 2.0 * x[0] - x[1:pad + 1][::-1]
    right = 2.0 * x[-1] - x[-pad - 1:-1][::-1]
    ext = np.concatenate([left, x, right])
    return median_filter(ext, size=window, mode="nearest")[pad:-pad]


def decompose(clean: np.ndarray, fs: float) -> EdaDecomposition:
    """Split a clean EDA signal into tonic and phasic components.

    Tonic = moving median over 4 s followed by a 0.05 Hz low-pass;
    phasic = clean - tonic, with the pair rounded so additivity is exact.
    """
    clean = np.asarray(clean, dtype=float)
    min_len = int(round(TONIC_MEDIAN_S * fs))
    if len(clean) < max(min_len, 2):
        raise LengthError(f"need >= {min_len} samples at {fs} Hz, got {len(clean)}")
    window = max(3, int(round(TONIC_MEDIAN_S * fs)) | 1)  # odd, centered
    nan_mask = ~np.isfinite(clean)
    if nan_mask.all():
        return EdaDecomposition(clean.copy(), clean.copy(), np.zeros_like(clean))
    filled = clean
    if nan_mask.any():
        idx = np.arange(len(clean))
        filled = clean.copy()
        filled[nan_mask] = np.interp(idx[nan_mask], idx[~nan_mask], clean[~nan_mask])
    med = _median_odd_ext(filled, window)
    tonic0 = _zero_phase_lowpass(med, fs, TONIC_CUTOFF_HZ)
    tonic, phasic = _exact_complement(filled, tonic0)
    if nan_mask.any():
        tonic[nan_mask] = np.nan
        phasic[nan_mask] = np.nan
    out_clean = filled.copy()
    out_clean[nan_mask] = np.nan
    return EdaDecomposition(out_clean, tonic, phasic)


def _local_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of local maxima and minima, plateau-aware.

    Runs of equal values are treated as one point: a maximum reports the
    first sample of its run, a minimum the last sample (so a flat baseline
    before a rise yields the onset right where the rise starts). A leading
    plateau followed by a rise counts as a minimum."""
    n = len(x)
    empty = np.empty(0, dtype=int)
    if n < 2:
        return empty, empty
    change = np.nonzero(np.diff(x) != 0)[0]
    if change.size == 0:
        return empty, empty
    run_starts = np.r_[0, change + 1]
    run_ends = np.r_[change, n - 1]
    vals = x[run_starts]
    maxima, minima = [], []
    for k in range(len(vals)):
        left_up = vals[k] > vals[k - 1] if k > 0 else False
        right_up = vals[k] < vals[k + 1] if k + 1 < len(vals) else False
        left_down = vals[k] < vals[k - 1] if k > 0 else False
        right_down = vals[k] > vals[k + 1] if k + 1 < len(vals) else False
        if left_up and right_down:
            maxima.append(run_starts[k])
        elif right_up and (left_down or k == 0):
            minima.append(run_ends[k])
    return np.asarray(maxima, dtype=int), np.asarray(minima, dtype=int)


def detect_scr(phasic: np.ndarray, fs: float,
               min_amplitude: float = MIN_SCR_AMPLITUDE) -> list[ScrEvent]:
    """Detect SCR events on the phasic series.

    Each event is an onset (local minimum) followed by a peak (local
    maximum) with rise amplitude >= ``min_amplitude``. The recovery index is
    the first sample after the peak where the signal has decayed to half the
    amplitude below the peak; it is absent when the next event starts first.
    """
    if min_amplitude <= 0:
        raise ValueError("min_amplitude must be positive")
    phasic = np.asarray(phasic, dtype=float)
    work = np.where(np.isfinite(phasic), phasic, -np.inf)
    maxima, minima = _local_extrema(work)
    if maxima.size == 0 or minima.size == 0:
        return []
    events: list[ScrEvent] = []
    for peak in maxima:
        before = minima[minima < peak]
        if before.size == 0:
            continue
        onset = int(before[-1])
        if not (np.isfinite(phasic[peak]) and np.isfinite(phasic[onset])):
            continue
        amplitude = float(phasic[peak] - phasic[onset])
        if amplitude < min_amplitude:
            continue
        events.append(ScrEvent(
            onset_idx=onset,
            peak_idx=int(peak),
            height=float(phasic[peak]),
            amplitude=amplitude,
            rise_time_s=(int(peak) - onset) / fs,
        ))
    events.sort(key=lambda e: e.onset_idx)
    for k, event in enumerate(events):
        stop = events[k + 1].onset_idx if k + 1 < len(events) else len(phasic)
        target = event.height - event.amplitude / 2.0
        seg = phasic[event.peak_idx + 1: stop]
        hits = np.nonzero(seg <= target)[0]
        if hits.size:
            event.recovery_idx = event.peak_idx + 1 + int(hits[0])
            event.recovery_time_s = (event.recovery_idx - event.peak_idx) / fs
    return events


def scr_window_aggregates(events: list[ScrEvent], window_start_idx: int,
                          window_len: int, fs: float) -> np.ndarray:
    """Six per-window aggregates over events whose peak falls in the window:
    [onset count, peak count, mean height, mean amplitude, mean rise time,
    mean recovery time]; means over an empty set are 0."""
    if window_len <= 0 or window_start_idx < 0:
        raise ValueError("window bounds must be valid")
    stop = window_start_idx + window_len
    inside = [e for e in events if window_start_idx <= e.peak_idx < stop]
    onsets = sum(1 for e in inside if window_start_idx <= e.onset_idx < stop)
    if not inside:
        return np.zeros(6)
    recs = [e.recovery_time_s for e in inside if e.recovery_time_s is not None]
    return np.array([
        float(onsets),
        float(len(inside)),
        float(np.mean([e.height for e in inside])),
        float(np.mean([e.amplitude for e in inside])),
        float(np.mean([e.rise_time_s for e in inside])),
        float(np.mean(recs)) if recs else 0.0,
    ])


def dump_decomposition(path_prefix: str, dec: EdaDecomposition,
                       events: list[ScrEvent]) -> None:
    """Debug dump: ``<prefix>.csv`` with idx,clean,tonic,phasic and
    ``<prefix>_events.json`` with the detected events."""
    if not np.all(np.isfinite(dec.clean)):
        raise NumericError("refusing to dump a decomposition with NaNs")
    with open(path_prefix + ".csv", "w", encoding="utf-8") as fh:
        fh.write("idx,clean,tonic,phasic\n")
        for i, (c, t, p) in enumerate(zip(dec.clean, dec.tonic, dec.phasic)):
            fh.write(f"{i},{c!r},{t!r},{p!r}\n")
    payload = [{
        "onset_idx": e.onset_idx, "peak_idx": e.peak_idx, "height": e.height,
        "amplitude": e.amplitude, "rise_time_s": e.rise_time_s,
        "recovery_idx": e.recovery_idx, "recovery_time_s": e.recovery_time_s,
    } for e in events]
    with open(path_prefix + "_events.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
