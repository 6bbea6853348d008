"""Data model, CSV ingestion, resampling, alignment, and synthetic sessions.

All biometric channels live in a :class:`Recording`, facial landmarks in a
:class:`LandmarkTrack`, and the 0-19 stress trace in a :class:`StressTrace`.
The three are merged onto a common 1 Hz timeline by :func:`align`, which is
the unit every downstream stage consumes.

The synthetic generator exists so the whole pipeline can be exercised and
tuned without wearable recordings: each subject stream is drawn from a
counter-based (Philox) generator keyed by ``(seed, subject index)``, so
adding subjects never perturbs existing ones.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import AlignmentError, FormatError, LabelError, SchemaError, SpecError

CHANNEL_NAMES = ("HR", "EDA", "TEMP", "ACC_X", "ACC_Y", "ACC_Z")
N_LANDMARKS = 68
STRESS_MIN, STRESS_MAX = 0.0, 19.0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class Recording:
    """One subject-session of wristband channels at a single sample rate."""

    subject_id: str
    session_id: str
    sample_rate_hz: float
    channels: dict[str, np.ndarray]

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise FormatError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        lengths = {name: len(series) for name, series in self.channels.items()}
        if len(set(lengths.values())) > 1:
            raise FormatError(f"channel lengths differ: {lengths}")
        for name in self.channels:
            if name not in CHANNEL_NAMES:
                raise SchemaError(f"unknown channel {name!r}; expected one of {CHANNEL_NAMES}")
            self.channels[name] = np.asarray(self.channels[name], dtype=float)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.channels.values())))


@dataclass
class LandmarkTrack:
    """Sequence of 68-point (x, y) landmark frames."""

    subject_id: str
    session_id: str
    sample_rate_hz: float
    frames: np.ndarray  # (n, 68, 2)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (N_LANDMARKS, 2):
            raise FormatError(f"frames must have shape (n, 68, 2), got {self.frames.shape}")
        if self.sample_rate_hz <= 0:
            raise FormatError("sample_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.frames.shape[0]


@dataclass
class StressTrace:
    """Continuous stress level on the 0-19 workload scale."""

    subject_id: str
    session_id: str
    sample_rate_hz: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        finite = self.values[np.isfinite(self.values)]
        if finite.size and (finite.min() < STRESS_MIN or finite.max() > STRESS_MAX):
            raise LabelError(
                f"stress values must lie in [{STRESS_MIN}, {STRESS_MAX}], "
                f"got range [{finite.min()}, {finite.max()}]"
            )
        if self.sample_rate_hz <= 0:
            raise FormatError("sample_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return len(self.values)


@dataclass
class AlignedSession:
    """All modalities of one session truncated onto a shared 1 Hz timeline."""

    subject_id: str
    session_id: str
    channels: dict[str, np.ndarray]
    landmarks: np.ndarray  # (n, 68, 2)
    stress: np.ndarray
    rate_hz: float = 1.0

    def __post_init__(self):
        n = len(self.stress)
        if self.landmarks.shape[0] != n or any(len(s) != n for s in self.channels.values()):
            raise AlignmentError("aligned series must share one length")

    @property
    def length(self) -> int:
        return len(self.stress)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_recording(path: str, schema: dict[str, str], subject_id: str = "",
                   session_id: str = "") -> Recording:
    """Load a biometric CSV (``timestamp`` + one column per declared channel).

    ``schema`` maps channel names (HR, EDA, ...) to CSV column names. The
    sample rate is inferred from the median timestamp delta.
    """
    frame = _read_csv(path)
    if "timestamp" not in frame.columns:
        raise SchemaError(f"{path}: missing 'timestamp' column")
    ts = frame["timestamp"].to_numpy(dtype=float)
    _check_timestamps(ts, path)
    channels = {}
    for channel, column in schema.items():
        if column not in frame.columns:
            raise SchemaError(f"{path}: declared channel {channel!r} missing column {column!r}")
        channels[channel] = frame[column].to_numpy(dtype=float)
    return Recording(subject_id or _stem(path), session_id or "s1",
                     _infer_rate(ts), channels)


def load_landmarks(path: str, subject_id: str = "", session_id: str = "") -> LandmarkTrack:
    """Load a landmark CSV with header ``timestamp,x0..x67,y0..y67``."""
    frame = _read_csv(path)
    cols = ["timestamp"] + [f"x{i}" for i in range(N_LANDMARKS)] + \
        [f"y{i}" for i in range(N_LANDMARKS)]
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing[:4]}...")
    ts = frame["timestamp"].to_numpy(dtype=float)
    _check_timestamps(ts, path)
    xs = frame[[f"x{i}" for i in range(N_LANDMARKS)]].to_numpy(dtype=float)
    ys = frame[[f"y{i}" for i in range(N_LANDMARKS)]].to_numpy(dtype=float)
    frames = np.stack([xs, ys], axis=-1)
    return LandmarkTrack(subject_id or _stem(path), session_id or "s1",
                         _infer_rate(ts), frames)


def load_stress(path: str, subject_id: str = "", session_id: str = "") -> StressTrace:
    """Load a stress CSV with header ``timestamp,stress``."""
    frame = _read_csv(path)
    for col in ("timestamp", "stress"):
        if col not in frame.columns:
            raise SchemaError(f"{path}: missing '{col}' column")
    ts = frame["timestamp"].to_numpy(dtype=float)
    _check_timestamps(ts, path)
    return StressTrace(subject_id or _stem(path), session_id or "s1",
                       _infer_rate(ts), frame["stress"].to_numpy(dtype=float))


def load_corpus(corpus_dir: str, schema: dict[str, str] | None = None) -> list[AlignedSession]:
    """Load every subject directory of a corpus and align each to 1 Hz.

    Expects ``<corpus_dir>/<subject>/{biometrics,landmarks,stress}.csv``.
    """
    schema = schema or {name: name for name in CHANNEL_NAMES}
    sessions = []
    subjects = sorted(
        d for d in os.listdir(corpus_dir)
        if os.path.isdir(os.path.join(corpus_dir, d))
    )
    if not subjects:
        raise FormatError(f"{corpus_dir}: no subject directories found")
    for subject in subjects:
        base = os.path.join(corpus_dir, subject)
        rec = load_recording(os.path.join(base, "biometrics.csv"), schema, subject, "s1")
        lnd = load_landmarks(os.path.join(base, "landmarks.csv"), subject, "s1")
        stress = load_stress(os.path.join(base, "stress.csv"), subject, "s1")
        sessions.append(align(_resample_recording(rec), _resample_landmarks(lnd),
                              _resample_stress(stress)))
    return sessions


def _read_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FormatError(f"no such file: {path}")
    if os.path.getsize(path) == 0:
        raise FormatError(f"{path}: empty file")
    frame = pd.read_csv(path)
    if frame.empty:
        raise FormatError(f"{path}: no data rows")
    return frame


def _check_timestamps(ts: np.ndarray, path: str) -> None:
    if len(ts) < 2:
        raise FormatError(f"{path}: need at least 2 rows to infer a sample rate")
    if np.any(np.diff(ts) <= 0):
        raise FormatError(f"{path}: timestamps must be strictly increasing")


def _infer_rate(ts: np.ndarray) -> float:
    return 1.0 / float(np.median(np.diff(ts)))


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# Resampling and alignment
# ---------------------------------------------------------------------------

def resample_mean(series: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    """Block-mean decimation from ``from_hz`` down to ``to_hz``.

    Output sample k is the mean of input samples whose timestamps fall in
    [k/to_hz, (k+1)/to_hz); output length is floor(len * to_hz / from_hz).
    NaN inputs make their block NaN, which downstream windowing drops.
    """
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise FormatError("cannot resample an empty series")
    if to_hz <= 0 or from_hz <= 0:
        raise FormatError("rates must be positive")
    if to_hz > from_hz:
        raise SpecError(f"upsampling {from_hz} Hz -> {to_hz} Hz is unsupported")
    n = series.size
    out_len = int(math.floor(n * to_hz / from_hz))
    if out_len == 0:
        return np.empty(0, dtype=float)
    buckets = np.floor(np.arange(n) * (to_hz / from_hz)).astype(np.int64)
    keep = buckets < out_len
    buckets, kept = buckets[keep], series[keep]
    counts = np.bincount(buckets, minlength=out_len)
    sums = np.bincount(buckets, weights=kept, minlength=out_len)
    return sums / counts


def _resample_recording(rec: Recording, to_hz: float = 1.0) -> Recording:
    if rec.sample_rate_hz == to_hz:
        return rec
    channels = {k: resample_mean(v, rec.sample_rate_hz, to_hz) for k, v in rec.channels.items()}
    return Recording(rec.subject_id, rec.session_id, to_hz, channels)


def _resample_landmarks(lnd: LandmarkTrack, to_hz: float = 1.0) -> LandmarkTrack:
    if lnd.sample_rate_hz == to_hz:
        return lnd
    n = lnd.n_samples
    flat = lnd.frames.reshape(n, -1)
    cols = [resample_mean(flat[:, j], lnd.sample_rate_hz, to_hz) for j in range(flat.shape[1])]
    frames = np.stack(cols, axis=1).reshape(-1, N_LANDMARKS, 2)
    return LandmarkTrack(lnd.subject_id, lnd.session_id, to_hz, frames)


def _resample_stress(stress: StressTrace, to_hz: float = 1.0) -> StressTrace:
    if stress.sample_rate_hz == to_hz:
        return stress
    values = resample_mean(stress.values, stress.sample_rate_hz, to_hz)
    return StressTrace(stress.subject_id, stress.session_id, to_hz, values)


def align(recording: Recording, landmarks: LandmarkTrack, stress: StressTrace) -> AlignedSession:
    """Join the three 1 Hz streams positionally, truncating to the shortest."""
    ids = {(recording.subject_id, recording.session_id),
           (landmarks.subject_id, landmarks.session_id),
           (stress.subject_id, stress.session_id)}
    if len(ids) > 1:
        raise AlignmentError(f"subject/session IDs disagree: {sorted(ids)}")
    for rate in (recording.sample_rate_hz, landmarks.sample_rate_hz, stress.sample_rate_hz):
        if abs(rate - 1.0) > 1e-9:
            raise AlignmentError(f"align expects 1 Hz inputs, got {rate} Hz")
    n = min(recording.n_samples, landmarks.n_samples, stress.n_samples)
    if n == 0:
        raise AlignmentError("zero overlap between streams")
    return AlignedSession(
        subject_id=recording.subject_id,
        session_id=recording.session_id,
        channels={k: v[:n].copy() for k, v in recording.channels.items()},
        landmarks=landmarks.frames[:n].copy(),
        stress=stress.values[:n].copy(),
    )


def align_session(session: AlignedSession) -> AlignedSession:
    """Idempotent re-alignment of an already aligned session."""
    n = min([session.landmarks.shape[0], len(session.stress)]
            + [len(v) for v in session.channels.values()])
    return AlignedSession(
        subject_id=session.subject_id,
        session_id=session.session_id,
        channels={k: v[:n].copy() for k, v in session.channels.items()},
        landmarks=session.landmarks[:n].copy(),
        stress=session.stress[:n].copy(),
    )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassProfile:
    """Per-class generator parameters; index = stress class 0/1/2.

    The default profile encodes complementary information softly: biometric
    channels carry a strong class-0-vs-rest signal and a weaker 1-vs-2
    signal, while landmark geometry carries a strong 1-vs-2 signal and a
    weaker class-0-vs-rest one. Segment-level jitter injects the honest
    within-class variability that keeps held-out-subject accuracy below 100%.
    """

    hr_mean: tuple[float, float, float] = (70.0, 84.0, 90.0)
    temp_mean: tuple[float, float, float] = (33.8, 33.2, 32.8)
    acc_mean: tuple[float, float, float] = (0.02, 0.05, 0.08)
    scr_rate_per_min: tuple[float, float, float] = (1.0, 4.0, 7.0)
    scr_amplitude: tuple[float, float, float] = (0.18, 0.25, 0.32)
    tonic_base: float = 2.0
    tonic_drift: float = 0.35
    mouth_open_px: tuple[float, float, float] = (2.0, 5.0, 14.0)
    brow_raise_px: tuple[float, float, float] = (0.0, 2.0, 8.0)
    # segment-level wander of the class parameters (same units as the means)
    hr_segment_jitter: float = 3.0
    temp_segment_jitter: float = 0.15
    acc_segment_jitter: float = 0.012
    mouth_segment_jitter: float = 1.3
    brow_segment_jitter: float = 0.8
    # measurement noise scales, multiplied by SynthSpec.noise_sigma
    hr_sigma: float = 1.5
    temp_sigma: float = 0.08
    acc_sigma: float = 0.01
    eda_sigma: float = 0.015
    landmark_sigma_px: float = 1.0
    # per-subject offsets, also multiplied by noise_sigma
    subject_hr_sigma: float = 2.0
    subject_temp_sigma: float = 0.12
    subject_mouth_sigma: float = 0.8
    subject_scale_jitter: float = 0.05


def default_profile() -> ClassProfile:
    """Soft complementary-information profile used by the evaluation analogs."""
    return ClassProfile()


def strict_complementary_profile() -> ClassProfile:
    """Biometrics identical for classes 1 and 2; only landmarks split them.

    Under this profile no readout of biometric features alone can beat
    chance on class 1 vs class 2 (the distributions coincide), while fused
    features can, via mouth/brow geometry.
    """
    return ClassProfile(
        hr_mean=(70.0, 88.0, 88.0),
        temp_mean=(33.8, 33.0, 33.0),
        acc_mean=(0.02, 0.07, 0.07),
        scr_rate_per_min=(1.0, 6.0, 6.0),
        scr_amplitude=(0.18, 0.3, 0.3),
        mouth_open_px=(2.0, 3.0, 14.0),
        brow_raise_px=(0.0, 0.5, 8.0),
        hr_segment_jitter=2.0,
        mouth_segment_jitter=1.0,
    )


def scr_signal_profile() -> ClassProfile:
    """Class signal carried almost entirely by SCR rate on a drifting baseline.

    HR/TEMP/ACC and landmark geometry are class-independent, and the tonic
    drift is large relative to the pulses, so raw-EDA statistics are a poor
    stand-in for the phasic decomposition. Used by the EDA ablation analog.
    """
    return ClassProfile(
        hr_mean=(75.0, 75.0, 75.0),
        temp_mean=(33.2, 33.2, 33.2),
        acc_mean=(0.04, 0.04, 0.04),
        scr_rate_per_min=(0.5, 4.0, 10.0),
        scr_amplitude=(0.2, 0.2, 0.2),
        tonic_base=2.5,
        tonic_drift=1.4,
        mouth_open_px=(5.0, 5.0, 5.0),
        brow_raise_px=(2.0, 2.0, 2.0),
        hr_segment_jitter=1.5,
        temp_segment_jitter=0.1,
        mouth_segment_jitter=1.0,
        brow_segment_jitter=0.6,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic synthetic corpus description."""

    n_subjects: int = 6
    session_seconds: int = 1200
    profile: ClassProfile = field(default_factory=default_profile)
    noise_sigma: float = 1.0
    seed: int = 0
    raw_rate_hz: float = 4.0
    segment_seconds: int = 150

    def __post_init__(self):
        if self.n_subjects < 2:
            raise SpecError("n_subjects must be >= 2 (LOSO needs >= 2 folds)")
        if self.session_seconds < 40:
            raise SpecError("session_seconds must cover at least one 40 s window")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.segment_seconds <= 0 or self.raw_rate_hz < 1.0:
            raise SpecError("segment_seconds must be positive and raw_rate_hz >= 1")


def _subject_rng(seed: int, subject_idx: int) -> np.random.Generator:
    # counter-based stream keyed by (seed, subject): independent of n_subjects
    key = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(subject_idx))
    return np.random.Generator(np.random.Philox(key=key))


def scr_pulse(fs: float, duration_s: float = 12.0, rise_s: float = 2.0,
              decay_s: float = 5.0, amplitude: float = 1.0) -> np.ndarray:
    """Biexponential skin-conductance pulse, peak value = ``amplitude``."""
    t = np.arange(int(round(duration_s * fs))) / fs
    shape = np.exp(-t / decay_s) - np.exp(-t / rise_s)
    peak = shape.max()
    if peak <= 0:
        raise SpecError("degenerate pulse shape; rise must be faster than decay")
    return amplitude * shape / peak


def _segment_classes(rng: np.random.Generator, n_segments: int) -> np.ndarray:
    # balanced class counts per subject, order shuffled
    reps = int(math.ceil(n_segments / 3))
    classes = np.tile(np.arange(3), reps)[:n_segments]
    rng.shuffle(classes)
    return classes


def _smooth_drift(rng: np.random.Generator, n: int, fs: float, amplitude: float) -> np.ndarray:
    # two slow sinusoids with random phase/frequency: smooth, bounded wander
    t = np.arange(n) / fs
    f1 = rng.uniform(0.0008, 0.002)
    f2 = rng.uniform(0.002, 0.006)
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    return amplitude * (0.7 * np.sin(2 * np.pi * f1 * t + p1)
                        + 0.3 * np.sin(2 * np.pi * f2 * t + p2))


def _base_face() -> np.ndarray:
    """Neutral 68-point template in a ~200x240 px box, standard ordering.

    Indices: jaw 0-16, right brow 17-21, left brow 22-26, nose bridge 27-30,
    nose base 31-35, right eye 36-41, left eye 42-47, outer mouth 48-59,
    inner mouth 60-67.
    """
    pts = np.zeros((N_LANDMARKS, 2))
    # jaw: arc from right ear (x=20) down to the chin (index 8) and back up
    xs = np.linspace(20, 180, 17)
    pts[0:17, 0] = xs
    pts[0:17, 1] = 95 + 110 * np.sin(np.linspace(0.15, np.pi - 0.15, 17))
    # brows
    pts[17:22, 0] = np.linspace(40, 85, 5)
    pts[17:22, 1] = 75 - np.array([0, 4, 6, 4, 2])
    pts[22:27, 0] = np.linspace(115, 160, 5)
    pts[22:27, 1] = 75 - np.array([2, 4, 6, 4, 0])
    # nose bridge + base
    pts[27:31, 0] = 100
    pts[27:31, 1] = np.linspace(85, 115, 4)
    pts[31:36, 0] = np.linspace(88, 112, 5)
    pts[31:36, 1] = 125
    # right eye (36-41), hexagon around (65, 90)
    pts[36:42] = np.array([[52, 90], [60, 86], [70, 86], [78, 90], [70, 94], [60, 94]])
    # left eye (42-47), hexagon around (135, 90)
    pts[42:48] = np.array([[122, 90], [130, 86], [140, 86], [148, 90], [140, 94], [130, 94]])
    # outer mouth (48-59) around (100, 160)
    pts[48:60] = np.array([
        [72, 160], [80, 153], [92, 150], [100, 151], [108, 150], [120, 153],
        [128, 160], [120, 167], [108, 170], [100, 171], [92, 170], [80, 167],
    ])
    # inner mouth (60-67)
    pts[60:68] = np.array([
        [80, 160], [92, 157], [100, 158], [108, 157],
        [120, 160], [108, 163], [100, 164], [92, 163],
    ])
    return pts


_MOUTH_LOWER = np.array([55, 56, 57, 58, 59, 64, 65, 66, 67])
_BROWS = np.arange(17, 27)


def _synth_subject(spec: SynthSpec, subject_idx: int):
    """Generate one subject's raw (4 Hz) streams. Deterministic per (seed, idx)."""
    rng = _subject_rng(spec.seed, subject_idx)
    prof = spec.profile
    fs = spec.raw_rate_hz
    n = int(round(spec.session_seconds * fs))
    noise = spec.noise_sigma

    seg_len = int(round(spec.segment_seconds * fs))
    n_segments = max(1, int(math.ceil(n / seg_len)))
    classes = _segment_classes(rng, n_segments)
    cls = np.repeat(classes, seg_len)[:n]

    # per-subject idiosyncrasies (scale with noise so noiseless runs are exact)
    off_hr = noise * prof.subject_hr_sigma * rng.normal()
    off_temp = noise * prof.subject_temp_sigma * rng.normal()
    off_mouth = noise * prof.subject_mouth_sigma * rng.normal()
    face_scale = 1.0 + noise * prof.subject_scale_jitter * rng.normal()

    # per-segment wander of class parameters (also vanishes at noise 0)
    seg_jit = {
        "hr": noise * prof.hr_segment_jitter * rng.normal(size=n_segments),
        "temp": noise * prof.temp_segment_jitter * rng.normal(size=n_segments),
        "acc": noise * prof.acc_segment_jitter * rng.normal(size=n_segments),
        "mouth": noise * prof.mouth_segment_jitter * rng.normal(size=n_segments),
        "brow": noise * prof.brow_segment_jitter * rng.normal(size=n_segments),
    }
    per_sample = {k: np.repeat(v, seg_len)[:n] for k, v in seg_jit.items()}

    def class_series(means: tuple[float, float, float]) -> np.ndarray:
        return np.asarray(means, dtype=float)[cls]

    hr = class_series(prof.hr_mean) + off_hr + per_sample["hr"] \
        + noise * prof.hr_sigma * rng.normal(size=n)
    temp = class_series(prof.temp_mean) + off_temp + per_sample["temp"] \
        + noise * prof.temp_sigma * rng.normal(size=n)
    acc_base = class_series(prof.acc_mean) + per_sample["acc"]
    acc = {
        axis: acc_base + noise * prof.acc_sigma * rng.normal(size=n)
        for axis in ("ACC_X", "ACC_Y", "ACC_Z")
    }

    # EDA: drifting tonic baseline + class-rate SCR pulses + measurement noise
    tonic = prof.tonic_base + _smooth_drift(rng, n, fs, prof.tonic_drift)
    eda = tonic.copy()
    rates = np.asarray(prof.scr_rate_per_min, dtype=float)[classes] / 60.0
    amps = np.asarray(prof.scr_amplitude, dtype=float)[classes]
    for seg in range(n_segments):
        start, stop = seg * seg_len, min((seg + 1) * seg_len, n)
        t = start + rng.exponential(1.0 / max(rates[seg], 1e-9)) * fs
        while t < stop:
            onset = int(t)
            amp = amps[seg] * rng.uniform(0.7, 1.3)
            shape = scr_pulse(fs, amplitude=amp, rise_s=rng.uniform(1.5, 2.5),
                              decay_s=rng.uniform(4.0, 6.0))
            end = min(onset + len(shape), n)
            eda[onset:end] += shape[:end - onset]
            t += rng.exponential(1.0 / max(rates[seg], 1e-9)) * fs
    eda = eda + noise * prof.eda_sigma * rng.normal(size=n)

    # stress trace: value near the class bin center, clipped into the bin
    centers = np.array([3.0, 10.0, 16.5])
    lo = np.array([0.0, 7.0, 14.0])
    hi = np.array([6.49, 13.49, 19.0])
    wander = noise * 0.8 * rng.normal(size=n_segments)
    seg_values = np.clip(centers[classes] + wander, lo[classes], hi[classes])
    stress = np.repeat(seg_values, seg_len)[:n]

    # landmarks: template + class geometry offsets + head drift + pixel noise
    base = _base_face()
    mouth_open = class_series(prof.mouth_open_px) + off_mouth + per_sample["mouth"]
    brow_raise = class_series(prof.brow_raise_px) + per_sample["brow"]
    frames = np.broadcast_to(base, (n, N_LANDMARKS, 2)).copy()
    frames[:, _MOUTH_LOWER, 1] += mouth_open[:, None]
    frames[:, _BROWS, 1] -= brow_raise[:, None]
    frames *= face_scale
    head_x = _smooth_drift(rng, n, fs, 3.0 * noise)
    head_y = _smooth_drift(rng, n, fs, 3.0 * noise)
    frames[:, :, 0] += head_x[:, None]
    frames[:, :, 1] += head_y[:, None]
    frames += noise * prof.landmark_sigma_px * rng.normal(size=frames.shape)

    sid = f"subj{subject_idx:02d}"
    rec = Recording(sid, "s1", fs, {"HR": hr, "EDA": eda, "TEMP": temp, **acc})
    lnd = LandmarkTrack(sid, "s1", fs, frames)
    stress_trace = StressTrace(sid, "s1", fs, stress)
    return rec, lnd, stress_trace


def synth_raw_streams(spec: SynthSpec) -> list[tuple[Recording, LandmarkTrack, StressTrace]]:
    """Raw-rate streams per subject, before the 1 Hz downsampling step."""
    return [_synth_subject(spec, i) for i in range(spec.n_subjects)]


def synth_dataset(spec: SynthSpec) -> list[AlignedSession]:
    """Deterministic synthetic corpus, downsampled to 1 Hz and aligned."""
    sessions = []
    for rec, lnd, stress in synth_raw_streams(spec):
        sessions.append(align(_resample_recording(rec), _resample_landmarks(lnd),
                              _resample_stress(stress)))
    return sessions


# ---------------------------------------------------------------------------
# Corpus serialization (the sigcore CSV formats)
# ---------------------------------------------------------------------------

def write_corpus(spec: SynthSpec, out_dir: str) -> str:
    """Write per-subject CSVs plus a corpus manifest; returns the corpus dir."""
    os.makedirs(out_dir, exist_ok=True)
    for rec, lnd, stress in synth_raw_streams(spec):
        base = os.path.join(out_dir, rec.subject_id)
        os.makedirs(base, exist_ok=True)
        ts = np.arange(rec.n_samples) / rec.sample_rate_hz
        bio_cols = {"timestamp": ts, **{name: rec.channels[name] for name in CHANNEL_NAMES}}
        pd.DataFrame(bio_cols).to_csv(os.path.join(base, "biometrics.csv"), index=False)
        lts = np.arange(lnd.n_samples) / lnd.sample_rate_hz
        lnd_cols = {"timestamp": lts}
        lnd_cols.update({f"x{i}": lnd.frames[:, i, 0] for i in range(N_LANDMARKS)})
        lnd_cols.update({f"y{i}": lnd.frames[:, i, 1] for i in range(N_LANDMARKS)})
        pd.DataFrame(lnd_cols).to_csv(os.path.join(base, "landmarks.csv"), index=False)
        sts = np.arange(stress.n_samples) / stress.sample_rate_hz
        pd.DataFrame({"timestamp": sts, "stress": stress.values}).to_csv(
            os.path.join(base, "stress.csv"), index=False)
    manifest = {
        "n_subjects": spec.n_subjects,
        "session_seconds": spec.session_seconds,
        "raw_rate_hz": spec.raw_rate_hz,
        "seed": spec.seed,
        "noise_sigma": spec.noise_sigma,
        "subjects": [f"subj{i:02d}" for i in range(spec.n_subjects)],
    }
    with open(os.path.join(out_dir, "corpus.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir
