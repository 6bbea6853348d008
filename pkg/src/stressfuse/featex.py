"""Windowed statistical features, landmark geometry, labels, and the matrix.

Every session is cut into 40 s windows sliding by 20 s. Per window the
pipeline computes 15 statistics over each biometric series (including the
EDA decomposition products), 10 SCR aggregates, and 14 statistics over each
of the 136 landmark coordinate series. The presets reproduce the published
column counts: 175 biometric, 1904 landmark, 2079 fused.

Feature values are z-scored per subject against that subject's own windows,
which cannot leak information across held-out-subject folds.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import edaproc
from .errors import DegenerateFrameError, EmptyMatrixError, LabelError, LengthError
from .sigcore import N_LANDMARKS, AlignedSession

# statistic tokens in manifest order
STAT_NAMES = (
    "energy", "fourier_entropy", "skew", "autocorr", "quantile", "kurtosis",
    "above_mean", "below_mean", "variation", "RMS", "variance", "avg",
    "std", "max", "min",
)
# variation coefficient is scale-degenerate on pixel coordinates
LANDMARK_STAT_NAMES = tuple(s for s in STAT_NAMES if s != "variation")

BIO_SERIES = (
    "EDA", "EDA_Clean", "EDA_Tonic", "EDA_Phasic", "EDA_Deriv",
    "HR", "TEMP", "ACC_X", "ACC_Y", "ACC_Z", "ACC_MAG",
)

SCR_AGG_NAMES = (
    "scr_onset_count", "scr_peak_count", "scr_mean_height",
    "scr_mean_amplitude", "scr_mean_rise_time", "scr_mean_recovery_time",
    "scr_recovery_count", "scr_max_height", "scr_max_amplitude",
    "scr_sum_amplitude",
)

COORD_SERIES = tuple(f"X{i}" for i in range(N_LANDMARKS)) + \
    tuple(f"Y{i}" for i in range(N_LANDMARKS))

# columns removed by the tonic/phasic/SCR ablation
EDA_COMPONENT_MARKERS = ("EDA_Tonic", "EDA_Phasic", "scr_")

_REL_STD_FLOOR = 1e-13  # below this relative spread a window counts as constant


@dataclass(frozen=True)
class WindowSpec:
    """Rolling 40 s window with a 20 s slide at 1 Hz."""

    window_s: int = 40
    step_s: int = 20
    rate_hz: float = 1.0

    def __post_init__(self):
        if self.window_s <= 0 or not (0 < self.step_s <= self.window_s):
            raise ValueError("need window_s > 0 and 0 < step_s <= window_s")


def windows(session_len: int, spec: WindowSpec) -> list[tuple[int, int]]:
    """[start, end) index pairs; count = floor((len - window)/step) + 1."""
    w = int(spec.window_s * spec.rate_hz)
    s = int(spec.step_s * spec.rate_hz)
    if session_len < w:
        warnings.warn(f"session of {session_len} samples is shorter than one "
                      f"{w}-sample window; no windows produced")
        return []
    count = (session_len - w) // s + 1
    return [(i * s, i * s + w) for i in range(count)]


def bin_label(window_stress: np.ndarray) -> int:
    """Mean stress of the window, rounded half-up, binned 0-6 / 7-13 / 14-19."""
    values = np.asarray(window_stress, dtype=float)
    if values.min() < 0.0 or values.max() > 19.0:
        raise LabelError(f"stress outside [0, 19]: [{values.min()}, {values.max()}]")
    m = int(math.floor(float(values.mean()) + 0.5))
    if m <= 6:
        return 0
    if m <= 13:
        return 1
    return 2


# ---------------------------------------------------------------------------
# Window statistics
# ---------------------------------------------------------------------------

def _stat_block(W: np.ndarray, stats: tuple[str, ...], q: float = 0.75,
                lag: int = 1) -> np.ndarray:
    """Statistics per row of a (n_windows, window_len) array."""
    W = np.asarray(W, dtype=float)
    nw, n = W.shape
    mean = W.mean(axis=1)
    diff = W - mean[:, None]
    m2 = np.mean(diff ** 2, axis=1)          # population variance
    energy = np.sum(W ** 2, axis=1)
    rms = np.sqrt(energy / n)
    const = m2 <= (_REL_STD_FLOOR ** 2) * np.maximum(1.0, rms ** 2)
    safe_m2 = np.where(const, 1.0, m2)

    out = {}
    if "energy" in stats:
        out["energy"] = energy
    if "fourier_entropy" in stats:
        spec = np.abs(np.fft.rfft(W, axis=1)) ** 2
        total = spec.sum(axis=1)
        probs = spec / np.where(total == 0, 1.0, total)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(probs > 0, probs * np.log(probs), 0.0)
        ent = -terms.sum(axis=1)
        out["fourier_entropy"] = np.where((total == 0) | const, 0.0, ent)
    if "skew" in stats:
        m3 = np.mean(diff ** 3, axis=1)
        g1 = m3 / safe_m2 ** 1.5
        corr = math.sqrt(n * (n - 1)) / (n - 2) if n > 2 else 0.0
        out["skew"] = np.where(const, 0.0, g1 * corr)
    if "autocorr" in stats:
        num = np.sum(diff[:, :-lag] * diff[:, lag:], axis=1)
        out["autocorr"] = np.where(const, 0.0, num / (n * safe_m2))
    if "quantile" in stats:
        out["quantile"] = np.quantile(W, q, axis=1)
    if "kurtosis" in stats:
        m4 = np.mean(diff ** 4, axis=1)
        out["kurtosis"] = np.where(const, 0.0, m4 / safe_m2 ** 2 - 3.0)
    if "above_mean" in stats:
        out["above_mean"] = (W > mean[:, None]).sum(axis=1).astype(float)
    if "below_mean" in stats:
        out["below_mean"] = (W < mean[:, None]).sum(axis=1).astype(float)
    std_samp = np.sqrt(safe_m2 * n / (n - 1)) if n > 1 else np.zeros(nw)
    std_samp = np.where(const, 0.0, std_samp)
    if "variation" in stats:
        out["variation"] = np.where(mean == 0.0, 0.0, std_samp / np.where(mean == 0, 1, mean))
    if "RMS" in stats:
        out["RMS"] = rms
    if "variance" in stats:
        out["variance"] = np.where(const, 0.0, m2)
    if "avg" in stats:
        out["avg"] = mean
    if "std" in stats:
        out["std"] = std_samp
    if "max" in stats:
        out["max"] = W.max(axis=1)
    if "min" in stats:
        out["min"] = W.min(axis=1)
    return np.column_stack([out[s] for s in stats])


def stat_features(x: np.ndarray, q: float = 0.75, lag: int = 1) -> np.ndarray:
    """The 15 window statistics of one series, in manifest order."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise LengthError(f"need a 1-d series of length >= 2, got shape {x.shape}")
    return _stat_block(x[None, :], STAT_NAMES, q=q, lag=lag)[0]


# ---------------------------------------------------------------------------
# Landmark geometry
# ---------------------------------------------------------------------------

GEOMETRY_NAMES = (
    "ear_right", "ear_left", "eye_open_right", "eye_open_left",
    "mouth_width", "mouth_height", "mouth_aspect",
    "brow_eye_inner_right", "brow_eye_outer_right",
    "brow_eye_inner_left", "brow_eye_outer_left",
    "brow_slope", "nose_chin", "jaw_width", "mouth_corner_asym",
    "interocular_face_ratio",
    "nose_width", "inner_eye_gap", "inner_mouth_open", "brow_gap",
    "eye_span_outer", "nose_bridge_len", "nose_lip", "lip_chin",
    "brow_mid_eye_right", "brow_mid_eye_left",
    "cheek_mouth_right", "cheek_mouth_left", "jaw_right_span", "jaw_left_span",
)

# further pairwise distances (normalized by inter-ocular distance)
_PAIR_FEATURES = (
    (31, 35), (39, 42), (62, 66), (21, 22), (36, 45), (27, 30), (33, 51),
    (57, 8), (19, 41), (24, 47), (4, 48), (12, 54), (0, 8), (8, 16),
)


def landmark_geometry(frames: np.ndarray) -> np.ndarray:
    """30 scale-invariant geometry scalars per frame; input (n, 68, 2)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[1:] != (N_LANDMARKS, 2):
        raise DegenerateFrameError(f"expected (n, 68, 2) frames, got {frames.shape}")

    def dist(i, j):
        return np.linalg.norm(frames[:, i] - frames[:, j], axis=1)

    eye_r = frames[:, 36:42].mean(axis=1)
    eye_l = frames[:, 42:48].mean(axis=1)
    iod = np.linalg.norm(eye_r - eye_l, axis=1)
    if np.any(iod <= 0) or not np.all(np.isfinite(iod)):
        raise DegenerateFrameError("inter-ocular distance is zero or non-finite")

    ear_r = (dist(37, 41) + dist(38, 40)) / (2.0 * dist(36, 39))
    ear_l = (dist(43, 47) + dist(44, 46)) / (2.0 * dist(42, 45))
    mouth_w = dist(48, 54)
    mouth_h = dist(51, 57)
    dx = frames[:, 26, 0] - frames[:, 17, 0]
    dy = frames[:, 26, 1] - frames[:, 17, 1]
    brow_slope = dy / np.where(dx == 0, np.nan, dx)
    face_height = dist(27, 8)

    cols = [
        ear_r,
        ear_l,
        (dist(37, 41) + dist(38, 40)) / (2.0 * iod),
        (dist(43, 47) + dist(44, 46)) / (2.0 * iod),
        mouth_w / iod,
        mouth_h / iod,
        mouth_h / np.where(mouth_w == 0, np.nan, mouth_w),
        dist(21, 39) / iod,
        dist(17, 36) / iod,
        dist(22, 42) / iod,
        dist(26, 45) / iod,
        brow_slope,
        dist(33, 8) / iod,
        dist(0, 16) / iod,
        (frames[:, 48, 1] - frames[:, 54, 1]) / iod,
        iod / np.where(face_height == 0, np.nan, face_height),
    ]
    cols.extend(dist(i, j) / iod for i, j in _PAIR_FEATURES)
    return np.column_stack(cols)


def landmark_derived(frame: np.ndarray) -> np.ndarray:
    """Geometry scalars of a single 68-point frame."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (N_LANDMARKS, 2):
        raise DegenerateFrameError(f"expected one (68, 2) frame, got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise DegenerateFrameError("frame contains non-finite coordinates")
    return landmark_geometry(frame[None])[0]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureManifest:
    """Ordered column recipe for the feature matrix."""

    name: str
    bio_series: tuple[str, ...] = ()
    bio_stats: tuple[str, ...] = STAT_NAMES
    include_scr: bool = False
    landmark_stats: tuple[str, ...] = ()
    include_geometry: bool = False
    quantile_q: float = 0.75
    autocorr_lag: int = 1

    @property
    def feature_names(self) -> list[str]:
        names = [f"{stat}_{series}" for series in self.bio_series for stat in self.bio_stats]
        if self.include_scr:
            names.extend(SCR_AGG_NAMES)
        names.extend(f"{stat}_{coord}" for coord in COORD_SERIES
                     for stat in self.landmark_stats)
        if self.include_geometry:
            names.extend(f"geom_{g}" for g in GEOMETRY_NAMES)
        if len(set(names)) != len(names):
            raise ValueError("manifest produces duplicate column names")
        return names

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def bio_columns(self, names: list[str] | None = None) -> list[int]:
        return bio_columns(names if names is not None else self.feature_names)

    def landmark_columns(self, names: list[str] | None = None) -> list[int]:
        return landmark_columns(names if names is not None else self.feature_names)


def landmark_columns(names: list[str]) -> list[int]:
    """Indices of landmark-derived columns (coordinate stats and geometry)."""
    coords = set(COORD_SERIES)
    return [i for i, n in enumerate(names)
            if n.startswith("geom_") or n.rsplit("_", 1)[-1] in coords]


def bio_columns(names: list[str]) -> list[int]:
    """Indices of biometric columns (everything that is not landmark-derived)."""
    lnd = set(landmark_columns(names))
    return [i for i in range(len(names)) if i not in lnd]


def manifest(preset: str = "fused-paper") -> FeatureManifest:
    """Named presets; the ``*-paper`` ones hit the published column counts."""
    if preset == "bio-paper":
        return FeatureManifest(name=preset, bio_series=BIO_SERIES, include_scr=True)
    if preset == "lnd-paper":
        return FeatureManifest(name=preset, landmark_stats=LANDMARK_STAT_NAMES)
    if preset == "fused-paper":
        return FeatureManifest(name=preset, bio_series=BIO_SERIES, include_scr=True,
                               landmark_stats=LANDMARK_STAT_NAMES)
    if preset == "fused-geometry":
        return FeatureManifest(name=preset, bio_series=BIO_SERIES, include_scr=True,
                               landmark_stats=LANDMARK_STAT_NAMES, include_geometry=True)
    raise ValueError(f"unknown manifest preset {preset!r}")


# ---------------------------------------------------------------------------
# Matrix assembly
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Windows x named features, with labels and per-row subject IDs.

    ``values`` holds the per-subject z-scored features used for modeling;
    ``raw_values`` keeps the pre-normalization numbers (variance-threshold
    selection scores are defined on those).
    """

    values: np.ndarray
    raw_values: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    feature_names: list[str]
    dropped_windows: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise EmptyMatrixError("feature matrix contains non-finite cells")
        if not np.isin(self.labels, (0, 1, 2)).all():
            raise LabelError("labels must be in {0, 1, 2}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def select_columns(self, indices: list[int]) -> "FeatureMatrix":
        idx = list(indices)
        return FeatureMatrix(self.values[:, idx], self.raw_values[:, idx],
                             self.labels, self.subject_ids,
                             [self.feature_names[i] for i in idx],
                             self.dropped_windows)

    def select_rows(self, mask: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.values[mask], self.raw_values[mask],
                             self.labels[mask], self.subject_ids[mask],
                             list(self.feature_names), self.dropped_windows)

    def drop_eda_components(self) -> "FeatureMatrix":
        keep = [i for i, n in enumerate(self.feature_names)
                if not any(m in n for m in EDA_COMPONENT_MARKERS)]
        return self.select_columns(keep)


def _session_series(session: AlignedSession) -> dict[str, np.ndarray]:
    """Raw channels plus the derived EDA/ACC series, all at 1 Hz."""
    eda = session.channels["EDA"]
    clean = edaproc.clean_eda(eda, session.rate_hz)
    dec = edaproc.decompose(clean, session.rate_hz)
    acc = np.sqrt(session.channels["ACC_X"] ** 2 + session.channels["ACC_Y"] ** 2
                  + session.channels["ACC_Z"] ** 2)
    return {
        "EDA": eda,
        "EDA_Clean": dec.clean,
        "EDA_Tonic": dec.tonic,
        "EDA_Phasic": dec.phasic,
        "EDA_Deriv": np.diff(dec.clean, prepend=dec.clean[:1]),
        "HR": session.channels["HR"],
        "TEMP": session.channels["TEMP"],
        "ACC_X": session.channels["ACC_X"],
        "ACC_Y": session.channels["ACC_Y"],
        "ACC_Z": session.channels["ACC_Z"],
        "ACC_MAG": acc,
    }


def _scr_aggregate_block(events, spans, fs) -> np.ndarray:
    rows = np.zeros((len(spans), len(SCR_AGG_NAMES)))
    for r, (start, end) in enumerate(spans):
        base = edaproc.scr_window_aggregates(events, start, end - start, fs)
        inside = [e for e in events if start <= e.peak_idx < end]
        recovered = sum(1 for e in inside if e.recovery_time_s is not None)
        extras = np.array([
            float(recovered),
            max((e.height for e in inside), default=0.0),
            max((e.amplitude for e in inside), default=0.0),
            sum(e.amplitude for e in inside),
        ])
        rows[r] = np.concatenate([base, extras])
    return rows


def _window_view(series: np.ndarray, spans: list[tuple[int, int]]) -> np.ndarray:
    width = spans[0][1] - spans[0][0]
    return np.stack([series[s:e] for s, e in spans]) if width else np.empty((0, 0))


def build_matrix(sessions: list[AlignedSession], man: FeatureManifest,
                 spec: WindowSpec | None = None) -> FeatureMatrix:
    """Extract, label, drop NaN windows, and z-score per subject."""
    spec = spec or WindowSpec()
    if not sessions:
        raise EmptyMatrixError("no sessions given")
    blocks, labels, subjects = [], [], []
    dropped = 0
    for session in sessions:
        spans = windows(session.length, spec)
        if not spans:
            continue
        series = _session_series(session) if man.bio_series or man.include_scr else {}
        bad = np.zeros(session.length, dtype=bool)
        for values in session.channels.values():
            bad |= ~np.isfinite(values)
        for values in series.values():  # derived series can spread NaNs
            bad |= ~np.isfinite(values)
        bad |= ~np.isfinite(session.landmarks).all(axis=(1, 2))
        bad |= ~np.isfinite(session.stress)
        bad_window = np.array([bad[s:e].any() for s, e in spans])
        dropped += int(bad_window.sum())
        keep = ~bad_window
        if not keep.any():
            continue
        spans_kept = [sp for sp, ok in zip(spans, keep) if ok]

        cols = []
        for name in man.bio_series:
            W = _window_view(series[name], spans_kept)
            cols.append(_stat_block(W, man.bio_stats, q=man.quantile_q,
                                    lag=man.autocorr_lag))
        if man.include_scr:
            events = edaproc.detect_scr(series["EDA_Phasic"], session.rate_hz)
            cols.append(_scr_aggregate_block(events, spans_kept, session.rate_hz))
        if man.landmark_stats:
            flat = np.concatenate([session.landmarks[:, :, 0],
                                   session.landmarks[:, :, 1]], axis=1)
            for j in range(flat.shape[1]):
                W = _window_view(flat[:, j], spans_kept)
                cols.append(_stat_block(W, man.landmark_stats, q=man.quantile_q,
                                        lag=man.autocorr_lag))
        if man.include_geometry:
            geo = landmark_geometry(session.landmarks)
            geo_means = np.stack([geo[s:e].mean(axis=0) for s, e in spans_kept])
            cols.append(geo_means)

        blocks.append(np.concatenate(cols, axis=1))
        labels.extend(bin_label(session.stress[s:e]) for s, e in spans_kept)
        subjects.extend([session.subject_id] * len(spans_kept))

    if not blocks:
        raise EmptyMatrixError("all windows dropped; nothing to assemble")
    raw = np.concatenate(blocks, axis=0)
    names = man.feature_names
    if raw.shape[1] != len(names):
        raise RuntimeError(f"assembled {raw.shape[1]} columns, manifest says {len(names)}")
    subjects = np.asarray(subjects)
    values = _zscore_per_subject(raw, subjects)
    return FeatureMatrix(values, raw, np.asarray(labels, dtype=int), subjects,
                         names, dropped)


def _zscore_per_subject(raw: np.ndarray, subjects: np.ndarray) -> np.ndarray:
    values = np.empty_like(raw)
    for subject in np.unique(subjects):
        rows = subjects == subject
        block = raw[rows]
        mu = block.mean(axis=0)
        sd = block.std(axis=0)
        safe = np.where(sd < 1e-12, 1.0, sd)
        z = (block - mu) / safe
        z[:, sd < 1e-12] = 0.0
        values[rows] = z
    return values


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_matrix_csv(matrix: FeatureMatrix, path: str, raw: bool = False) -> None:
    data = matrix.raw_values if raw else matrix.values
    frame = pd.DataFrame(data, columns=matrix.feature_names)
    frame.insert(0, "label", matrix.labels)
    frame.insert(0, "subject_id", matrix.subject_ids)
    frame.to_csv(path, index=False)


def read_matrix_csv(path: str, raw_path: str | None = None) -> FeatureMatrix:
    frame = pd.read_csv(path)
    names = [c for c in frame.columns if c not in ("subject_id", "label")]
    values = frame[names].to_numpy(dtype=float)
    raw = values
    if raw_path:
        raw = pd.read_csv(raw_path)[names].to_numpy(dtype=float)
    return FeatureMatrix(values, raw, frame["label"].to_numpy(dtype=int),
                         frame["subject_id"].to_numpy(dtype=str), names)


def write_manifest_json(man: FeatureManifest, path: str) -> None:
    payload = {
        "name": man.name,
        "bio_series": list(man.bio_series),
        "bio_stats": list(man.bio_stats),
        "include_scr": man.include_scr,
        "landmark_stats": list(man.landmark_stats),
        "include_geometry": man.include_geometry,
        "quantile_q": man.quantile_q,
        "autocorr_lag": man.autocorr_lag,
        "columns": man.feature_names,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
