import math

import numpy as np
import pytest

from stressfuse import featex, sigcore
from stressfuse.errors import DegenerateFrameError, EmptyMatrixError, LabelError, LengthError


def oracle_stats(x, q=0.75):
    """Straightforward scalar reimplementation of the 15 window statistics.

    Deliberately written loop/stdlib style, independent of the vectorized
    production path.
    """
    n = len(x)
    mean = sum(x) / n
    m2 = sum((v - mean) ** 2 for v in x) / n
    energy = sum(v * v for v in x)
    rms = math.sqrt(energy / n)
    # one-sided periodogram via explicit DFT
    half = n // 2 + 1
    power = []
    for k in range(half):
        re = sum(x[t] * math.cos(-2 * math.pi * k * t / n) for t in range(n))
        im = sum(x[t] * math.sin(-2 * math.pi * k * t / n) for t in range(n))
        power.append(re * re + im * im)
    total = sum(power)
    if total == 0 or m2 <= (1e-13 ** 2) * max(1.0, rms ** 2):
        fent = 0.0
    else:
        probs = [p / total for p in power]
        fent = -sum(p * math.log(p) for p in probs if p > 0)
    if m2 <= (1e-13 ** 2) * max(1.0, rms ** 2):
        skew = autocorr = kurt = std = variation = 0.0
        var = 0.0
    else:
        m3 = sum((v - mean) ** 3 for v in x) / n
        m4 = sum((v - mean) ** 4 for v in x) / n
        skew = (m3 / m2 ** 1.5) * math.sqrt(n * (n - 1)) / (n - 2) if n > 2 else 0.0
        autocorr = sum((x[t] - mean) * (x[t + 1] - mean) for t in range(n - 1)) / (n * m2)
        kurt = m4 / m2 ** 2 - 3.0
        var = m2
        std = math.sqrt(m2 * n / (n - 1))
        variation = std / mean if mean != 0 else 0.0
    above = sum(1 for v in x if v > mean)
    below = sum(1 for v in x if v < mean)
    quant = float(np.quantile(np.asarray(x), q))
    return [energy, fent, skew, autocorr, quant, kurt, float(above), float(below),
            variation, rms, var, mean, std, max(x), min(x)]


class TestWindows:
    def test_count_formula(self):
        spans = featex.windows(100, featex.WindowSpec())
        assert spans == [(0, 40), (20, 60), (40, 80), (60, 100)]

    def test_exact_fit_gives_one_window(self):
        assert featex.windows(40, featex.WindowSpec()) == [(0, 40)]

    def test_short_session_gives_none_with_warning(self):
        with pytest.warns(UserWarning):
            assert featex.windows(39, featex.WindowSpec()) == []


class TestStatFeatures:
    def test_hand_computed_values(self):
        out = featex.stat_features(np.array([1.0, 2.0, 3.0]))
        stats = dict(zip(featex.STAT_NAMES, out))
        assert stats["energy"] == 14.0
        assert stats["avg"] == 2.0
        assert stats["max"] == 3.0
        assert stats["min"] == 1.0
        assert stats["skew"] == 0.0
        assert stats["above_mean"] == 1.0
        assert stats["below_mean"] == 1.0

    def test_constant_window_degenerates_cleanly(self):
        out = featex.stat_features(np.full(40, 3.25))
        stats = dict(zip(featex.STAT_NAMES, out))
        assert stats["variance"] == 0.0
        assert stats["fourier_entropy"] == 0.0
        assert stats["autocorr"] == 0.0
        assert stats["RMS"] == 3.25
        out_neg = featex.stat_features(np.full(40, -3.25))
        assert dict(zip(featex.STAT_NAMES, out_neg))["RMS"] == 3.25

    def test_matches_oracle_on_random_windows(self):
        rng = np.random.default_rng(123)
        for _ in range(50):
            x = rng.normal(loc=rng.uniform(-3, 3), scale=rng.uniform(0.1, 4),
                           size=40)
            got = featex.stat_features(x)
            want = oracle_stats(list(x))
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)

    def test_too_short_rejected(self):
        with pytest.raises(LengthError):
            featex.stat_features(np.array([1.0]))


class TestLandmarkDerived:
    def _frame(self):
        return sigcore._base_face()

    def test_returns_thirty_named_features(self):
        out = featex.landmark_derived(self._frame())
        assert out.shape == (30,)
        assert len(featex.GEOMETRY_NAMES) == 30

    def test_symmetric_face_has_zero_mouth_asymmetry(self):
        out = featex.landmark_derived(self._frame())
        idx = featex.GEOMETRY_NAMES.index("mouth_corner_asym")
        assert out[idx] == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance(self):
        frame = self._frame()
        np.testing.assert_allclose(featex.landmark_derived(frame * 2.0),
                                   featex.landmark_derived(frame), atol=1e-12)

    def test_known_geometry_matches_hand_computation(self):
        frame = self._frame()
        out = dict(zip(featex.GEOMETRY_NAMES, featex.landmark_derived(frame)))
        eye_r = frame[36:42].mean(axis=0)
        eye_l = frame[42:48].mean(axis=0)
        iod = float(np.hypot(*(eye_r - eye_l)))
        mouth_w = float(np.hypot(*(frame[48] - frame[54])))
        assert out["mouth_width"] == pytest.approx(mouth_w / iod, rel=1e-12)
        jaw = float(np.hypot(*(frame[0] - frame[16])))
        assert out["jaw_width"] == pytest.approx(jaw / iod, rel=1e-12)
        ear_r = (np.hypot(*(frame[37] - frame[41])) + np.hypot(*(frame[38] - frame[40]))) \
            / (2 * np.hypot(*(frame[36] - frame[39])))
        assert out["ear_right"] == pytest.approx(ear_r, rel=1e-12)

    def test_coincident_eyes_rejected(self):
        frame = self._frame()
        frame[42:48] = frame[36:42]
        with pytest.raises(DegenerateFrameError):
            featex.landmark_derived(frame)


class TestBinLabel:
    def test_paper_bins(self):
        assert featex.bin_label(np.full(40, 3.0)) == 0
        assert featex.bin_label(np.full(40, 14.0)) == 2
        assert featex.bin_label(np.full(40, 7.0)) == 1

    def test_round_half_up_at_boundary(self):
        assert featex.bin_label(np.full(40, 6.5)) == 1
        assert featex.bin_label(np.full(40, 6.49)) == 0
        assert featex.bin_label(np.full(40, 13.5)) == 2

    def test_out_of_range_rejected(self):
        with pytest.raises(LabelError):
            featex.bin_label(np.full(4, 19.5))


class TestManifests:
    def test_paper_column_counts(self):
        assert featex.manifest("bio-paper").n_features == 175
        assert featex.manifest("lnd-paper").n_features == 1904
        assert featex.manifest("fused-paper").n_features == 2079

    def test_names_unique_and_ordered(self):
        man = featex.manifest("fused-paper")
        names = man.feature_names
        assert len(names) == len(set(names))
        assert names[0] == "energy_EDA"
        assert "scr_onset_count" in names

    def test_modality_split_covers_everything(self):
        man = featex.manifest("fused-paper")
        bio = man.bio_columns()
        lnd = man.landmark_columns()
        assert len(bio) == 175 and len(lnd) == 1904
        assert sorted(bio + lnd) == list(range(2079))


class TestBuildMatrix:
    @pytest.fixture(scope="class")
    def sessions(self):
        spec = sigcore.SynthSpec(n_subjects=2, session_seconds=480, seed=21)
        return sigcore.synth_dataset(spec)

    def test_fused_preset_has_2079_columns(self, sessions):
        m = featex.build_matrix(sessions, featex.manifest("fused-paper"))
        assert m.n_features == 2079
        assert m.n_rows == 2 * ((480 - 40) // 20 + 1)

    def test_single_nan_drops_exactly_one_window(self, sessions):
        import copy
        mutated = copy.deepcopy(sessions)
        mutated[0].channels["HR"][5] = np.nan  # covered only by window [0, 40)
        full = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        m = featex.build_matrix(mutated, featex.manifest("bio-paper"))
        assert m.n_rows == full.n_rows - 1
        assert m.dropped_windows == 1

    def test_zscore_moments_per_subject(self, sessions):
        m = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        for subject in np.unique(m.subject_ids):
            block = m.values[m.subject_ids == subject]
            raw_block = m.raw_values[m.subject_ids == subject]
            varying = raw_block.std(axis=0) > 1e-12
            np.testing.assert_allclose(block[:, varying].mean(axis=0), 0.0, atol=1e-9)
            np.testing.assert_allclose(block[:, varying].std(axis=0), 1.0, atol=1e-9)

    def test_column_order_deterministic(self, sessions):
        a = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        b = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        np.testing.assert_array_equal(a.values, b.values)
        assert a.feature_names == b.feature_names

    def test_mean_shift_invariance_of_zscore(self, sessions):
        import copy
        shifted = copy.deepcopy(sessions)
        shifted[0].channels["HR"] = shifted[0].channels["HR"] + 25.0
        man = featex.manifest("bio-paper")
        a = featex.build_matrix(sessions, man)
        b = featex.build_matrix(shifted, man)
        col = man.feature_names.index("avg_HR")
        rows = a.subject_ids == sessions[0].subject_id
        np.testing.assert_allclose(a.values[rows, col], b.values[rows, col], atol=1e-6)

    def test_class_means_move_in_generator_direction(self, sessions):
        man = featex.manifest("bio-paper")
        m = featex.build_matrix(sessions, man)
        col = man.feature_names.index("avg_HR")
        mean0 = m.raw_values[m.labels == 0, col].mean()
        mean2 = m.raw_values[m.labels == 2, col].mean()
        assert mean2 > mean0  # generator encodes higher HR under stress

    def test_all_nan_eda_raises_empty_matrix(self, sessions):
        import copy
        broken = copy.deepcopy(sessions)
        for s in broken:
            s.channels["EDA"][:] = np.nan
        with pytest.raises(EmptyMatrixError):
            featex.build_matrix(broken, featex.manifest("bio-paper"))

    def test_ablation_drops_component_columns(self, sessions):
        m = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        ablated = m.drop_eda_components()
        assert ablated.n_features == 175 - 2 * 15 - 10
        assert not any("EDA_Tonic" in n or "EDA_Phasic" in n or n.startswith("scr_")
                       for n in ablated.feature_names)

    def test_csv_roundtrip(self, sessions, tmp_path):
        m = featex.build_matrix(sessions, featex.manifest("bio-paper"))
        p = tmp_path / "m.csv"
        praw = tmp_path / "m_raw.csv"
        featex.write_matrix_csv(m, str(p))
        featex.write_matrix_csv(m, str(praw), raw=True)
        back = featex.read_matrix_csv(str(p), str(praw))
        np.testing.assert_allclose(back.values, m.values, atol=1e-12)
        np.testing.assert_allclose(back.raw_values, m.raw_values, atol=1e-12)
        np.testing.assert_array_equal(back.labels, m.labels)
        assert back.feature_names == m.feature_names
