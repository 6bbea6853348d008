import numpy as np
import pytest

from stressfuse import evalharness as ev, featex, fusion, sigcore
from stressfuse.errors import FoldError, MetricError, SpecError
from stressfuse.nnengine import TrainConfig


def oracle_metrics_from_pairs(cm):
    """Recount metrics by materializing (true, pred) pairs from the counts."""
    pairs = [(t, p) for t in range(3) for p in range(3)
             for _ in range(int(cm[t, p]))]
    total = len(pairs)
    acc = sum(1 for t, p in pairs if t == p) / total
    per = []
    for c in range(3):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        tn = total - tp - fp - fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        fpr = fp / (fp + tn) if fp + tn else 0.0
        fnr = fn / (fn + tp) if fn + tp else 0.0
        per.append((precision, recall, f1, fpr, fnr))
    return acc, per


class TestLosoFolds:
    def _matrix(self, subjects):
        n = len(subjects)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(n, 4))
        return featex.FeatureMatrix(X, X.copy(), rng.integers(0, 3, size=n),
                                    np.asarray(subjects), [f"f{i}" for i in range(4)])

    def test_three_subjects_three_folds(self):
        m = self._matrix(["a"] * 4 + ["b"] * 3 + ["c"] * 5)
        folds = ev.loso_folds(m)
        assert len(folds) == 3

    def test_no_test_subject_in_train(self):
        m = self._matrix(["a"] * 4 + ["b"] * 3 + ["c"] * 5)
        for train_idx, test_idx, subject in ev.loso_folds(m):
            assert subject not in set(m.subject_ids[train_idx])
            assert set(m.subject_ids[test_idx]) == {subject}

    def test_test_sets_partition_rows(self):
        m = self._matrix(["a"] * 4 + ["b"] * 3 + ["c"] * 5)
        folds = ev.loso_folds(m)
        all_test = np.concatenate([test for _, test, _ in folds])
        assert sorted(all_test.tolist()) == list(range(m.n_rows))

    def test_single_subject_rejected(self):
        with pytest.raises(FoldError):
            ev.loso_folds(self._matrix(["a"] * 6))


class TestMetrics:
    def test_binary_style_hand_computation(self):
        # TP=5, FP=1, FN=2 for class 0 in a 3-class matrix
        cm = np.array([[5, 1, 1], [1, 0, 0], [0, 0, 0]])
        m = ev.metrics(cm)
        assert m["per_class"][0]["precision"] == pytest.approx(5 / 6, abs=1e-4)
        assert m["per_class"][0]["recall"] == pytest.approx(5 / 7, abs=1e-4)
        assert m["per_class"][0]["f1"] == pytest.approx(0.7692, abs=1e-4)

    def test_diagonal_matrix_is_perfect(self):
        m = ev.metrics(np.diag([4, 5, 6]))
        assert m["accuracy"] == 1.0
        assert all(c["f1"] == 1.0 for c in m["per_class"])

    def test_empty_matrix_rejected(self):
        with pytest.raises(MetricError):
            ev.metrics(np.zeros((3, 3)))

    def test_random_matrices_match_pair_recount(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            cm = rng.integers(0, 20, size=(3, 3))
            if cm.sum() == 0:
                continue
            m = ev.metrics(cm)
            rates = ev.fp_fn_rates(cm)
            acc, per = oracle_metrics_from_pairs(cm)
            assert m["accuracy"] == pytest.approx(acc, abs=1e-12)
            for c in range(3):
                p, r, f1, fpr, fnr = per[c]
                assert m["per_class"][c]["precision"] == pytest.approx(p, abs=1e-12)
                assert m["per_class"][c]["recall"] == pytest.approx(r, abs=1e-12)
                assert m["per_class"][c]["f1"] == pytest.approx(f1, abs=1e-12)
                assert rates["fp_rate"][c] == pytest.approx(fpr, abs=1e-12)
                assert rates["fn_rate"][c] == pytest.approx(fnr, abs=1e-12)

    def test_macro_f1_between_min_and_max_class_f1(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            cm = rng.integers(0, 15, size=(3, 3))
            if cm.sum() == 0:
                continue
            m = ev.metrics(cm)
            f1s = [c["f1"] for c in m["per_class"]]
            assert min(f1s) - 1e-12 <= m["macro_f1"] <= max(f1s) + 1e-12


class TestFpFnRates:
    def test_perfect_classifier_all_zero(self):
        rates = ev.fp_fn_rates(np.diag([3, 3, 3]))
        assert rates["fp_rate"] == [0.0, 0.0, 0.0]
        assert rates["fn_rate"] == [0.0, 0.0, 0.0]

    def test_always_class0_on_balanced_data(self):
        cm = np.array([[4, 0, 0], [4, 0, 0], [4, 0, 0]])
        rates = ev.fp_fn_rates(cm)
        assert rates["fn_rate"][1] == 1.0 and rates["fn_rate"][2] == 1.0
        assert rates["fp_rate"][0] == 1.0


class TestRunExperiment:
    @pytest.fixture(scope="class")
    def config(self):
        return ev.ExperimentConfig(
            synth=sigcore.SynthSpec(n_subjects=2, session_seconds=480, seed=31),
            preset="bio-paper",
            selection_method="pearson",
            k_bio=10, k_lnd=10, k_fused=10,
            fusion=fusion.FusionSpec(family="multivariate", kind="fcdnn",
                                     modality="BIO"),
            train=TrainConfig(epochs=5, lr=0.01, seed=0),
            seed=5,
        )

    def test_two_subjects_two_folds(self, config):
        report = ev.run_experiment(config)
        assert len(report.folds) == 2
        assert report.n_failed == 0

    def test_pooled_confusion_is_fold_sum(self, config):
        report = ev.run_experiment(config)
        summed = np.sum([np.asarray(f.confusion) for f in report.folds], axis=0)
        np.testing.assert_array_equal(np.asarray(report.pooled_confusion), summed)

    def test_determinism_of_metric_outputs(self, config):
        import json
        a = ev.run_experiment(config)
        b = ev.run_experiment(config)
        assert json.dumps(a.metrics_dict(), sort_keys=True) == \
            json.dumps(b.metrics_dict(), sort_keys=True)

    def test_failed_fold_is_recorded_not_raised(self, config):
        # k larger than available features after selection keeps working, so
        # break the fold differently: an unknown family inside fusion spec
        # cannot be constructed, so use a config whose training data is too
        # degenerate by zeroing epochs via monkeypatched spec is overkill;
        # instead point at a corpus dir that vanishes mid-run
        bad = ev.ExperimentConfig(
            synth=sigcore.SynthSpec(n_subjects=2, session_seconds=480, seed=31),
            preset="bio-paper", selection_method="rf",
            k_bio=10, k_lnd=10, k_fused=10,
            fusion=fusion.FusionSpec(family="multivariate", kind="cnn2d",
                                     modality="BIO", grid=(3, 3)),  # 9 != 10
            train=TrainConfig(epochs=2, seed=0), seed=5)
        report = ev.run_experiment(bad)
        assert report.n_failed == len(report.folds)
        assert all(f.error for f in report.folds)

    def test_parallel_folds_match_serial(self, config):
        import dataclasses
        parallel = dataclasses.replace(config, parallelism=2)
        a = ev.run_experiment(config)
        b = ev.run_experiment(parallel)
        assert a.metrics_dict() == b.metrics_dict()

    def test_csv_and_svg_outputs(self, config):
        report = ev.run_experiment(config)
        csv = report.to_csv()
        assert csv.splitlines()[0].startswith("subject_id,")
        assert len(csv.splitlines()) == 1 + len(report.folds)
        svg = ev.render_fp_fn_svg(report.pooled_fp_fn)
        assert svg.startswith("<svg") and svg.endswith("</svg>")

    def test_config_requires_exactly_one_source(self):
        with pytest.raises(SpecError):
            ev.ExperimentConfig()
        with pytest.raises(SpecError):
            ev.ExperimentConfig(synth=sigcore.SynthSpec(), corpus_dir="x")


class TestLeakageGuard:
    def test_guard_rejects_contaminated_fold(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(10, 3))
        m = featex.FeatureMatrix(X, X.copy(), rng.integers(0, 3, size=10),
                                 np.asarray(["a"] * 5 + ["b"] * 5),
                                 ["f0", "f1", "f2"])
        with pytest.raises(FoldError):
            ev._assert_no_leakage(m, np.arange(10), np.arange(5, 10), "b")
