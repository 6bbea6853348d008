"""Leave-one-subject-out evaluation, metrics, and experiment orchestration.

Each fold holds out every window of one subject. Feature selection and any
other fit on data happens inside the fold on the training rows only; a
leakage guard asserts that before anything trains. Metrics are one-vs-rest
per class with macro averages, reported both pooled over folds and as the
mean of per-fold values (the two common conventions).
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import time
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from . import featex, fusion, nnengine as nn, select as fsel, sigcore
from .errors import FoldError, MetricError, SpecError
from .featex import FeatureMatrix, WindowSpec
from .fusion import FusionSpec
from .nnengine import TrainConfig
from .sigcore import SynthSpec

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

def loso_folds(matrix: FeatureMatrix) -> list[tuple[np.ndarray, np.ndarray, str]]:
    """(train row indices, test row indices, held-out subject) per subject."""
    subjects = np.unique(matrix.subject_ids)
    if subjects.size < 2:
        raise FoldError(f"LOSO needs >= 2 subjects, got {subjects.size}")
    folds = []
    all_rows = np.arange(matrix.n_rows)
    for subject in subjects:
        test = matrix.subject_ids == subject
        folds.append((all_rows[~test], all_rows[test], str(subject)))
    return folds


def _assert_no_leakage(matrix: FeatureMatrix, train_idx: np.ndarray,
                       test_idx: np.ndarray, subject: str) -> None:
    train_subjects = set(matrix.subject_ids[train_idx])
    if subject in train_subjects:
        raise FoldError(f"leakage: held-out subject {subject} present in training rows")
    if set(matrix.subject_ids[test_idx]) != {subject}:
        raise FoldError("test rows must all belong to the held-out subject")
    if np.intersect1d(train_idx, test_idx).size:
        raise FoldError("train and test rows overlap")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    """Counts with rows = true label, columns = predicted label."""
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)):
        cm[t, p] += 1
    return cm


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics(cm: np.ndarray) -> dict:
    """Accuracy plus one-vs-rest precision/recall/F1 per class and macro."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total == 0:
        raise MetricError("empty confusion matrix")
    per_class = []
    for c in range(cm.shape[0]):
        tp = float(cm[c, c])
        fp = float(cm[:, c].sum() - tp)
        fn = float(cm[c, :].sum() - tp)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2.0 * precision * recall, precision + recall)
        per_class.append({"precision": precision, "recall": recall, "f1": f1})
    return {
        "accuracy": float(np.trace(cm)) / total,
        "per_class": per_class,
        "macro_precision": float(np.mean([m["precision"] for m in per_class])),
        "macro_recall": float(np.mean([m["recall"] for m in per_class])),
        "macro_f1": float(np.mean([m["f1"] for m in per_class])),
    }


def fp_fn_rates(cm: np.ndarray) -> dict:
    """Per-class false-positive and false-negative rates."""
    cm = np.asarray(cm)
    total = float(cm.sum())
    out = {"fp_rate": [], "fn_rate": []}
    for c in range(cm.shape[0]):
        tp = float(cm[c, c])
        fp = float(cm[:, c].sum() - tp)
        fn = float(cm[c, :].sum() - tp)
        tn = total - tp - fp - fn
        out["fp_rate"].append(_safe_div(fp, fp + tn))
        out["fn_rate"].append(_safe_div(fn, fn + tp))
    return out


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one evaluation run depends on; hashable for provenance."""

    synth: SynthSpec | None = None
    corpus_dir: str | None = None
    window: WindowSpec = field(default_factory=WindowSpec)
    preset: str = "fused-paper"
    selection_method: str = "lasso"
    k_bio: int = 30
    k_lnd: int = 100
    k_fused: int = 100
    fusion: FusionSpec = field(default_factory=lambda: FusionSpec(family="early"))
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    parallelism: int = 1
    drop_eda_components: bool = False

    def __post_init__(self):
        if (self.synth is None) == (self.corpus_dir is None):
            raise SpecError("configure exactly one of synth spec or corpus_dir")
        if self.selection_method not in fsel.METHODS:
            raise SpecError(f"selection_method must be one of {fsel.METHODS}")


def config_digest(config: ExperimentConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _fold_seed(base: int, fold_idx: int, slot: int) -> int:
    ss = np.random.SeedSequence(entropy=base, spawn_key=(fold_idx, slot))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Fold execution
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    subject_id: str
    confusion: list[list[int]]
    metrics: dict
    fp_fn: dict
    n_train: int
    n_test: int
    param_count: int
    train_time_s: float
    test_time_s: float
    failed: bool = False
    error: str | None = None


def _select_modality(train: FeatureMatrix, test: FeatureMatrix, cols: list[int],
                     method: str, k: int, seed: int):
    sub_train = train.select_columns(cols)
    sub_test = test.select_columns(cols)
    reduced_train, report = fsel.select(sub_train, method, k, seed=seed)
    reduced_test = sub_test.select_columns(report.selected)
    return reduced_train, reduced_test, report


def _train_single(spec: nn.ModelSpec, X_train, y_train, config: ExperimentConfig,
                  fold_idx: int, slot: int):
    cfg = TrainConfig(
        epochs=config.train.epochs, batch_size=config.train.batch_size,
        lr=config.train.lr, beta1=config.train.beta1, beta2=config.train.beta2,
        eps=config.train.eps, seed=_fold_seed(config.seed, fold_idx, slot + 100),
        patience=config.train.patience)
    return nn.train(spec, X_train, y_train, cfg)


def _run_fold(matrix: FeatureMatrix, fold_idx: int, train_idx: np.ndarray,
              test_idx: np.ndarray, subject: str,
              config: ExperimentConfig) -> FoldResult:
    _assert_no_leakage(matrix, train_idx, test_idx, subject)
    train_mask = np.zeros(matrix.n_rows, dtype=bool)
    train_mask[train_idx] = True
    train = matrix.select_rows(train_mask)
    test = matrix.select_rows(~train_mask)
    names = matrix.feature_names
    method = config.selection_method
    fspec = config.fusion
    sel_seed = _fold_seed(config.seed, fold_idx, 0)
    t0 = time.monotonic()

    if fspec.family == "multivariate":
        cols = featex.bio_columns(names) if fspec.modality == "BIO" \
            else featex.landmark_columns(names)
        k = config.k_bio if fspec.modality == "BIO" else config.k_lnd
        tr, te, _ = _select_modality(train, test, cols, method, k, sel_seed)
        spec = fusion.build_multivariate(fspec.kind, fspec.modality, tr.n_features,
                                         seed=_fold_seed(config.seed, fold_idx, 1),
                                         grid=fspec.grid)
        trained = _train_single(spec, fusion.to_model_input(tr.values, fspec.kind,
                                                            fspec.grid),
                                tr.labels, config, fold_idx, 1)
        train_time = time.monotonic() - t0
        t1 = time.monotonic()
        preds = trained.predict(fusion.to_model_input(te.values, fspec.kind, fspec.grid))
        test_time = time.monotonic() - t1
        n_params = nn.param_count(spec)

    elif fspec.family == "early":
        tr, te, _ = _select_modality(train, test, list(range(len(names))), method,
                                     config.k_fused, sel_seed)
        spec = fusion.build_early(fspec.kind, tr.n_features,
                                  seed=_fold_seed(config.seed, fold_idx, 1),
                                  grid=fspec.grid)
        trained = _train_single(spec, fusion.to_model_input(tr.values, fspec.kind,
                                                            fspec.grid),
                                tr.labels, config, fold_idx, 1)
        train_time = time.monotonic() - t0
        t1 = time.monotonic()
        preds = trained.predict(fusion.to_model_input(te.values, fspec.kind, fspec.grid))
        test_time = time.monotonic() - t1
        n_params = nn.param_count(spec)

    elif fspec.family in ("late_decision", "late_concat"):
        bio_tr, bio_te, _ = _select_modality(train, test, featex.bio_columns(names),
                                             method, config.k_bio, sel_seed)
        lnd_tr, lnd_te, _ = _select_modality(train, test, featex.landmark_columns(names),
                                             method, config.k_lnd,
                                             _fold_seed(config.seed, fold_idx, 2))
        xb_tr = fusion.to_model_input(bio_tr.values, fspec.bio_kind)
        xl_tr = fusion.to_model_input(lnd_tr.values, fspec.lnd_kind)
        xb_te = fusion.to_model_input(bio_te.values, fspec.bio_kind)
        xl_te = fusion.to_model_input(lnd_te.values, fspec.lnd_kind)
        if fspec.family == "late_decision":
            spec_b = fusion.build_multivariate(fspec.bio_kind, "BIO", bio_tr.n_features,
                                               seed=_fold_seed(config.seed, fold_idx, 1))
            spec_l = fusion.build_multivariate(fspec.lnd_kind, "LND", lnd_tr.n_features,
                                               seed=_fold_seed(config.seed, fold_idx, 3))
            model_b = _train_single(spec_b, xb_tr, bio_tr.labels, config, fold_idx, 1)
            model_l = _train_single(spec_l, xl_tr, lnd_tr.labels, config, fold_idx, 3)
            train_time = time.monotonic() - t0
            t1 = time.monotonic()
            _, preds = fusion.predict_late_decision(model_b.model, model_l.model,
                                                    xb_te, xl_te)
            test_time = time.monotonic() - t1
            n_params = nn.param_count(spec_b) + nn.param_count(spec_l)
        else:
            spec = fusion.build_late_concat(
                fusion.make_trunk(fspec.bio_kind, bio_tr.n_features),
                fusion.make_trunk(fspec.lnd_kind, lnd_tr.n_features),
                seed=_fold_seed(config.seed, fold_idx, 1))
            trained = _train_single(spec, [xb_tr, xl_tr], bio_tr.labels,
                                    config, fold_idx, 1)
            train_time = time.monotonic() - t0
            t1 = time.monotonic()
            preds = trained.predict([xb_te, xl_te])
            test_time = time.monotonic() - t1
            n_params = nn.param_count(spec)
    else:
        raise SpecError(f"unknown fusion family {fspec.family!r}")

    cm = confusion_matrix(test.labels, preds)
    return FoldResult(
        subject_id=subject,
        confusion=cm.tolist(),
        metrics=metrics(cm),
        fp_fn=fp_fn_rates(cm),
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
        param_count=int(n_params),
        train_time_s=train_time,
        test_time_s=test_time,
    )


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    schema_version: int
    config_digest: str
    folds: list[FoldResult]
    pooled_confusion: list[list[int]]
    pooled_metrics: dict
    averaged_metrics: dict
    pooled_fp_fn: dict
    n_failed: int

    @property
    def ok(self) -> bool:
        return self.n_failed == 0

    def metrics_dict(self) -> dict:
        """Timing-free view: identical bytes across reruns of one config."""
        return {
            "schema_version": self.schema_version,
            "config_digest": self.config_digest,
            "pooled_confusion": self.pooled_confusion,
            "pooled_metrics": self.pooled_metrics,
            "averaged_metrics": self.averaged_metrics,
            "pooled_fp_fn": self.pooled_fp_fn,
            "folds": [{
                "subject_id": f.subject_id, "confusion": f.confusion,
                "metrics": f.metrics, "fp_fn": f.fp_fn,
                "n_train": f.n_train, "n_test": f.n_test,
                "param_count": f.param_count, "failed": f.failed,
                "error": f.error,
            } for f in self.folds],
        }

    def full_dict(self) -> dict:
        d = self.metrics_dict()
        d["cost"] = {
            "per_fold": [{"subject_id": f.subject_id, "param_count": f.param_count,
                          "train_time_s": f.train_time_s, "test_time_s": f.test_time_s}
                         for f in self.folds],
            "total_train_time_s": sum(f.train_time_s for f in self.folds),
            "total_test_time_s": sum(f.test_time_s for f in self.folds),
        }
        return d

    def to_csv(self) -> str:
        lines = ["subject_id,n_test,accuracy,macro_precision,macro_recall,macro_f1,failed"]
        for f in self.folds:
            if f.failed:
                lines.append(f"{f.subject_id},{f.n_test},,,,,True")
            else:
                m = f.metrics
                lines.append(
                    f"{f.subject_id},{f.n_test},{m['accuracy']:.6f},"
                    f"{m['macro_precision']:.6f},{m['macro_recall']:.6f},"
                    f"{m['macro_f1']:.6f},False")
        return "\n".join(lines) + "\n"


def _aggregate(config: ExperimentConfig, folds: list[FoldResult]) -> EvalReport:
    good = [f for f in folds if not f.failed]
    pooled = np.zeros((3, 3), dtype=int)
    for f in good:
        pooled += np.asarray(f.confusion, dtype=int)
    if good:
        pooled_metrics = metrics(pooled)
        averaged = {
            "accuracy": float(np.mean([f.metrics["accuracy"] for f in good])),
            "macro_precision": float(np.mean([f.metrics["macro_precision"] for f in good])),
            "macro_recall": float(np.mean([f.metrics["macro_recall"] for f in good])),
            "macro_f1": float(np.mean([f.metrics["macro_f1"] for f in good])),
        }
        pooled_rates = fp_fn_rates(pooled)
    else:
        pooled_metrics, averaged, pooled_rates = {}, {}, {}
    return EvalReport(
        schema_version=SCHEMA_VERSION,
        config_digest=config_digest(config),
        folds=folds,
        pooled_confusion=pooled.tolist(),
        pooled_metrics=pooled_metrics,
        averaged_metrics=averaged,
        pooled_fp_fn=pooled_rates,
        n_failed=len(folds) - len(good),
    )


def load_sessions(config: ExperimentConfig) -> list[sigcore.AlignedSession]:
    if config.synth is not None:
        return sigcore.synth_dataset(config.synth)
    return sigcore.load_corpus(config.corpus_dir)


def build_config_matrix(config: ExperimentConfig,
                        sessions=None) -> FeatureMatrix:
    sessions = sessions if sessions is not None else load_sessions(config)
    matrix = featex.build_matrix(sessions, featex.manifest(config.preset),
                                 config.window)
    if config.drop_eda_components:
        matrix = matrix.drop_eda_components()
    return matrix


def run_experiment(config: ExperimentConfig, sessions=None,
                   matrix: FeatureMatrix | None = None) -> EvalReport:
    """Full LOSO run: per fold, fit selection on train rows, train the
    configured family, score the held-out subject. Failed folds are recorded
    and do not abort their siblings."""
    if matrix is None:
        matrix = build_config_matrix(config, sessions)
    folds = loso_folds(matrix)

    def run(i_fold):
        i, (train_idx, test_idx, subject) = i_fold
        try:
            return _run_fold(matrix, i, train_idx, test_idx, subject, config)
        except Exception as exc:  # fold failures are data, not crashes
            return FoldResult(
                subject_id=subject, confusion=np.zeros((3, 3), dtype=int).tolist(),
                metrics={}, fp_fn={}, n_train=int(train_idx.size),
                n_test=int(test_idx.size), param_count=0, train_time_s=0.0,
                test_time_s=0.0, failed=True,
                error="".join(traceback.format_exception_only(type(exc), exc)).strip())

    items = list(enumerate(folds))
    if config.parallelism > 1:
        with concurrent.futures.ThreadPoolExecutor(config.parallelism) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    return _aggregate(config, results)


# ---------------------------------------------------------------------------
# Optional SVG rendering of per-class FP/FN rates
# ---------------------------------------------------------------------------

def render_fp_fn_svg(rates: dict, title: str = "Per-class FP / FN rates") -> str:
    """Tiny dependency-free grouped bar chart."""
    classes = len(rates["fp_rate"])
    width, height, margin = 420, 240, 40
    plot_h = height - 2 * margin
    group_w = (width - 2 * margin) / classes
    bars = []
    for c in range(classes):
        for j, (key, color) in enumerate((("fp_rate", "#d62728"), ("fn_rate", "#1f77b4"))):
            value = rates[key][c]
            bar_h = value * plot_h
            x = margin + c * group_w + (j + 0.2) * group_w / 2.6
            y = height - margin - bar_h
            bars.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{group_w / 3:.1f}" '
                f'height="{bar_h:.1f}" fill="{color}"/>'
                f'<text x="{x + group_w / 6:.1f}" y="{y - 4:.1f}" '
                f'font-size="9" text-anchor="middle">{value:.2f}</text>')
        bars.append(
            f'<text x="{margin + (c + 0.5) * group_w:.1f}" y="{height - margin + 16:.1f}" '
            f'font-size="11" text-anchor="middle">class {c}</text>')
    legend = (
        f'<rect x="{width - 150}" y="14" width="10" height="10" fill="#d62728"/>'
        f'<text x="{width - 135}" y="23" font-size="10">FP rate</text>'
        f'<rect x="{width - 80}" y="14" width="10" height="10" fill="#1f77b4"/>'
        f'<text x="{width - 65}" y="23" font-size="10">FN rate</text>')
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<text x="{margin}" y="20" font-size="12">{title}</text>{legend}'
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="#333"/>' + "".join(bars) + "</svg>")
