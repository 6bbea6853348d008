"""Feature selection: filter, wrapper, and embedded methods.

Six methods are exposed behind one :func:`select` entry point: Pearson and
Spearman correlation filters, a variance threshold (scored on the raw,
pre-normalization values), L1-regularized regression on the ordinal label,
random-forest impurity importance, and recursive feature elimination over a
ridge regressor. All fits see only the matrix they are given; callers pass
training folds.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, LengthError, NumericError
from .featex import FeatureMatrix

LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
RIDGE_L2 = 1e-3


@dataclass
class SelectionReport:
    """Scores and the chosen top-k columns of one selection fit."""

    method: str
    scores: np.ndarray          # per input feature
    ranked_names: list[str]     # all features, best first
    k: int
    selected: list[int]         # column indices, best first

    def top(self, n: int = 10) -> list[tuple[str, float]]:
        order = _rank_order(self.scores)[:n]
        return [(self.ranked_names[i], float(self.scores[order[i]])) for i in range(min(n, len(order)))]

    def to_json(self) -> str:
        order = _rank_order(self.scores)
        payload = {
            "method": self.method,
            "k": self.k,
            "ranked": [{"name": self.ranked_names[r], "score": float(self.scores[j])}
                       for r, j in enumerate(order)],
        }
        return json.dumps(payload, indent=2)


def _rank_order(scores: np.ndarray) -> np.ndarray:
    # descending score, ties broken by ascending column index
    return np.lexsort((np.arange(len(scores)), -scores))


# ---------------------------------------------------------------------------
# Filter methods
# ---------------------------------------------------------------------------

def corr_scores(X: np.ndarray, y: np.ndarray, kind: str = "pearson") -> np.ndarray:
    """|correlation| of each column with y; Spearman ranks first."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 2:
        raise LengthError("need at least 2 rows for a correlation")
    if np.unique(y).size < 2:
        raise DataError("labels are constant; correlations undefined")
    if kind == "spearman":
        X = np.apply_along_axis(rankdata, 0, X)
        y = rankdata(y)
    elif kind != "pearson":
        raise ValueError(f"unknown correlation kind {kind!r}")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    x_norm = np.sqrt((Xc ** 2).sum(axis=0))
    y_norm = np.sqrt((yc ** 2).sum())
    denom = x_norm * y_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (Xc.T @ yc) / denom
    r[denom == 0] = 0.0  # constant feature
    return np.abs(r)


def variance_scores(X_raw: np.ndarray) -> np.ndarray:
    """Population variance per column of the raw (pre-normalization) matrix."""
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.shape[0] < 2:
        raise LengthError("need at least 2 rows for a variance")
    return X_raw.var(axis=0)


# ---------------------------------------------------------------------------
# L1-regularized regression (cyclic coordinate descent)
# ---------------------------------------------------------------------------

def _soft_threshold(z: np.ndarray | float, t: float):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_fit(X: np.ndarray, y: np.ndarray, lam: float,
              beta0: np.ndarray | None = None,
              max_sweeps: int = LASSO_MAX_SWEEPS, tol: float = LASSO_TOL):
    """Minimize (1/2n)||y - Xb - b0||^2 + lam*||b||_1 by coordinate descent.

    The intercept is unpenalized. Cyclic soft-threshold sweeps run over a
    working set; after each convergence a vectorized stationarity scan over
    all coordinates pulls in violators, so the returned solution satisfies
    the optimality conditions on the full feature set. Convergence per
    working set: max coefficient change below ``tol`` or ``max_sweeps``
    passes. Returns (beta, intercept).
    """
    X = np.asfortranarray(X, dtype=float)  # contiguous columns for the sweeps
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("lasso requires finite inputs")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n, p = X.shape
    col_ss = (X ** 2).sum(axis=0) / n
    beta = np.zeros(p) if beta0 is None else beta0.astype(float).copy()
    intercept = float(y.mean() - X.mean(axis=0) @ beta)
    resid = y - X @ beta - intercept

    def sweep(idx) -> float:
        nonlocal intercept, resid
        max_delta = 0.0
        for j in idx:
            if col_ss[j] == 0.0:
                continue
            old = beta[j]
            rho = (X[:, j] @ resid) / n + col_ss[j] * old
            new = _soft_threshold(rho, lam) / col_ss[j]
            if new != old:
                resid += X[:, j] * (old - new)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        shift = resid.mean()
        if shift != 0.0:
            intercept += shift
            resid -= shift
        return max_delta

    working = beta != 0.0
    for _ in range(50):
        idx = np.nonzero(working)[0]
        for _ in range(max_sweeps):
            if idx.size == 0 or sweep(idx) < tol:
                break
        grad = X.T @ resid / n
        violators = (np.abs(grad) > lam + 0.1 * tol) & ~working
        if not violators.any():
            break
        working |= violators
    return beta, intercept


def lasso_lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest lambda at which every coefficient is zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / X.shape[0])


def lasso_kkt_slack(X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                    intercept: float, lam: float) -> float:
    """Max violation of the stationarity conditions at (beta, intercept)."""
    n = X.shape[0]
    resid = y - X @ beta - intercept
    grad = X.T @ resid / n
    active = beta != 0
    slack_zero = np.abs(grad[~active]) - lam
    slack_active = np.abs(grad[active] - lam * np.sign(beta[active]))
    parts = [np.max(slack_zero, initial=-np.inf), np.max(slack_active, initial=-np.inf)]
    return float(max(parts))


def _lasso_path_to_k(X: np.ndarray, y: np.ndarray, k: int):
    """Walk lambda down from lambda_max until >= k coefficients are active,
    bisect the bracketing interval, then return the final fit.

    The active count saturates near min(n_rows, n_features); if it stalls
    below k the best (densest) fit seen is returned instead of chasing an
    unreachable support size at degenerate lambdas.
    """
    lam_hi = lasso_lambda_max(X, y)
    if lam_hi == 0.0:
        return lasso_fit(X, y, 0.0)
    path_sweeps = 300
    beta, intercept = np.zeros(X.shape[1]), float(np.mean(y))
    best, best_nnz, stall = (beta, intercept), 0, 0
    lam_lo = None
    lam = lam_hi
    for _ in range(40):
        lam *= 0.75
        beta, intercept = lasso_fit(X, y, lam, beta0=beta, max_sweeps=path_sweeps)
        nnz = int(np.count_nonzero(beta))
        if nnz >= k:
            lam_lo = lam
            break
        if nnz > best_nnz:
            best, best_nnz, stall = (beta.copy(), intercept), nnz, 0
        else:
            stall += 1
            if stall >= 5:
                break
        lam_hi = lam
    if lam_lo is None:
        return best
    for _ in range(12):
        mid = 0.5 * (lam_lo + lam_hi)
        b_mid, i_mid = lasso_fit(X, y, mid, beta0=beta, max_sweeps=path_sweeps)
        if np.count_nonzero(b_mid) >= k:
            lam_lo, beta, intercept = mid, b_mid, i_mid
        else:
            lam_hi = mid
    return lasso_fit(X, y, lam_lo, beta0=beta)


# ---------------------------------------------------------------------------
# Random-forest impurity importance
# ---------------------------------------------------------------------------

N_CLASSES = 3


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float((p * p).sum())


def _best_split(X, y, rows, feat_idx, min_leaf):
    """Best (feature, threshold, gain) over a random feature subset."""
    parent_counts = np.bincount(y[rows], minlength=N_CLASSES)
    parent_imp = _gini(parent_counts)
    n = rows.size
    best = (None, None, 0.0)
    for f in feat_idx:
        xv = X[rows, f]
        order = np.argsort(xv, kind="stable")
        xs, ys = xv[order], y[rows][order]
        ones = np.zeros((n, N_CLASSES))
        ones[np.arange(n), ys] = 1.0
        left_counts = np.cumsum(ones, axis=0)
        cut_ok = xs[:-1] < xs[1:]  # only between distinct values
        sizes_left = np.arange(1, n)
        valid = cut_ok & (sizes_left >= min_leaf) & ((n - sizes_left) >= min_leaf)
        if not valid.any():
            continue
        lc = left_counts[:-1][valid]
        rc = parent_counts - lc
        nl = sizes_left[valid][:, None]
        nr = n - nl
        gl = 1.0 - ((lc / nl) ** 2).sum(axis=1)
        gr = 1.0 - ((rc / nr) ** 2).sum(axis=1)
        child = (nl[:, 0] * gl + nr[:, 0] * gr) / n
        gains = parent_imp - child
        i = int(np.argmax(gains))
        if gains[i] > best[2] + 1e-15:
            pos = np.nonzero(valid)[0][i]
            threshold = 0.5 * (xs[pos] + xs[pos + 1])
            best = (f, float(threshold), float(gains[i]))
    return best


def _grow_tree(X, y, rows, depth, max_depth, min_leaf, m_features, rng, importances):
    counts = np.bincount(y[rows], minlength=N_CLASSES)
    if depth >= max_depth or rows.size < 2 * min_leaf or _gini(counts) == 0.0:
        return
    feat_idx = rng.choice(X.shape[1], size=m_features, replace=False)
    f, threshold, gain = _best_split(X, y, rows, feat_idx, min_leaf)
    if f is None:
        return
    importances[f] += gain * rows.size
    left = rows[X[rows, f] <= threshold]
    right = rows[X[rows, f] > threshold]
    _grow_tree(X, y, left, depth + 1, max_depth, min_leaf, m_features, rng, importances)
    _grow_tree(X, y, right, depth + 1, max_depth, min_leaf, m_features, rng, importances)


def rf_importance(X: np.ndarray, y: np.ndarray, n_trees: int = 100,
                  max_depth: int = 8, min_leaf: int = 5,
                  features_per_split: int | None = None,
                  seed: int = 0) -> np.ndarray:
    """Total Gini impurity decrease per feature over a bagged forest,
    normalized to sum to 1 (uniform when no split ever helps)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, p = X.shape
    if n < 10:
        raise DataError(f"need >= 10 rows to fit a forest, got {n}")
    if n < min_leaf:
        raise DataError("fewer rows than min_leaf")
    rng = np.random.default_rng(seed)
    m_features = features_per_split or max(1, int(round(np.sqrt(p))))
    m_features = min(m_features, p)
    importances = np.zeros(p)
    for _ in range(n_trees):
        rows = rng.integers(0, n, size=n)  # bootstrap
        _grow_tree(X, y, rows, 0, max_depth, min_leaf, m_features, rng, importances)
    total = importances.sum()
    if total == 0.0:
        return np.full(p, 1.0 / p)
    return importances / total


# ---------------------------------------------------------------------------
# Recursive feature elimination over ridge least squares
# ---------------------------------------------------------------------------

def _ridge_coefs(X: np.ndarray, y: np.ndarray, l2: float = RIDGE_L2) -> np.ndarray:
    n, p = X.shape
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    if p <= n:
        gram = Xc.T @ Xc + l2 * np.eye(p)
        return np.linalg.solve(gram, Xc.T @ yc)
    # dual form keeps the solve at n x n when p is large
    kern = Xc @ Xc.T + l2 * np.eye(n)
    return Xc.T @ np.linalg.solve(kern, yc)


def rfe(X: np.ndarray, y: np.ndarray, k: int, step: int = 1,
        feature_names: list[str] | None = None) -> SelectionReport:
    """Drop the ``step`` smallest-|coefficient| features per ridge refit
    until ``k`` remain; rank is the elimination order reversed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    names = feature_names or [f"f{i}" for i in range(p)]
    if k > p:
        warnings.warn(f"k={k} clamped to {p} features")
        k = p
    alive = list(range(p))
    elimination_rank = np.zeros(p)  # higher = kept longer
    rank_counter = 0
    while len(alive) > k:
        coefs = _ridge_coefs(X[:, alive], y)
        order = np.lexsort((alive, np.abs(coefs)))  # weakest first, index tie-break
        drop_n = min(step, len(alive) - k)
        for pos in order[:drop_n]:
            elimination_rank[alive[pos]] = rank_counter
            rank_counter += 1
        doomed = {alive[pos] for pos in order[:drop_n]}
        alive = [j for j in alive if j not in doomed]
    final_coefs = _ridge_coefs(X[:, alive], y) if alive else np.empty(0)
    # survivors rank above every eliminated feature, ordered by |coef|
    scores = elimination_rank.copy()
    base = rank_counter
    surv_order = np.lexsort((alive, np.abs(final_coefs)))
    for offset, pos in enumerate(surv_order):
        scores[alive[pos]] = base + offset
    order = _rank_order(scores)
    selected = [int(j) for j in order[:k]]
    return SelectionReport("rfe", scores, [names[j] for j in order], k, selected)


# ---------------------------------------------------------------------------
# Unified entry point
# ---------------------------------------------------------------------------

METHODS = ("pearson", "spearman", "variance", "lasso", "rf", "rfe")


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (X - mu) / sd


def select(matrix: FeatureMatrix, method: str, k: int,
           seed: int = 0, rfe_step: int | None = None):
    """Reduce ``matrix`` to its top-k columns under ``method``.

    Returns (reduced matrix, SelectionReport). Columns of the reduced matrix
    are in rank order (best first). Fits use only the rows of the given
    matrix, so callers hand in training folds.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    p = matrix.n_features
    if k > p:
        warnings.warn(f"k={k} exceeds {p} available features; clamping")
        k = p
    y = matrix.labels.astype(float)

    if method in ("pearson", "spearman"):
        scores = corr_scores(matrix.values, y, kind=method)
    elif method == "variance":
        scores = variance_scores(matrix.raw_values)
    elif method == "rf":
        scores = rf_importance(matrix.values, matrix.labels, seed=seed)
    elif method == "rfe":
        step = rfe_step if rfe_step is not None else (max(1, (p - k) // 50) if p > 1000 else 1)
        report = rfe(matrix.values, y, k, step=step, feature_names=list(matrix.feature_names))
        return matrix.select_columns(report.selected), report
    else:  # lasso on the ordinal label over standardized columns
        beta, _ = _lasso_path_to_k(_standardize(matrix.values), y, k)
        scores = np.abs(beta)

    order = _rank_order(scores)
    selected = [int(j) for j in order[:k]]
    report = SelectionReport(method, scores,
                             [matrix.feature_names[j] for j in order], k, selected)
    return matrix.select_columns(selected), report
