"""Fidelity, correlation, sparsity and bio-conservation metrics.

Numerical fidelity is measured on the positions where the ground truth is
positive; correlations are aggregated per spot by default. Every metric has
an independent naive-definition twin used by oracle_check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

AGGREGATION_MODES = ("per_spot_mean", "global_flat")

_REPORT_FIELDS = (
    "mae_pos",
    "mse_pos",
    "cosine_mean",
    "pearson_mean",
    "spearman_mean",
    "zero_iou",
    "ari",
    "n_eval_spots",
    "n_eval_genes",
    "aggregation_mode",
)


@dataclass(frozen=True)
class MetricReport:
    mae_pos: float
    mse_pos: float
    cosine_mean: float
    pearson_mean: float
    spearman_mean: float
    zero_iou: float
    ari: float  # nan when labels are unavailable
    n_eval_spots: int
    n_eval_genes: int
    aggregation_mode: str = "per_spot_mean"

    def to_kv_text(self) -> str:
        lines = []
        for name in _REPORT_FIELDS:
            v = getattr(self, name)
            lines.append(f"{name}={v:.9g}" if isinstance(v, float) else f"{name}={v}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header() -> str:
        return ",".join(_REPORT_FIELDS)

    def to_csv_row(self) -> str:
        vals = []
        for name in _REPORT_FIELDS:
            v = getattr(self, name)
            vals.append(f"{v:.9g}" if isinstance(v, float) else str(v))
        return ",".join(vals)

    def numeric_values(self) -> dict:
        return {
            name: getattr(self, name)
            for name in _REPORT_FIELDS
            if isinstance(getattr(self, name), (int, float))
        }


# ---------------------------------------------------------------------------
# fidelity


def masked_fidelity(y_hat: np.ndarray, y_gt: np.ndarray) -> tuple[float, float]:
    """(MAE, MSE) over positions where the ground truth is positive."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    pos = y_gt > 0
    if not pos.any():
        raise DataError("ground truth has no positive entries")
    d = y_hat[pos] - y_gt[pos]
    return float(np.abs(d).mean()), float((d * d).mean())


def cosine_per_spot(y_hat: np.ndarray, y_gt: np.ndarray) -> float:
    """Mean per-spot cosine similarity; degenerate spots score 0."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    nh = np.linalg.norm(y_hat, axis=1)
    ng = np.linalg.norm(y_gt, axis=1)
    dot = (y_hat * y_gt).sum(axis=1)
    denom = nh * ng
    out = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)
    return float(out.mean())


def _rank_average(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg = cum - (counts - 1) / 2.0
    return avg[inv]


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson coefficient; 0 when either side is constant."""
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
    if denom == 0.0:
        return 0.0
    return float((xc * yc).sum()) / denom


def pearson_spearman(
    y_hat: np.ndarray, y_gt: np.ndarray, mode: str = "per_spot_mean"
) -> tuple[float, float]:
    """Correlations between prediction and truth.

    per_spot_mean computes both coefficients per spot and averages,
    skipping spots whose ground-truth row is constant; global_flat
    correlates the flattened matrices.
    """
    if mode not in AGGREGATION_MODES:
        raise DataError(f"unknown aggregation mode {mode!r}")
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    if mode == "global_flat":
        a, b = y_hat.ravel(), y_gt.ravel()
        if np.ptp(b) == 0:
            raise DataError("flattened ground truth is constant")
        return _pearson(a, b), _pearson(_rank_average(a), _rank_average(b))
    pearsons, spearmans = [], []
    for i in range(y_gt.shape[0]):
        if np.ptp(y_gt[i]) == 0:
            continue  # constant ground-truth spot: skipped, not scored
        pearsons.append(_pearson(y_hat[i], y_gt[i]))
        spearmans.append(_pearson(_rank_average(y_hat[i]), _rank_average(y_gt[i])))
    if not pearsons:
        raise DataError("every ground-truth spot is constant")
    return float(np.mean(pearsons)), float(np.mean(spearmans))


def zero_map_iou(y_hat: np.ndarray, y_gt: np.ndarray, tau: float) -> float:
    """IoU of {prediction <= tau} against {truth == 0} as position sets."""
    if tau < 0:
        raise DataError(f"tau must be >= 0, got {tau}")
    y_hat = np.asarray(y_hat)
    y_gt = np.asarray(y_gt)
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    pred_zero = y_hat <= tau
    true_zero = y_gt == 0
    union = int((pred_zero | true_zero).sum())
    if union == 0:
        return 1.0  # both dense everywhere: identical (empty) zero maps
    return float((pred_zero & true_zero).sum()) / union


# ---------------------------------------------------------------------------
# clustering / ARI


def _comb2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement via the contingency-table formula."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("label vectors must be 1-D and equal length")
    n = a.size
    _, ca = np.unique(a, return_inverse=True)
    _, cb = np.unique(b, return_inverse=True)
    ka, kb = ca.max() + 1, cb.max() + 1
    cont = np.zeros((ka, kb))
    np.add.at(cont, (ca, cb), 1.0)
    sum_cells = _comb2(cont).sum()
    sum_rows = _comb2(cont.sum(axis=1)).sum()
    sum_cols = _comb2(cont.sum(axis=0)).sum()
    total = _comb2(np.array([n]))[0]
    expected = sum_rows * sum_cols / total
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 1.0  # both partitions trivial and identical in structure
    return float((sum_cells - expected) / (maximum - expected))


def pca_scores(X: np.ndarray, n_components: int) -> np.ndarray:
    """Scores on the top principal components (deterministic signs)."""
    X = np.asarray(X, dtype=np.float64)
    d = min(n_components, X.shape[0], X.shape[1])
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    # fix sign: largest-magnitude loading positive
    for i in range(Vt.shape[0]):
        j = np.argmax(np.abs(Vt[i]))
        if Vt[i, j] < 0:
            Vt[i] = -Vt[i]
            U[:, i] = -U[:, i]
    return U[:, :d] * S[:d]


def kmeans(X: np.ndarray, k: int, seed: int, restarts: int = 10, max_iter: int = 100) -> np.ndarray:
    """Plain Lloyd k-means with k-means++ seeding; best inertia over restarts."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k > n:
        raise DataError(f"k={k} exceeds {n} points")
    rng = np.random.default_rng(seed)
    best_assign, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeanspp(X, k, rng)
        assign = None
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_assign = d2.argmin(axis=1)
            for c in range(k):
                sel = new_assign == c
                if sel.any():
                    centers[c] = X[sel].mean(axis=0)
                else:  # empty cluster: grab the point farthest from its center
                    far = d2[np.arange(n), new_assign].argmax()
                    centers[c] = X[far]
                    new_assign[far] = c
            if assign is not None and np.array_equal(assign, new_assign):
                break
            assign = new_assign
        inertia = float(((X - centers[assign]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia, best_assign = inertia, assign
    return best_assign


def _kmeanspp(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total == 0:
            centers[c] = X[rng.integers(n)]
        else:
            centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


PCA_COMPONENTS_FOR_ARI = 50


def cluster_ari(y_hat: np.ndarray, labels, k: int, seed: int) -> float:
    """ARI of k-means clusters (on 50 PCs of the prediction) vs labels."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != y_hat.shape[0]:
        raise DataError("labels and predictions disagree on spot count")
    if k > y_hat.shape[0]:
        raise DataError(f"K={k} exceeds {y_hat.shape[0]} spots")
    scores = pca_scores(y_hat, PCA_COMPONENTS_FOR_ARI)
    assign = kmeans(scores, k, seed)
    return adjusted_rand_index(assign, labels)


# ---------------------------------------------------------------------------
# whole-report convenience


def compute_report(
    y_hat: np.ndarray,
    y_gt: np.ndarray,
    labels=None,
    tau: float = 0.0,
    mode: str = "per_spot_mean",
    seed: int = 0,
) -> MetricReport:
    mae, mse = masked_fidelity(y_hat, y_gt)
    cos = cosine_per_spot(y_hat, y_gt)
    pear, spear = pearson_spearman(y_hat, y_gt, mode)
    iou = zero_map_iou(y_hat, y_gt, tau)
    if labels is not None:
        k = len(set(labels))
        ari = cluster_ari(y_hat, labels, k, seed)
    else:
        ari = float("nan")
    return MetricReport(
        mae_pos=mae,
        mse_pos=mse,
        cosine_mean=cos,
        pearson_mean=pear,
        spearman_mean=spear,
        zero_iou=iou,
        ari=ari,
        n_eval_spots=int(y_gt.shape[0]),
        n_eval_genes=int(y_gt.shape[1]),
        aggregation_mode=mode,
    )


# ---------------------------------------------------------------------------
# independent naive-definition oracles (double loops, no shared code above)


def _oracle_masked_fidelity(y_hat, y_gt):
    abs_sum = sq_sum = count = 0
    for i in range(len(y_gt)):
        for j in range(len(y_gt[0])):
            if y_gt[i][j] > 0:
                d = y_hat[i][j] - y_gt[i][j]
                abs_sum += abs(d)
                sq_sum += d * d
                count += 1
    return abs_sum / count, sq_sum / count


def _oracle_cosine(y_hat, y_gt):
    total = 0.0
    for i in range(len(y_gt)):
        dot = na = nb = 0.0
        for j in range(len(y_gt[0])):
            dot += y_hat[i][j] * y_gt[i][j]
            na += y_hat[i][j] ** 2
            nb += y_gt[i][j] ** 2
        total += dot / math.sqrt(na * nb) if na > 0 and nb > 0 else 0.0
    return total / len(y_gt)


def _oracle_pearson_vec(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((x[i] - mx) * (y[i] - my) for i in range(n))
    dx = math.sqrt(sum((v - mx) ** 2 for v in x))
    dy = math.sqrt(sum((v - my) ** 2 for v in y))
    if dx == 0 or dy == 0:
        return 0.0
    return num / (dx * dy)


def _oracle_ranks(x):
    ranks = []
    for v in x:
        smaller = sum(1 for u in x if u < v)
        ties = sum(1 for u in x if u == v)
        ranks.append(smaller + (ties + 1) / 2.0)
    return ranks


def _oracle_pearson_spearman(y_hat, y_gt):
    ps, ss = [], []
    for i in range(len(y_gt)):
        row_gt = list(y_gt[i])
        if max(row_gt) == min(row_gt):
            continue
        row_hat = list(y_hat[i])
        ps.append(_oracle_pearson_vec(row_hat, row_gt))
        ss.append(_oracle_pearson_vec(_oracle_ranks(row_hat), _oracle_ranks(row_gt)))
    return sum(ps) / len(ps), sum(ss) / len(ss)


def _oracle_zero_iou(y_hat, y_gt, tau):
    inter = union = 0
    for i in range(len(y_gt)):
        for j in range(len(y_gt[0])):
            a = y_hat[i][j] <= tau
            b = y_gt[i][j] == 0
            inter += a and b
            union += a or b
    return inter / union if union else 1.0


def _oracle_ari(labels_a, labels_b):
    """Pair-counting route: ARI = 2(ad-bc) / ((a+b)(b+d) + (a+c)(c+d))."""
    n = len(labels_a)
    a = b = c = d = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = labels_a[i] == labels_a[j]
            same_b = labels_b[i] == labels_b[j]
            if same_a and same_b:
                a += 1
            elif same_a:
                b += 1
            elif same_b:
                c += 1
            else:
                d += 1
    denom = (a + b) * (b + d) + (a + c) * (c + d)
    if denom == 0:
        return 1.0
    return 2.0 * (a * d - b * c) / denom


def oracle_check(metric_name: str, trials: int = 100, seed: int = 0, tol: float = 1e-10):
    """Compare one metric against its naive twin on random small instances.

    Returns (passed, max_abs_diff).
    """
    rng = np.random.default_rng(seed)
    max_diff = 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 12))
        g = int(rng.integers(3, 12))
        y_gt = rng.uniform(0, 5, size=(n, g)) * (rng.uniform(size=(n, g)) < 0.6)
        y_hat = rng.uniform(0, 5, size=(n, g)) * (rng.uniform(size=(n, g)) < 0.6)
        if metric_name == "masked_fidelity":
            if not (y_gt > 0).any():
                continue
            got = masked_fidelity(y_hat, y_gt)
            want = _oracle_masked_fidelity(y_hat.tolist(), y_gt.tolist())
            diff = max(abs(got[0] - want[0]), abs(got[1] - want[1]))
        elif metric_name == "cosine":
            got = cosine_per_spot(y_hat, y_gt)
            diff = abs(got - _oracle_cosine(y_hat.tolist(), y_gt.tolist()))
        elif metric_name == "pearson_spearman":
            # integer values force rank ties
            y_hat = np.floor(y_hat)
            y_gt = np.floor(y_gt) + (np.arange(g) == 0)  # keep rows non-constant
            if all(np.ptp(row) == 0 for row in y_gt):
                continue
            got = pearson_spearman(y_hat, y_gt)
            want = _oracle_pearson_spearman(y_hat.tolist(), y_gt.tolist())
            diff = max(abs(got[0] - want[0]), abs(got[1] - want[1]))
        elif metric_name == "zero_iou":
            tau = float(rng.uniform(0, 1))
            got = zero_map_iou(y_hat, y_gt, tau)
            diff = abs(got - _oracle_zero_iou(y_hat.tolist(), y_gt.tolist(), tau))
        elif metric_name == "ari":
            m = int(rng.integers(4, 30))
            la = rng.integers(0, 4, size=m)
            lb = rng.integers(0, 4, size=m)
            got = adjusted_rand_index(la, lb)
            diff = abs(got - _oracle_ari(la.tolist(), lb.tolist()))
        else:
            raise ValueError(f"unknown metric {metric_name!r}")
        max_diff = max(max_diff, diff)
    return max_diff <= tol, max_diff
