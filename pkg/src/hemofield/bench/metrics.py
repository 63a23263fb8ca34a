"""Field and lesion-level agreement statistics."""

import numpy as np

FFR_THRESHOLD = 0.8
LOA_Z = 1.96


def _pair(pred, gt, min_n=1):
    pred = np.asarray(pred, dtype=float).ravel()
    gt = np.asarray(gt, dtype=float).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gt.size} references")
    if pred.size < min_n:
        raise ValueError(f"need at least {min_n} values, got {pred.size}")
    return pred, gt


def per_point_diff(pred, gt):
    """Mean signed difference ``mean(pred - gt)``."""
    pred, gt = _pair(pred, gt)
    return float(np.mean(pred - gt))


def approx_disparity(pred, gt):
    """``sum((pred - gt)^2) / sum(pred^2)``; the denominator uses the predictions."""
    pred, gt = _pair(pred, gt)
    denom = float(np.dot(pred, pred))
    if denom == 0.0:
        raise ValueError("approximation disparity undefined for an all-zero prediction")
    d = pred - gt
    return float(np.dot(d, d)) / denom


def average_ranks(x):
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float).ravel()
    order = np.argsort(x, kind="stable")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.concatenate([[True], xs[1:] != xs[:-1]]))
    ends = np.concatenate([starts[1:], [x.size]])
    mean_rank = 0.5 * (starts + ends - 1) + 1.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def pearson(x, y):
    x, y = _pair(x, y, min_n=2)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0.0:
        return float("nan")
    return float(np.dot(xc, yc) / denom)


def spearman_rho(x, y):
    """Pearson correlation of average ranks; NaN when either side has no rank variance."""
    x, y = _pair(x, y, min_n=3)
    return pearson(average_ranks(x), average_ranks(y))


def bland_altman(pred, gt):
    """Bias and 95% limits of agreement of ``pred - gt`` (sample SD)."""
    pred, gt = _pair(pred, gt, min_n=2)
    d = pred - gt
    bias = float(d.mean())
    sd = float(np.std(d, ddof=1))
    return {"bias": bias, "sd": sd, "loa": (bias - LOA_Z * sd, bias + LOA_Z * sd)}


def confusion_at_threshold(pred, gt, threshold=FFR_THRESHOLD):
    """Precision, recall and accuracy with ``value < threshold`` as the positive class.

    Precision (recall) is NaN when there are no predicted (actual) positives.
    """
    pred, gt = _pair(pred, gt)
    p = pred < threshold
    a = gt < threshold
    tp = int(np.sum(p & a))
    fp = int(np.sum(p & ~a))
    fn = int(np.sum(~p & a))
    tn = int(np.sum(~p & ~a))
    precision = tp / (tp + fp) if tp + fp else float("nan")
    recall = tp / (tp + fn) if tp + fn else float("nan")
    return {"precision": precision, "recall": recall, "accuracy": (tp + tn) / pred.size,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn}


def mean_sd(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
