"""Held-out evaluation and report files (metrics.csv, lesions.csv, summary.json)."""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as M
from .lesions import lesion_min_vffr

CASE_FIELDS = ["case_id", "n_vertices", "per_point_diff", "mean_abs_diff", "approx_disparity",
               "min_vffr_pred", "min_vffr_gt"]
LESION_FIELDS = ["case_id", "lesion_id", "branch", "severity", "pred_min", "gt_min", "n_vertices", "overshoot"]


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def json_safe(obj):
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    return _finite_or_none(obj)


def evaluate_case(predict, case):
    """Metrics and lesion records of one case; ``predict`` maps a case to vFFR."""
    pred = predict(case)
    gt = np.asarray(case.fields["ffr"], dtype=float)
    row = {
        "case_id": case.case_id,
        "n_vertices": int(gt.size),
        "per_point_diff": M.per_point_diff(pred, gt),
        "mean_abs_diff": float(np.mean(np.abs(pred - gt))),
        "approx_disparity": M.approx_disparity(pred, gt),
        "min_vffr_pred": float(pred.min()),
        "min_vffr_gt": float(gt.min()),
    }
    return row, lesion_min_vffr(case, pred, gt)


def lesion_statistics(records):
    pred = np.array([r.pred_min for r in records])
    gt = np.array([r.gt_min for r in records])
    out = {"n_lesions": len(records), "n_overshoot": int(sum(r.overshoot for r in records))}
    out["spearman_rho"] = M.spearman_rho(pred, gt) if len(records) >= 3 else float("nan")
    if len(records) >= 2:
        ba = M.bland_altman(pred, gt)
        out.update(bias=ba["bias"], sd=ba["sd"], loa=list(ba["loa"]))
    else:
        out.update(bias=float("nan"), sd=float("nan"), loa=[float("nan"), float("nan")])
    if records:
        out.update(M.confusion_at_threshold(pred, gt, M.FFR_THRESHOLD))
    out["threshold"] = M.FFR_THRESHOLD
    return out


def evaluate(predict, cases, n_jobs=1):
    """Evaluate every case; rows come back sorted by case id whatever the scheduling."""
    cases = sorted(cases, key=lambda c: c.case_id)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda c: evaluate_case(predict, c), cases))
    else:
        results = [evaluate_case(predict, c) for c in cases]
    rows = [r for r, _ in results]
    records = [rec for _, recs in results for rec in recs]
    diff_mean, diff_sd = M.mean_sd([r["per_point_diff"] for r in rows])
    disp_mean, disp_sd = M.mean_sd([r["approx_disparity"] for r in rows])
    summary = {
        "n_cases": len(rows),
        "per_point_diff_mean": diff_mean,
        "per_point_diff_sd": diff_sd,
        "abs_per_point_diff_mean": M.mean_sd([abs(r["per_point_diff"]) for r in rows])[0],
        "mean_abs_diff": M.mean_sd([r["mean_abs_diff"] for r in rows])[0],
        "approx_disparity_mean": disp_mean,
        "approx_disparity_sd": disp_sd,
    }
    summary.update(lesion_statistics(records))
    return rows, records, summary


def write_report(report_dir, rows, records, summary):
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, CASE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    with open(report_dir / "lesions.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, LESION_FIELDS)
        w.writeheader()
        for rec in records:
            d = rec.to_dict()
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in d.items()})
    (report_dir / "summary.json").write_text(json.dumps(json_safe(summary), indent=1, sort_keys=True) + "\n")
    return report_dir
