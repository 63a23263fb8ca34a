"""Feature-mask ablations on a fixed PointNet++ backend."""

import csv
import json
from pathlib import Path

from ..case import read_manifest
from ..features import ABLATIONS, FEATURE_GROUPS, mask_columns, mask_from_groups, parse_mask
from ..models import ModelConfig
from .evaluate import json_safe, evaluate
from .train import TrainedModel, TrainRun, load_split, train

BACKEND = "pointnetpp"
TABLE_FIELDS = ["name", "mask", "n_columns", *FEATURE_GROUPS, "mean_abs_diff", "per_point_diff_mean",
                "abs_per_point_diff_mean", "per_point_diff_sd", "approx_disparity_mean", "spearman_rho", "best_val_loss"]


def default_masks():
    """The seven named ablations plus the full feature set."""
    return {name: parse_mask(name) for name in ABLATIONS}


def load_config(path):
    """Ablation config JSON: ``{"masks": {name: mask | [groups]}, "target", "epochs", ...}``.

    A missing ``masks`` entry means the eight default ablations.
    """
    cfg = json.loads(Path(path).read_text())
    masks = cfg.get("masks") or default_masks()
    if isinstance(masks, list):
        masks = {m: m for m in masks}
    cfg["masks"] = {name: _as_mask(m) for name, m in masks.items()}
    return cfg


def _as_mask(m):
    mask = mask_from_groups(m) if isinstance(m, (list, tuple)) else parse_mask(m)
    mask_columns(mask)
    return mask


def _groups_in(mask):
    return {g: int(mask & mask_from_groups([g]) != 0) for g in FEATURE_GROUPS}


def run_ablation(manifest_path, masks, size="S", target="pressure_drop", epochs=200, batch_size=2, lr=3e-4,
                 gamma=0.987, seed=0, split="test", out=None, data=None):
    """Train and evaluate one PointNet++ per mask with a shared seed and split.

    Returns the table rows in mask order; the error column is the mean
    absolute per-point vFFR difference over the evaluated split.
    """
    manifest = read_manifest(manifest_path)
    if data is None:
        data = {s: load_split(manifest_path, s, manifest) for s in ("train", "val", split)}
    rows = []
    for name, mask in masks.items():
        mask = _as_mask(mask)
        run = TrainRun(ModelConfig(BACKEND, size), target, epochs, batch_size, lr, gamma, seed, mask)
        run_dir = None if out is None else Path(out) / "runs" / name
        model, standardizer, run = train(run, manifest_path, run_dir, manifest, data)
        trained = TrainedModel(model.eval(), standardizer, run.target, run.columns, {})
        _, _, summary = evaluate(trained.vffr, data[split])
        row = {"name": name, "mask": f"{mask:#09x}", "n_columns": len(mask_columns(mask)), **_groups_in(mask)}
        for k in ("mean_abs_diff", "per_point_diff_mean", "abs_per_point_diff_mean", "per_point_diff_sd",
                  "approx_disparity_mean", "spearman_rho"):
            row[k] = summary[k]
        row["best_val_loss"] = min((h["val_loss"] for h in run.history), default=float("nan"))
        rows.append(row)
    if out is not None:
        write_table(out, rows)
    return rows


def write_table(out, rows):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, TABLE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (out / "summary.json").write_text(json.dumps(json_safe({"rows": rows}), indent=1, sort_keys=True) + "\n")
    return out
