"""Training loop, checkpoints and trained-model loading."""

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Adam, NumericError, Tape, Tensor
from ..autodiff import tensor as T
from ..autodiff.alloc import tune_allocator
from ..autodiff.checkpoint import load_weights, read_manifest as read_checkpoint, save_checkpoint
from ..case import load_case, manifest_cases, read_manifest
from ..features import FEATURE_COLUMNS, FULL_MASK, Standardizer, compute_features, fit_standardizer, mask_columns, parse_mask
from ..models import CaseGeometry, ModelConfig, build_model
from .targets import canonical_target, reconstruct_vffr, target_values

logger = logging.getLogger(__name__)

PATIENCE = 50


class TrainingAborted(NumericError):
    """A non-finite value appeared during training; carries the epoch and batch."""

    def __init__(self, epoch, batch, cause):
        super().__init__(f"non-finite value at epoch {epoch}, batch {batch}: {cause}")
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainRun:
    """Everything that determines one training run, plus its loss history."""

    model: ModelConfig
    target: str = "pressure_drop"
    epochs: int = 200
    batch_size: int = 2
    lr: float = 3e-4
    gamma: float = 0.987
    seed: int = 0
    mask: int = FULL_MASK
    patience: int = PATIENCE
    splits: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.target = canonical_target(self.target)
        self.mask = parse_mask(self.mask)
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epoch count must be non-negative")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.model.in_channels = len(mask_columns(self.mask))

    @property
    def columns(self):
        return [FEATURE_COLUMNS[i] for i in mask_columns(self.mask)]

    def to_dict(self):
        return {
            "model": self.model.to_dict(), "target": self.target, "epochs": self.epochs,
            "batch_size": self.batch_size, "lr": self.lr, "gamma": self.gamma, "seed": self.seed,
            "mask": f"{self.mask:#09x}", "patience": self.patience, "splits": dict(self.splits),
            "history": list(self.history),
        }


# ---------------------------------------------------------------- data


def feature_input(case, columns):
    """The requested feature columns of a case, computing features if none are stored."""
    feats = case.features
    if feats is None:
        feats, _ = compute_features(case.mesh, case.tree, case.q_in, case.p_ao)
        case.features = feats
    index = {c: i for i, c in enumerate(feats.columns)}
    missing = [c for c in columns if c not in index]
    if missing:
        raise ValueError(f"{case.case_id}: features.csv lacks columns {missing}")
    return feats.values[:, [index[c] for c in columns]]


@dataclass
class Sample:
    """One case readied for a model: inputs, standardized target and side inputs."""

    case: object
    x: np.ndarray
    z: np.ndarray
    prepared: dict
    _single: dict = None

    def single(self, model):
        if self._single is None:
            self._single = model.collate([self.prepared])
        return self._single


def make_sample(model, case, columns, standardizer=None, target=None):
    x = feature_input(case, columns)
    z = None
    if standardizer is not None:
        z = standardizer.apply(target_values(case, target))
    prepared = model.prepare(CaseGeometry.from_mesh(case.mesh))
    return Sample(case, x, z, prepared)


def load_split(manifest_path, split, manifest=None):
    return [load_case(p) for p, _ in manifest_cases(manifest_path, manifest, split)]


def collate(model, samples):
    if len(samples) == 1:
        s = samples[0]
        return Tensor(s.x), s.single(model), s.z[:, None]
    x = np.concatenate([s.x for s in samples])
    z = np.concatenate([s.z for s in samples])[:, None]
    return Tensor(x), model.collate([s.prepared for s in samples]), z


def validation_loss(model, samples):
    """Mean over cases of the per-case MSE on the standardized target."""
    if not samples:
        return float("nan")
    model.eval()
    losses = []
    for s in samples:
        pred = model.forward(Tensor(s.x), s.single(model)).data[:, 0]
        losses.append(float(np.mean((pred - s.z) ** 2)))
    model.train()
    return float(np.mean(losses))


# ---------------------------------------------------------------- training


def _snapshot(model):
    return [(n, a.copy()) for n, a in model.state_arrays()]


def _restore(model, snap):
    live = dict(model.state_arrays())
    for n, a in snap:
        live[n][...] = a


def checkpoint_meta(run, standardizer, epoch, kind):
    return {
        "model": run.model.to_dict(), "target": run.target, "standardizer": standardizer.to_dict(),
        "feature_columns": run.columns, "mask": f"{run.mask:#09x}", "epoch": epoch, "seed": run.seed,
        "checkpoint": kind,
    }


def train(run, manifest_path, out=None, manifest=None, data=None):
    """Fit ``run.model`` on the train split of a dataset.

    Returns ``(model, standardizer, run)``; ``run.history`` gets one entry per
    completed epoch. With ``out`` set, ``best/`` and ``final/`` checkpoints,
    ``run.json`` and ``history.csv`` are written there.

    ``data`` may hold pre-loaded ``{"train": [...], "val": [...]}`` case lists.
    """
    tune_allocator()
    manifest = manifest or read_manifest(manifest_path)
    if data is None:
        data = {s: load_split(manifest_path, s, manifest) for s in ("train", "val")}
    train_cases, val_cases = data["train"], data.get("val", [])
    if not train_cases:
        raise ValueError("dataset has no training cases")
    run.splits = {c["path"]: c["split"] for c in manifest["cases"]}
    run.history = []
    standardizer = fit_standardizer([target_values(c, run.target) for c in train_cases])

    model = build_model(run.model, rng_seed=run.seed)
    columns = run.columns
    train_s = [make_sample(model, c, columns, standardizer, run.target) for c in train_cases]
    val_s = [make_sample(model, c, columns, standardizer, run.target) for c in val_cases]
    opt = Adam(model.parameters(), lr=run.lr, gamma=run.gamma)
    rng = np.random.default_rng([run.seed, 0x5EED])

    best, best_epoch, best_snap = np.inf, -1, None
    bs = run.batch_size
    for epoch in range(run.epochs):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(len(train_s))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), bs)):
            x, side, z = collate(model, [train_s[i] for i in order[start:start + bs]])
            try:
                with Tape() as tape:
                    loss = T.mse(model(x, side), z)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"loss is {value}")
                opt.zero_grad()
                tape.backward(loss)
                opt.step()
            except FloatingPointError as err:
                raise TrainingAborted(epoch, b, err) from err
            batch_losses.append(value)
        train_loss = float(np.mean(batch_losses))
        val_loss = validation_loss(model, val_s)
        if val_s and not np.isfinite(val_loss):
            raise TrainingAborted(epoch, "validation", f"loss is {val_loss}")
        opt.decay()
        seconds = time.perf_counter() - t0
        run.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                            "lr": opt.lr, "seconds": seconds})
        logger.info("epoch %d train %.6g val %.6g (%.1fs)", epoch, train_loss, val_loss, seconds)
        score = val_loss if val_s else train_loss
        if score < best:
            best, best_epoch, best_snap = score, epoch, _snapshot(model)
        elif epoch - best_epoch >= run.patience:
            logger.info("no validation improvement for %d epochs; stopping", run.patience)
            break

    if out is not None:
        write_run(out, run, model, standardizer, best_snap, best_epoch)
    return model, standardizer, run


def write_run(out, run, model, standardizer, best_snap=None, best_epoch=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    final_epoch = len(run.history) - 1
    save_checkpoint(out / "final", model, checkpoint_meta(run, standardizer, final_epoch, "final"))
    if best_snap is not None:
        final = _snapshot(model)
        _restore(model, best_snap)
        save_checkpoint(out / "best", model, checkpoint_meta(run, standardizer, best_epoch, "best"))
        _restore(model, final)
    else:
        save_checkpoint(out / "best", model, checkpoint_meta(run, standardizer, final_epoch, "best"))
    info = run.to_dict()
    info["standardizer"] = standardizer.to_dict()
    info["best_epoch"] = best_epoch
    secs = [h["seconds"] for h in run.history]
    info["seconds_per_epoch"] = float(np.mean(secs)) if secs else None
    (out / "run.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for h in run.history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["lr"]), f"{h['seconds']:.3f}"])


# ---------------------------------------------------------------- inference


@dataclass
class TrainedModel:
    model: object
    standardizer: Standardizer
    target: str
    columns: list
    meta: dict

    def output(self, case):
        """Raw (standardized) network output for one case."""
        s = make_sample(self.model, case, self.columns)
        return self.model.predict(Tensor(s.x), s.single(self.model))

    def field(self, case):
        """Destandardized prediction in target units."""
        return self.standardizer.invert(self.output(case))

    def vffr(self, case):
        return reconstruct_vffr(self.output(case), self.standardizer, self.target, case.p_in)


def resolve_checkpoint(model_dir, which="best"):
    """Accept a checkpoint directory or a training output holding ``best/`` and ``final/``."""
    model_dir = Path(model_dir)
    if (model_dir / "model.json").exists():
        return model_dir
    if (model_dir / which / "model.json").exists():
        return model_dir / which
    raise FileNotFoundError(f"no checkpoint found in {model_dir}")


def load_trained(model_dir, which="best"):
    directory = resolve_checkpoint(model_dir, which)
    meta = read_checkpoint(directory)
    model = build_model(ModelConfig.from_dict(meta["model"]), rng_seed=0)
    load_weights(directory, model)
    model.eval()
    standardizer = Standardizer.from_dict(meta.get("standardizer"))
    return TrainedModel(model, standardizer, canonical_target(meta["target"]), list(meta["feature_columns"]), meta)


def predict_vffr(checkpoint, case, target=None):
    """Per-vertex vFFR of ``case`` from a checkpoint directory or a loaded model."""
    trained = checkpoint if isinstance(checkpoint, TrainedModel) else load_trained(checkpoint)
    if target is not None and canonical_target(target) != trained.target:
        raise ValueError(f"checkpoint was trained on {trained.target!r}, not {target!r}")
    return trained.vffr(case)
