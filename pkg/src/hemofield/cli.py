"""Command-line entry point: ``hemofield <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or data, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .autodiff.alloc import tune_allocator

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
logger = logging.getLogger("hemofield")


def _mask_of(columns):
    from .features import FEATURE_COLUMNS
    unknown = [c for c in columns if c not in FEATURE_COLUMNS]
    if unknown:
        raise ValueError(f"non-canonical feature columns {unknown}")
    return sum(1 << FEATURE_COLUMNS.index(c) for c in columns)


def cmd_generate(args):
    from .case import generate_dataset
    path = generate_dataset(args.out, args.n, args.seed, args.rings_per_mm, args.segments, args.jobs)
    print(path)


def cmd_featurize(args):
    from .case import featurize_dataset
    from .features import parse_mask
    mask = None if args.mask is None else parse_mask(args.mask)
    featurize_dataset(args.dataset, args.eig, mask, args.jobs)


def cmd_train(args):
    from .bench.train import TrainRun, load_split, train
    from .case import read_manifest
    from .models import ModelConfig
    manifest = read_manifest(args.dataset)
    data = {s: load_split(args.dataset, s, manifest) for s in ("train", "val")}
    mask = args.mask
    if mask is None:
        feats = data["train"][0].features if data["train"] else None
        mask = _mask_of(feats.columns) if feats is not None else "all"
    run = TrainRun(ModelConfig(args.model, args.size), args.target, args.epochs, args.batch, args.lr, args.gamma,
                   args.seed, mask, args.patience)
    _, _, run = train(run, args.dataset, args.out, manifest, data)
    last = run.history[-1] if run.history else {}
    print(json.dumps({"epochs": len(run.history), "train_loss": last.get("train_loss"),
                      "val_loss": last.get("val_loss"), "out": str(args.out)}))


def cmd_infer(args):
    from .bench.train import load_trained
    from .case import load_case
    trained = load_trained(args.model_dir, args.checkpoint)
    case = load_case(args.case)
    out_field = trained.field(case)
    vffr = trained.vffr(case)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(f"vertex_id,{trained.target},vffr\n")
        for i, (a, b) in enumerate(zip(out_field, vffr)):
            fh.write(f"{i},{a:.9g},{b:.9g}\n")


def cmd_eval(args):
    from .bench.evaluate import json_safe, evaluate, write_report
    from .bench.train import load_split, load_trained, resolve_checkpoint
    trained = load_trained(args.model_dir, args.checkpoint)
    cases = load_split(args.dataset, args.split)
    if not cases:
        raise ValueError(f"split {args.split!r} is empty")
    rows, records, summary = evaluate(trained.vffr, cases, args.jobs)
    run_file = resolve_checkpoint(args.model_dir, args.checkpoint).parent / "run.json"
    summary["seconds_per_epoch"] = None
    if run_file.exists():
        info = json.loads(run_file.read_text())
        summary["seconds_per_epoch"] = info.get("seconds_per_epoch")
        summary["epochs_completed"] = len(info.get("history", []))
    summary.update(model=trained.meta["model"]["kind"], size=trained.meta["model"]["size"],
                   target=trained.target, split=args.split, checkpoint=trained.meta.get("checkpoint"))
    write_report(args.report, rows, records, summary)
    keys = ("n_cases", "per_point_diff_mean", "approx_disparity_mean", "spearman_rho")
    print(json.dumps(json_safe({k: summary[k] for k in keys})))


def cmd_ablate(args):
    from .bench.ablation import load_config, run_ablation
    cfg = load_config(args.config)
    rows = run_ablation(args.dataset, cfg["masks"], size=cfg.get("size", "S"),
                        target=cfg.get("target", "pressure_drop"), epochs=cfg.get("epochs", 200),
                        batch_size=cfg.get("batch_size", 2), lr=cfg.get("lr", 3e-4), gamma=cfg.get("gamma", 0.987),
                        seed=cfg.get("seed", 0), split=cfg.get("split", "test"), out=args.report)
    for r in rows:
        print(f"{r['name']}\t{r['mask']}\t{r['mean_abs_diff']:.6g}")


def build_parser():
    p = argparse.ArgumentParser(prog="hemofield", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize bifurcation cases with oracle fields")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--rings-per-mm", type=float, default=2.0)
    g.add_argument("--segments", type=int, default=24)
    g.add_argument("--jobs", type=int, default=None)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("featurize", help="compute per-vertex features for every case")
    f.add_argument("--dataset", required=True)
    f.add_argument("--eig", type=int, default=64)
    f.add_argument("--mask", default=None, help="hex column mask or ablation name")
    f.add_argument("--jobs", type=int, default=None)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", required=True, choices=["mlp", "pointnetpp", "diffusionnet", "deltaconv", "transformer"])
    t.add_argument("--size", default="S", choices=["S", "L"])
    t.add_argument("--target", required=True, choices=["p", "dp", "vffr"])
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch", type=int, default=2)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--gamma", type=float, default=0.987)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--mask", default=None, help="input columns; defaults to those stored in features.csv")
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict target and vFFR for one case")
    i.add_argument("--model-dir", required=True)
    i.add_argument("--case", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--checkpoint", default="best", choices=["best", "final"])
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="evaluate a trained model on one split")
    e.add_argument("--model-dir", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--report", required=True)
    e.add_argument("--checkpoint", default="best", choices=["best", "final"])
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate PointNet++ over feature masks")
    a.add_argument("--dataset", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--report", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    tune_allocator()
    try:
        args.func(args)
    except FloatingPointError as err:
        print(f"hemofield: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"hemofield: {err}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
