"""Case bundles on disk and dataset manifests.

A case directory holds::

    mesh.obj  vertex_tags.csv  centerline.json  case.json  fields.csv  [features.csv]
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anatomy import CenterlineTree, LesionSpec, build_case, sample_spec
from .features import compute_features, read_features, write_features
from .mesh import load_mesh, save_mesh
from .oracle import mmhg_to_pa, read_fields, solve_case, write_fields

ORACLE_TAG = "poiseuille-v1"
SPLITS = ("train", "val", "test")


def _dump_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


@dataclass
class CaseBundle:
    path: Path
    case_id: str
    mesh: object
    tree: CenterlineTree
    q_in: float
    p_ao: float
    lesions: list
    fields: dict
    features: object = None
    meta: dict = field(default_factory=dict)

    @property
    def p_in(self):
        """Inlet pressure in Pa."""
        return float(mmhg_to_pa(self.p_ao))


def write_case(directory, case_id, spec, rings_per_mm=2.0, segments=24):
    """Generate one anatomy, solve the oracle and write the bundle (no features)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh, tree = build_case(spec, rings_per_mm, segments)
    solution = solve_case(mesh, tree, spec.q_in, spec.p_ao)
    save_mesh(mesh, directory / "mesh.obj", directory / "vertex_tags.csv")
    (directory / "centerline.json").write_text(tree.to_json() + "\n")
    meta = {
        "case_id": case_id,
        "seed": spec.rng_seed,
        "q_in_ml_min": spec.q_in,
        "p_ao_mmHg": spec.p_ao,
        "lesions": [les.__dict__ for les in tree.lesions],
        "anatomy": spec.to_dict(),
        "rings_per_mm": rings_per_mm,
        "segments_per_ring": segments,
    }
    (directory / "case.json").write_text(_dump_json(meta))
    write_fields(directory / "fields.csv", solution)
    return directory


def load_case(directory, with_features=True):
    directory = Path(directory)
    meta = json.loads((directory / "case.json").read_text())
    mesh = load_mesh(directory / "mesh.obj", directory / "vertex_tags.csv")
    tree = CenterlineTree.from_json((directory / "centerline.json").read_text())
    fields = read_fields(directory / "fields.csv")
    if len(fields["ffr"]) != mesh.n_vertices:
        raise ValueError(f"{directory}: fields.csv has {len(fields['ffr'])} rows for {mesh.n_vertices} vertices")
    features = None
    if with_features and (directory / "features.csv").exists():
        features = read_features(directory / "features.csv")
        if features.values.shape[0] != mesh.n_vertices:
            raise ValueError(f"{directory}: features.csv row count mismatch")
    return CaseBundle(
        directory, str(meta["case_id"]), mesh, tree, float(meta["q_in_ml_min"]), float(meta["p_ao_mmHg"]),
        [LesionSpec(**les) for les in meta["lesions"]], fields, features, meta,
    )


def featurize_case(directory, k_eig=64, mask=None):
    case = load_case(directory, with_features=False)
    feats, _ = compute_features(case.mesh, case.tree, case.q_in, case.p_ao, k_eig)
    if mask is not None:
        feats = feats.select(mask)
    write_features(Path(directory) / "features.csv", feats)
    return feats


# ---------------------------------------------------------------- datasets


def split_assignment(n, seed, fractions=(0.8, 0.1, 0.1)):
    """Deterministic case-level split; counts are rounded, the remainder goes to train."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    labels = np.array(["train"] * (n - n_val - n_test) + ["val"] * n_val + ["test"] * n_test)
    return np.random.default_rng(seed).permutation(labels).tolist()


def _generate_one(args):
    directory, case_id, seed, rings_per_mm, segments = args
    write_case(directory, case_id, sample_spec(seed), rings_per_mm, segments)
    return case_id


def _workers(n_jobs):
    return max(1, n_jobs if n_jobs else (os.cpu_count() or 1))


def _pool_map(fn, items, n_jobs):
    n_jobs = _workers(n_jobs)
    if n_jobs == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(n_jobs) as pool:
        return list(pool.map(fn, items))


def generate_dataset(out, n, seed=0, rings_per_mm=2.0, segments=24, n_jobs=None):
    """Write ``n`` cases plus ``dataset.json``; case ``i`` uses anatomy seed ``seed * 100003 + i``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    splits = split_assignment(n, seed)
    jobs = []
    cases = []
    for i in range(n):
        case_id = f"case_{i:04d}"
        jobs.append((str(out / case_id), case_id, seed * 100003 + i, rings_per_mm, segments))
        cases.append({"path": case_id, "split": splits[i]})
    _pool_map(_generate_one, jobs, n_jobs)
    manifest = {"cases": cases, "seed": seed, "oracle": ORACLE_TAG}
    (out / "dataset.json").write_text(_dump_json(manifest))
    return out / "dataset.json"


def _featurize_one(args):
    directory, k_eig, mask = args
    featurize_case(directory, k_eig, mask)
    return directory


def featurize_dataset(manifest_path, k_eig=64, mask=None, n_jobs=None):
    manifest = read_manifest(manifest_path)
    jobs = [(str(p), k_eig, mask) for p, _ in manifest_cases(manifest_path, manifest)]
    _pool_map(_featurize_one, jobs, n_jobs)


def read_manifest(path):
    manifest = json.loads(Path(path).read_text())
    if "cases" not in manifest:
        raise ValueError(f"{path}: manifest has no 'cases'")
    for c in manifest["cases"]:
        if c.get("split") not in SPLITS:
            raise ValueError(f"{path}: case {c.get('path')!r} has invalid split {c.get('split')!r}")
    return manifest


def manifest_cases(manifest_path, manifest=None, split=None):
    """``(absolute case dir, split)`` pairs, optionally filtered to one split."""
    manifest = manifest or read_manifest(manifest_path)
    root = Path(manifest_path).parent
    return [(root / c["path"], c["split"]) for c in manifest["cases"] if split is None or c["split"] == split]
