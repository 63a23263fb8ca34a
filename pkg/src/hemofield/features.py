"""Per-vertex input features and target standardization.

The canonical layout has 28 columns::

    n(3) g gamma R T(3) phi(6) hks(5) wks(5) q p_in bc_id

Masks are 28-bit integers; bit ``i`` keeps column ``i`` (bit 0 is ``nx``).
"""

from dataclasses import dataclass

import numpy as np

from .anatomy import match_stations
from .mesh import INLET, cotan_laplacian, geodesic_to_set, vertex_normals
from .spectral import eigendecompose, heat_kernel_signature, spectral_channels, wave_kernel_signature

FEATURE_GROUPS = {
    "n": ["nx", "ny", "nz"],
    "g": ["g"],
    "gamma": ["gamma"],
    "R": ["R"],
    "T": ["Tx", "Ty", "Tz"],
    "phi": [f"phi{i}" for i in range(1, 7)],
    "hks": [f"hks{i}" for i in range(1, 6)],
    "wks": [f"wks{i}" for i in range(1, 6)],
    "q": ["q"],
    "p_in": ["p_in"],
    "bc_id": ["bc_id"],
}
FEATURE_COLUMNS = [c for cols in FEATURE_GROUPS.values() for c in cols]
N_FEATURES = len(FEATURE_COLUMNS)
FULL_MASK = (1 << N_FEATURES) - 1

# feature subsets of the input ablation study
ABLATIONS = {
    "ablation1": ("n", "g", "q"),
    "ablation2": ("n", "g", "R", "q"),
    "ablation3": ("n", "g", "R", "q", "p_in"),
    "ablation4": ("n", "g", "q", "p_in"),
    "ablation5": ("n", "g", "gamma", "R", "phi", "hks", "wks", "q"),
    "ablation6": ("n", "g", "gamma", "R", "T", "q", "p_in"),
    "ablation7": ("phi", "hks", "wks", "T", "q", "p_in"),
    "all": tuple(FEATURE_GROUPS),
}


def mask_from_groups(groups):
    mask = 0
    for g in groups:
        if g not in FEATURE_GROUPS:
            raise KeyError(f"unknown feature group {g!r}")
        for c in FEATURE_GROUPS[g]:
            mask |= 1 << FEATURE_COLUMNS.index(c)
    return mask


def parse_mask(mask):
    """Accept an int, a hex string (``"0xFFFFFFF"``) or an ablation name."""
    if isinstance(mask, str):
        if mask in ABLATIONS:
            return mask_from_groups(ABLATIONS[mask])
        mask = int(mask, 16)
    mask = int(mask)
    if mask < 0 or mask > FULL_MASK:
        raise ValueError(f"mask {mask:#x} has bits outside the {N_FEATURES} feature columns")
    return mask


def mask_columns(mask):
    """Indices of the canonical columns kept by ``mask``."""
    mask = parse_mask(mask)
    idx = [i for i in range(N_FEATURES) if mask >> i & 1]
    if not idx:
        raise ValueError("feature mask selects zero columns")
    return idx


@dataclass
class FeatureMatrix:
    values: np.ndarray
    columns: list

    def __post_init__(self):
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column names do not match matrix width")

    def select(self, mask):
        """Drop the columns switched off in ``mask``; requires the canonical layout."""
        if self.columns != FEATURE_COLUMNS:
            raise ValueError("masking needs the full canonical feature matrix")
        idx = mask_columns(mask)
        return FeatureMatrix(self.values[:, idx].copy(), [self.columns[i] for i in idx])

    def permuted(self, perm):
        return FeatureMatrix(self.values[perm], list(self.columns))


def project_centerline_attrs(mesh, tree, normals=None):
    """Per-vertex stenosed radius ``R``, abscissa ``gamma`` and surface-projected tangent ``T``."""
    if normals is None:
        normals = vertex_normals(mesh)
    _, station = match_stations(mesh.vertices, tree)
    _, _, _, r_sten, abscissa, tangent = tree.stations()
    R = r_sten[station]
    gamma = abscissa[station]
    t = tangent[station]
    t = t - np.sum(t * normals, axis=1, keepdims=True) * normals
    norm = np.linalg.norm(t, axis=1, keepdims=True)
    ok = norm[:, 0] > 1e-12
    t[ok] /= norm[ok]
    t[~ok] = 0.0
    return R, gamma, t


def compute_features(mesh, tree, q_in, p_ao, k_eig=64, basis=None):
    """Full 28-column feature matrix of one case.

    ``q_in`` is in ml/min and ``p_ao`` (used as the inlet pressure) in mmHg.
    Returns the matrix and the spectral basis it was built from.
    """
    n = mesh.n_vertices
    normals = vertex_normals(mesh)
    inlet = np.flatnonzero(mesh.bc_tag == INLET)
    g = geodesic_to_set(mesh, inlet)
    if not np.all(np.isfinite(g)):
        raise ValueError("some vertices are not connected to the inlet")
    R, gamma, T = project_centerline_attrs(mesh, tree, normals)
    if basis is None:
        L, M = cotan_laplacian(mesh)
        basis = eigendecompose(L, M, min(k_eig, n))
    cols = [
        normals, g[:, None], gamma[:, None], R[:, None], T,
        spectral_channels(basis, 6),
        heat_kernel_signature(basis, 5),
        wave_kernel_signature(basis, 5),
        np.full((n, 1), float(q_in)),
        np.full((n, 1), float(p_ao)),
        mesh.bc_tag[:, None].astype(float),
    ]
    values = np.concatenate(cols, axis=1)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite feature values")
    return FeatureMatrix(values, list(FEATURE_COLUMNS)), basis


def assemble_features(features, mask=FULL_MASK):
    return features.select(mask)


def write_features(path, features):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(features.columns) + "\n")
        for row in features.values.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")


def read_features(path):
    with open(path) as fh:
        columns = fh.readline().strip().split(",")
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return FeatureMatrix(values.reshape(-1, len(columns)), columns)


@dataclass
class Standardizer:
    """Affine target map ``(y - mean) / std`` fitted on training vertices."""

    mean: float
    std: float

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d):
        if d is None or "mean" not in d or "std" not in d:
            raise KeyError("missing standardizer statistics")
        return cls(float(d["mean"]), float(d["std"]))


def fit_standardizer(train_targets):
    """Mean and (population) standard deviation over all training vertices pooled."""
    arrays = [np.asarray(t, dtype=float).ravel() for t in train_targets]
    if not arrays or sum(a.size for a in arrays) == 0:
        raise ValueError("empty training set")
    y = np.concatenate(arrays)
    mean = float(y.mean())
    std = float(y.std())
    if not std > 0:
        raise ValueError("zero variance target; cannot standardize")
    return Standardizer(mean, std)
