"""Model configuration, batching helpers and the model registry."""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from ..autodiff.nn import Module

KINDS = ("mlp", "pointnetpp", "diffusionnet", "deltaconv", "transformer")
SIZES = ("S", "L")
PARAM_TARGETS = {"S": 100_000, "L": 300_000}


@dataclass
class ModelConfig:
    """Architecture hyper-parameters; unset fields take per-kind/size defaults."""

    kind: str
    size: str = "S"
    in_channels: int = 28
    depth: int | None = None
    width: int | None = None
    sampling: tuple | None = None
    k_neighbors: int | None = None
    n_eig: int | None = None
    heads: int | None = None
    fps_seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.size not in SIZES:
            raise ValueError(f"unknown size {self.size!r}")
        if self.sampling is not None:
            self.sampling = tuple(self.sampling)

    def to_dict(self):
        d = asdict(self)
        d["sampling"] = None if self.sampling is None else list(self.sampling)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class FieldModel(Module):
    """A network mapping per-vertex features (plus geometry) to one scalar per vertex.

    Subclasses implement ``prepare`` (per-case constant side inputs),
    ``collate`` (pack several prepared cases into one batch) and ``forward``.
    """

    config: ModelConfig

    def prepare(self, geometry):
        return {"n": geometry.n}

    def collate(self, prepared):
        return {"sizes": [p["n"] for p in prepared]}

    def forward(self, x, side):
        raise NotImplementedError

    def predict(self, x, side):
        was = self.training
        self.eval()
        try:
            return self.forward(x, side).data[:, 0].copy()
        finally:
            self.train(was)


def offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def stack_indices(arrays, sizes):
    """Concatenate per-case index arrays, shifting each by its case offset."""
    off = offsets(sizes)
    return np.concatenate([a + off[i] for i, a in enumerate(arrays)])


def block_diag(mats):
    return sparse.block_diag(mats, format="csr")
