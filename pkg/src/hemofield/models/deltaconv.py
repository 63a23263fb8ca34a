"""DeltaConv: coupled scalar and tangent-vector streams on a subsampled point cloud.

Vector features are stored per point as two rows ``(2i, 2i + 1)`` holding the
components along the local tangent frame. With ``G`` the least-squares
gradient, the operators are::

    div u  = -G^T u
    curl u = div(J u)            (J: 90 degree in-plane rotation)
    lap u  = G div u + J G curl u
"""

import numpy as np
from scipy import sparse

from ..autodiff import tensor as T
from ..autodiff.nn import MLP, BatchNorm, Linear, Module, ModuleList
from ..autodiff.tensor import Tensor
from ..mesh import farthest_point_sample, knn
from .base import FieldModel, block_diag, stack_indices
from .geometry import inverse_distance_3nn, lsq_gradient, sampling_frame

RATIO = 0.10
K_NEIGHBORS = 30
DEFAULTS = {"S": {"depth": 8, "width": 38}, "L": {"depth": 8, "width": 68}}


def rotation_operator(n):
    """Sparse J acting on stacked (2n, C) tangent vectors: (a, b) -> (-b, a)."""
    rows = np.arange(2 * n)
    cols = rows ^ 1
    vals = np.where(rows % 2 == 0, -1.0, 1.0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))


class VectorLinear(Module):
    """Channel mixing applied identically to both tangent components (no bias)."""

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.lin = Linear(n_in, n_out, rng, bias=False)

    def forward(self, u):
        return self.lin(u)


def vector_norm(u, eps=1e-12):
    """Per-point magnitude of stacked vectors: (2n, C) -> (n, C)."""
    sq = T.reshape(T.mul(u, u), (-1, 2, u.shape[1]))
    return T.sqrt(T.sum_(sq, axis=1) + eps)


class DeltaBlock(Module):
    def __init__(self, width, rng):
        super().__init__()
        self.vec = VectorLinear(3 * width, width, rng)
        self.gate_bias = Tensor(np.zeros(width), requires_grad=True)
        self.h1 = MLP([4 * width, width], rng)
        self.h2 = MLP([width, width], rng)
        self.width = width

    def forward(self, x, u, ops):
        G, D, J = ops["grad"], ops["div"], ops["rot"]
        lap = T.add(T.spmm(G, T.spmm(D, u)), T.spmm(J, T.spmm(G, T.spmm(D, T.spmm(J, u)))))
        gx = T.spmm(G, x)
        v = self.vec(T.concat([u, gx, lap], axis=-1))
        # norm gate keeps rotation equivariance of the vector stream
        gate = T.sigmoid(vector_norm(v) + self.gate_bias)  # (n, C)
        v = T.reshape(T.mul(T.reshape(v, (-1, 2, self.width)), T.reshape(gate, (-1, 1, self.width))),
                      (-1, self.width))
        div = T.spmm(D, v)
        curl = T.spmm(D, T.spmm(J, v))
        local = self.h1(T.concat([x, div, curl, vector_norm(v)], axis=-1))
        nb = T.group_max(T.gather(self.h2(x), ops["nbrs"], ops["scatter"]), axis=1)
        return local + nb, v


class DeltaConv(FieldModel):
    def __init__(self, config, rng):
        super().__init__()
        d = DEFAULTS[config.size]
        config.depth = config.depth or d["depth"]
        config.width = config.width or d["width"]
        config.sampling = tuple(config.sampling or (RATIO,))
        config.k_neighbors = config.k_neighbors or K_NEIGHBORS
        self.config = config
        w = config.width
        self.lift = Linear(config.in_channels, w, rng)
        self.lift_norm = BatchNorm(w)
        self.blocks = ModuleList([DeltaBlock(w, rng) for _ in range(config.depth)])
        self.head = MLP([w, w, 1], rng, plain_last=True, zero_last=config.extra.get("zero_head", False))

    def prepare(self, geometry):
        key = sampling_frame(geometry.positions)
        pick = farthest_point_sample(key, self.config.sampling[0], seed=self.config.fps_seed)
        pts = geometry.positions[pick]
        k = min(self.config.k_neighbors, len(pick) - 1)
        nbrs = knn(key[pick], k)
        G = lsq_gradient(pts, geometry.normals[pick], nbrs)
        idx, w = inverse_distance_3nn(key[pick], key)
        return {"n": geometry.n, "pick": pick, "grad": G, "nbrs": nbrs, "up": T.interpolation_matrix(idx, w, len(pick))}

    def collate(self, prepared):
        sizes = [p["n"] for p in prepared]
        coarse = [len(p["pick"]) for p in prepared]
        G = block_diag([p["grad"] for p in prepared])
        nbrs = stack_indices([p["nbrs"] for p in prepared], coarse)
        return {
            "sizes": sizes,
            "pick": stack_indices([p["pick"] for p in prepared], sizes),
            "grad": G, "div": (-G.T).tocsr(), "rot": rotation_operator(sum(coarse)),
            "nbrs": nbrs, "scatter": T.scatter_matrix(nbrs, sum(coarse)),
            "up": block_diag([p["up"] for p in prepared]),
        }

    def forward(self, x, side):
        xs = T.gather(x, side["pick"])
        h = T.leaky_relu(self.lift_norm(self.lift(xs)), 0.2)
        u = T.spmm(side["grad"], h)
        for block in self.blocks:
            h, u = block(h, u, side)
        return T.spmm(side["up"], self.head(h))
