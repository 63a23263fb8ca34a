"""PointNet++ with a four-level farthest-point hierarchy.

Set abstraction at level ``l``: every centroid ``i`` gathers its ``k`` nearest
points ``j`` of level ``l - 1`` and computes ``max_j h([x_j, p_j - p_i])``.
The expanding path interpolates coarse features to the finer level with
inverse-distance 3-NN weights and concatenates the skip features.
"""

import math

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import MLP, Linear, ModuleList
from ..mesh import farthest_point_sample, knn_query
from .base import FieldModel, block_diag, stack_indices
from .geometry import inverse_distance_3nn, sampling_frame

SAMPLING = (0.05, 0.50, 0.75, 0.90)
K_NEIGHBORS = 16
WIDTHS = {"S": (48, 64, 96, 112), "L": (80, 120, 176, 192)}


def level_sizes(n, sampling=SAMPLING):
    sizes = [n]
    for r in sampling:
        sizes.append(max(1, math.ceil(r * sizes[-1] - 1e-9)))
    return sizes


class PointNetPP(FieldModel):
    def __init__(self, config, rng):
        super().__init__()
        config.sampling = tuple(config.sampling or SAMPLING)
        config.k_neighbors = config.k_neighbors or K_NEIGHBORS
        config.depth = len(config.sampling)
        widths = tuple(config.extra.get("widths", WIDTHS[config.size]))
        config.width = config.width or widths[-1]
        self.config = config
        self.widths = widths
        c_in = config.in_channels
        self.sa = ModuleList()
        prev = c_in
        for w in widths:
            self.sa.append(MLP([prev + 3, w, w], rng))
            prev = w
        # expanding path: coarse level l -> level l-1
        self.fp = ModuleList()
        skips = [c_in] + list(widths[:-1])
        for l in range(len(widths), 0, -1):
            out = widths[l - 2] if l >= 2 else widths[0]
            layers = [prev + skips[l - 1], out] + ([out] if l == 1 else [])
            self.fp.append(MLP(layers, rng))
            prev = out
        self.head = Linear(prev, 1, rng, zero=config.extra.get("zero_head", False))

    def prepare(self, geometry):
        pos = [np.asarray(geometry.positions, dtype=float)]
        key = [sampling_frame(pos[0])]
        for r in self.config.sampling:
            idx = farthest_point_sample(key[-1], r, seed=self.config.fps_seed)
            pos.append(pos[-1][idx])
            key.append(key[-1][idx])
        groups, interp = [], []
        for l in range(1, len(pos)):
            k = min(self.config.k_neighbors, len(pos[l - 1]))
            groups.append(knn_query(key[l - 1], key[l], k))
            interp.append(inverse_distance_3nn(key[l], key[l - 1]))
        return {"n": geometry.n, "pos": pos, "groups": groups, "interp": interp}

    def collate(self, prepared):
        n_levels = len(self.config.sampling) + 1
        sizes = [[len(p["pos"][l]) for p in prepared] for l in range(n_levels)]
        pos = [np.concatenate([p["pos"][l] for p in prepared]) for l in range(n_levels)]
        groups, centres, interp = [], [], []
        for l in range(1, n_levels):
            g = stack_indices([p["groups"][l - 1] for p in prepared], sizes[l - 1])
            groups.append(g)
            centres.append(np.repeat(pos[l][:, None, :], g.shape[1], axis=1))
            mats = []
            for p, n_src in zip(prepared, sizes[l]):
                idx, w = p["interp"][l - 1]
                mats.append(T.interpolation_matrix(idx, w, n_src))
            interp.append(block_diag(mats))
        scatter = [T.scatter_matrix(g, len(pos[l])) for l, g in enumerate(groups)]
        return {"sizes": sizes[0], "pos": pos, "groups": groups, "centres": centres,
                "interp": interp, "scatter": scatter}

    def forward(self, x, side):
        pos, groups = side["pos"], side["groups"]
        feats = [x]
        h = x
        for l, mlp in enumerate(self.sa):
            g = groups[l]
            xj = T.gather(h, g, side["scatter"][l])  # (n_l, k, C)
            rel = pos[l][g] - side["centres"][l]  # p_j - p_i, constant
            msg = mlp(T.concat([xj, T.Tensor(rel)], axis=-1))
            h = T.group_max(msg, axis=1)
            feats.append(h)
        for i, mlp in enumerate(self.fp):
            l = len(self.sa) - i  # interpolate level l -> l - 1
            up = T.spmm(side["interp"][l - 1], h)
            h = mlp(T.concat([up, feats[l - 1]], axis=-1))
        return self.head(h)
