"""DiffusionNet: learned spectral heat diffusion plus tangent-gradient features."""

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import MLP, BatchNorm, Linear, ModuleList, Module
from ..autodiff.tensor import Tensor
from ..mesh import knn
from .base import FieldModel, block_diag
from .geometry import lsq_gradient, sampling_frame

N_EIG = 64
GRAD_NEIGHBORS = 8
DEFAULTS = {"S": {"depth": 3, "width": 80}, "L": {"depth": 6, "width": 100}}


def spectral_diffusion(x, evals, evecs, mass, t):
    """``Phi diag(exp(-lambda t)) Phi^T M x`` with one diffusion time per channel.

    ``x`` is (N, C), ``t`` a (C,) tensor; Phi, lambda and M are constants.
    """
    coef = T.matmul(Tensor((evecs * mass[:, None]).T), x)  # (k, C)
    decay = T.exp(T.mul(Tensor(-evals[:, None]), T.reshape(t, (1, -1))))
    return T.matmul(Tensor(evecs), T.mul(coef, decay))


class DiffusionBlock(Module):
    def __init__(self, width, rng):
        super().__init__()
        self.raw_time = Tensor(np.full(width, -2.0), requires_grad=True)
        self.A = Linear(width, width, rng, bias=False)
        self.mlp = MLP([3 * width, width, width], rng)
        self.width = width

    def times(self):
        return T.softplus(self.raw_time)

    def forward(self, x, side):
        t = self.times()
        diffused = []
        start = 0
        for case in side["cases"]:
            n = case["n"]
            xi = x[start:start + n] if len(side["cases"]) > 1 else x
            diffused.append(spectral_diffusion(xi, case["evals"], case["evecs"], case["mass"], t))
            start += n
        d = diffused[0] if len(diffused) == 1 else T.concat(diffused, axis=0)
        # tangent gradients of every channel: (2N, C) -> (N, 2, C)
        G = T.reshape(T.spmm(side["grad"], d), (-1, 2, self.width))
        AG = self.A(G)
        g = T.tanh(T.sum_(T.mul(G, AG), axis=1))
        return x + self.mlp(T.concat([x, d, g], axis=-1))


class DiffusionNet(FieldModel):
    def __init__(self, config, rng):
        super().__init__()
        d = DEFAULTS[config.size]
        config.depth = config.depth or d["depth"]
        config.width = config.width or d["width"]
        config.n_eig = config.n_eig or N_EIG
        config.k_neighbors = config.k_neighbors or GRAD_NEIGHBORS
        self.config = config
        w = config.width
        self.lift = Linear(config.in_channels, w, rng)
        self.lift_norm = BatchNorm(w)
        self.blocks = ModuleList([DiffusionBlock(w, rng) for _ in range(config.depth)])
        self.head = Linear(w, 1, rng, zero=config.extra.get("zero_head", False))

    def prepare(self, geometry):
        basis = geometry.basis(self.config.n_eig)
        nb = knn(sampling_frame(geometry.positions), min(self.config.k_neighbors, geometry.n - 1))
        return {
            "n": geometry.n, "evals": basis.evals, "evecs": basis.evecs, "mass": basis.mass,
            "grad": lsq_gradient(geometry.positions, geometry.normals, nb),
        }

    def collate(self, prepared):
        return {"sizes": [p["n"] for p in prepared], "cases": prepared,
                "grad": block_diag([p["grad"] for p in prepared])}

    def forward(self, x, side):
        h = T.leaky_relu(self.lift_norm(self.lift(x)), 0.2)
        for block in self.blocks:
            h = block(h, side)
        return self.head(h)
