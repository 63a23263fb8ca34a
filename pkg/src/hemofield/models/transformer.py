"""Token transformer: pool vertices to FPS tokens, self-attend, decode by cross-attention."""

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import MLP, LayerNorm, Linear, Module, ModuleList
from ..autodiff.tensor import Tensor
from ..mesh import farthest_point_sample, knn_query
from .base import FieldModel, offsets
from .geometry import sampling_frame

COMPRESSION = 0.05
DEFAULTS = {"S": {"depth": 6, "width": 42, "heads": 6}, "L": {"depth": 12, "width": 52, "heads": 4}}


def attention(q, k, v, heads):
    """Multi-head scaled dot-product attention.

    ``q`` is (Nq, D), ``k`` and ``v`` are (Nk, D); returns (Nq, D) and the
    (heads, Nq, Nk) weights.
    """
    d = q.shape[1]
    hd = d // heads
    qh = T.transpose(T.reshape(q, (-1, heads, hd)), (1, 0, 2))
    kh = T.transpose(T.reshape(k, (-1, heads, hd)), (1, 2, 0))
    vh = T.transpose(T.reshape(v, (-1, heads, hd)), (1, 0, 2))
    w = T.softmax(T.mul(T.matmul(qh, kh), 1.0 / np.sqrt(hd)), axis=-1)
    out = T.matmul(w, vh)  # (heads, Nq, hd)
    return T.reshape(T.transpose(out, (1, 0, 2)), (-1, d)), w


class AttentionBlock(Module):
    """Pre-norm multi-head self-attention followed by a residual MLP."""

    def __init__(self, width, heads, rng):
        super().__init__()
        self.norm1 = LayerNorm(width)
        self.q = Linear(width, width, rng)
        self.k = Linear(width, width, rng)
        self.v = Linear(width, width, rng)
        self.o = Linear(width, width, rng)
        self.norm2 = LayerNorm(width)
        self.fc1 = Linear(width, 2 * width, rng)
        self.fc2 = Linear(2 * width, width, rng)
        self.heads = heads

    def forward(self, tokens):
        h = self.norm1(tokens)
        a, _ = attention(self.q(h), self.k(h), self.v(h), self.heads)
        tokens = tokens + self.o(a)
        h = self.fc2(T.leaky_relu(self.fc1(self.norm2(tokens)), 0.2))
        return tokens + h


class TokenTransformer(FieldModel):
    def __init__(self, config, rng):
        super().__init__()
        d = DEFAULTS[config.size]
        config.depth = config.depth or d["depth"]
        config.width = config.width or d["width"]
        config.heads = config.heads or d["heads"]
        config.sampling = tuple(config.sampling or (COMPRESSION,))
        if config.width % config.heads:
            raise ValueError("width must be divisible by the number of heads")
        self.config = config
        w = config.width
        self.encode = MLP([config.in_channels + 3, w, w], rng)
        self.blocks = ModuleList([AttentionBlock(w, config.heads, rng) for _ in range(config.depth)])
        self.norm_tokens = LayerNorm(w)
        self.dq = Linear(w, w, rng)
        self.dk = Linear(w, w, rng)
        self.dv = Linear(w, w, rng)
        self.head = MLP([2 * w, w, 1], rng, plain_last=True, zero_last=config.extra.get("zero_head", False))

    def prepare(self, geometry):
        pos = np.asarray(geometry.positions, dtype=float)
        key = sampling_frame(pos)
        tokens = farthest_point_sample(key, self.config.sampling[0], seed=self.config.fps_seed)
        if len(tokens) < 2:
            raise ValueError("transformer needs at least two tokens")
        owner = knn_query(key[tokens], key, 1)[:, 0]
        # case-centred coordinates make the embedding translation invariant
        centred = pos - pos.mean(axis=0)
        return {"n": geometry.n, "tokens": tokens, "owner": owner, "centred": centred}

    def collate(self, prepared):
        return {"sizes": [p["n"] for p in prepared], "cases": prepared,
                "centred": np.concatenate([p["centred"] for p in prepared])}

    def forward(self, x, side):
        fine = self.encode(T.concat([x, Tensor(side["centred"])], axis=-1))
        outs = []
        off = offsets(side["sizes"])
        single = len(side["cases"]) == 1
        for i, case in enumerate(side["cases"]):
            f = fine if single else fine[off[i]:off[i + 1]]
            tok = T.segment_mean(f, case["owner"], len(case["tokens"]))
            for block in self.blocks:
                tok = block(tok)
            tok = self.norm_tokens(tok)
            a, _ = attention(self.dq(f), self.dk(tok), self.dv(tok), self.config.heads)
            outs.append(T.concat([f, a], axis=-1))
        h = outs[0] if single else T.concat(outs, axis=0)
        return self.head(h)
