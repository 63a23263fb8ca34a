"""Point-wise MLP baseline."""

from ..autodiff.nn import MLP, Linear
from .base import FieldModel

DEFAULTS = {"S": {"depth": 6, "width": 150}, "L": {"depth": 12, "width": 170}}


class PointwiseMLP(FieldModel):
    """``depth`` fully connected layers; every hidden layer is followed by batch norm and LeakyReLU."""

    def __init__(self, config, rng):
        super().__init__()
        d = DEFAULTS[config.size]
        config.depth = config.depth or d["depth"]
        config.width = config.width or d["width"]
        self.config = config
        widths = [config.in_channels] + [config.width] * (config.depth - 1)
        self.body = MLP(widths, rng)
        self.head = Linear(config.width, 1, rng, zero=config.extra.get("zero_head", False))

    def forward(self, x, side=None):
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        return self.head(self.body(x))
