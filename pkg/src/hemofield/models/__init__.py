"""The five field-regression architectures and their factory."""

import numpy as np

from .base import KINDS, PARAM_TARGETS, FieldModel, ModelConfig
from .deltaconv import DeltaConv
from .diffusion import DiffusionNet
from .geometry import CaseGeometry
from .mlp import PointwiseMLP
from .pointnet import PointNetPP
from .transformer import TokenTransformer

REGISTRY = {
    "mlp": PointwiseMLP,
    "pointnetpp": PointNetPP,
    "diffusionnet": DiffusionNet,
    "deltaconv": DeltaConv,
    "transformer": TokenTransformer,
}


def build_model(config, rng_seed=0):
    """Instantiate and initialise a model deterministically from ``rng_seed``."""
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    if config.kind not in REGISTRY:
        raise ValueError(f"unknown model kind {config.kind!r}")
    return REGISTRY[config.kind](config, np.random.default_rng(rng_seed))


__all__ = ["KINDS", "PARAM_TARGETS", "CaseGeometry", "FieldModel", "ModelConfig", "REGISTRY", "build_model"]
