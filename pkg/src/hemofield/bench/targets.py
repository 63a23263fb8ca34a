"""Learning targets and reconstruction of vFFR from a network output."""

import numpy as np

from ..features import Standardizer

TARGETS = ("pressure", "pressure_drop", "vffr")
ALIASES = {"p": "pressure", "dp": "pressure_drop", "vffr": "vffr", "ffr": "vffr"}
FIELD_COLUMN = {"pressure": "pressure", "pressure_drop": "pressure_drop", "vffr": "ffr"}


def canonical_target(name):
    name = ALIASES.get(name, name)
    if name not in TARGETS:
        raise ValueError(f"unknown target {name!r}; expected one of {TARGETS} or p/dp/vffr")
    return name


def target_values(case, target):
    """Ground-truth training target of one case (Pa for pressures, dimensionless for vFFR)."""
    return np.asarray(case.fields[FIELD_COLUMN[canonical_target(target)]], dtype=float)


def vffr_from_target(values, target, p_in):
    """Map a field in target units to vFFR.

    pressure: ``p / p_in``; pressure drop: ``(p_in - dp) / p_in``; vffr: identity.
    """
    values = np.asarray(values, dtype=float)
    target = canonical_target(target)
    if target == "vffr":
        return values.copy()
    if not p_in > 0:
        raise ValueError(f"inlet pressure must be positive, got {p_in}")
    if target == "pressure":
        return values / p_in
    return (p_in - values) / p_in


def reconstruct_vffr(output, standardizer, target, p_in):
    """Destandardize a raw network output and convert it to vFFR."""
    if not isinstance(standardizer, Standardizer):
        standardizer = Standardizer.from_dict(standardizer)
    return vffr_from_target(standardizer.invert(np.asarray(output, dtype=float).ravel()), target, p_in)
