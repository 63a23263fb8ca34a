"""Reduced-order pressure oracle: Poiseuille resistance integrated along the centreline.

This stands in for a 3D steady Navier-Stokes solve. Internal units are SI;
boundary conditions come in clinical units (ml/min, mmHg).
"""

from dataclasses import dataclass

import numpy as np

from .anatomy import match_stations
from .mesh import INLET

MMHG = 133.322  # Pa
ML_MIN = 1e-6 / 60.0  # m^3/s
BLOOD_VISCOSITY = 0.004  # Pa s (4 cP)
BLOOD_DENSITY = 1050.0  # kg/m^3; unused by the Poiseuille law, kept for provenance


def mmhg_to_pa(p):
    return np.asarray(p, dtype=float) * MMHG


def pa_to_mmhg(p):
    return np.asarray(p, dtype=float) / MMHG


@dataclass
class FlowSolution:
    """Per-branch flows (ml/min), station pressures and per-vertex fields (Pa)."""

    flows: np.ndarray
    station_pressure: list
    p_in: float
    pressure: np.ndarray
    pressure_drop: np.ndarray
    ffr: np.ndarray


def split_flows(tree, q_in):
    """Flow per branch (ml/min) with daughters split by Murray's cube law on healthy outlet radii."""
    daughters = [b for b in tree.branches if b.parent_branch is not None]
    if len(daughters) != 2:
        raise ValueError("split_flows expects exactly two daughter branches")
    r_out = np.array([b.radius[-1] for b in daughters])
    if np.any(r_out <= 0):
        raise ValueError("zero outlet radius")
    w = r_out ** 3
    flows = np.zeros(len(tree.branches))
    flows[0] = q_in
    q1 = q_in * w[0] / w.sum()
    flows[daughters[0].branch_id] = q1
    flows[daughters[1].branch_id] = q_in - q1
    return flows


def poiseuille_gradient(q_ml_min, radius_mm, mu=BLOOD_VISCOSITY):
    """Pressure loss per metre, ``8 mu Q / (pi r^4)``, in Pa/m."""
    r = np.asarray(radius_mm, dtype=float) * 1e-3
    return 8.0 * mu * q_ml_min * ML_MIN / (np.pi * r ** 4)


def pressure_along(tree, flows, mu=BLOOD_VISCOSITY, p_in=100 * MMHG):
    """Station pressures (Pa) per branch by trapezoidal integration of the Poiseuille loss."""
    out = [None] * len(tree.branches)
    by_id = {b.branch_id: b for b in tree.branches}
    # parents before children
    pending = sorted(tree.branches, key=lambda b: (b.parent_branch is not None, b.branch_id))
    for b in pending:
        if np.any(b.stenosed_radius <= 0):
            raise ValueError(f"branch {b.branch_id}: non-positive stenosed radius")
        g = poiseuille_gradient(flows[b.branch_id], b.stenosed_radius, mu)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"branch {b.branch_id}: non-finite resistance integrand")
        ds = np.diff(b.abscissa) * 1e-3
        loss = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * ds)])
        if b.parent_branch is None:
            start = p_in
        else:
            parent = by_id[b.parent_branch]
            start = np.interp(b.attach_abscissa, parent.abscissa, out[tree.branches.index(parent)])
        out[tree.branches.index(b)] = start - loss
    return out


def project_fields(mesh, tree, station_pressure, p_in, flows=None):
    """Copy each vertex's nearest-station pressure onto the surface and derive drop and FFR."""
    _, station = match_stations(mesh.vertices, tree)
    p_stations = np.concatenate(station_pressure)
    pressure = p_stations[station].copy()
    pressure[mesh.bc_tag == INLET] = p_in
    drop = p_in - pressure
    ffr = pressure / p_in
    return FlowSolution(flows, station_pressure, float(p_in), pressure, drop, ffr)


def solve_case(mesh, tree, q_in, p_ao, mu=BLOOD_VISCOSITY):
    """Full oracle for one case; the inlet pressure is the aortic pressure."""
    p_in = float(mmhg_to_pa(p_ao))
    flows = split_flows(tree, q_in)
    stations = pressure_along(tree, flows, mu, p_in)
    return project_fields(mesh, tree, stations, p_in, flows)


FIELDS_HEADER = "vertex_id,pressure_pa,pressure_drop_pa,ffr"


def write_fields(path, solution):
    with open(path, "w", newline="\n") as fh:
        fh.write(FIELDS_HEADER + "\n")
        rows = zip(solution.pressure.tolist(), solution.pressure_drop.tolist(), solution.ffr.tolist())
        for i, (p, dp, f) in enumerate(rows):
            fh.write(f"{i},{p!r},{dp!r},{f!r}\n")


def read_fields(path):
    """Return a dict of per-vertex arrays ``pressure``, ``pressure_drop`` and ``ffr``."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != FIELDS_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[0] and not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ValueError(f"{path}: vertex ids must be 0..N-1 in order")
    return {"pressure": data[:, 1], "pressure_drop": data[:, 2], "ffr": data[:, 3]}
