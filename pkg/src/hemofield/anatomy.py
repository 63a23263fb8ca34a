"""Procedural left-coronary bifurcations with stenoses.

Geometry convention: the parent (branch 0) runs along +z from the origin; the
two daughters (branches 1 and 2) leave the parent end point in the x-z plane,
daughter 1 towards +x and daughter 2 towards -x. Abscissae are global arc
lengths from the inlet, so a daughter starts at the parent length.

The junction is built as a pair of trousers: the last parent ring is split
into two halves, each half is closed by a shared seam arching over the
carina, and each daughter tube starts from its half-ring-plus-seam and blends
into a circular cross-section.
"""

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh import INLET, OUTLET, SurfaceMesh
from .primitives import ring_band_faces

logger = logging.getLogger(__name__)

PARENT_LENGTH = 10.0
DAUGHTER_LENGTHS = (40.0, 40.0)
PARENT_RADIUS = 1.75
DAUGHTER_RADII = (1.4, 1.2)
ANGLE_RANGE = (60.0, 80.0)
JITTER = 0.15
PARENT_TAPER = 0.92  # end radius / start radius
DAUGHTER_TAPER = 0.75
SEVERITY_RANGE = (0.20, 0.60)
LESION_LENGTH_RANGE = (3.0, 8.0)
Q_RANGE = (100.0, 300.0)
P_AO_RANGE = (90.0, 110.0)
LESION_CLEARANCE = 2.0
CARINA_HEIGHT = 0.3  # fraction of the parent end radius


class GeometryWarning(UserWarning):
    pass


@dataclass
class LesionSpec:
    """One stenosis; ``center_abscissa`` and ``length`` are in mm of global abscissa."""

    branch_id: int
    center_abscissa: float
    length: float
    severity: float
    eccentricity: float = 0.0
    normal_angle: float = 0.0

    @property
    def start(self):
        return self.center_abscissa - 0.5 * self.length

    @property
    def end(self):
        return self.center_abscissa + 0.5 * self.length


@dataclass
class AnatomySpec:
    rng_seed: int
    parent_length: float
    daughter_lengths: tuple
    parent_radius: float
    daughter_radii: tuple
    bifurcation_angle: float
    lesions: list
    q_in: float
    p_ao: float

    def branch_extent(self, branch):
        lp = self.parent_length
        if branch == 0:
            return 0.0, lp
        return lp, lp + self.daughter_lengths[branch - 1]

    def end_radii(self, branch):
        if branch == 0:
            return self.parent_radius, PARENT_TAPER * self.parent_radius
        r = self.daughter_radii[branch - 1]
        return r, DAUGHTER_TAPER * r

    def daughter_angle(self, branch):
        """Deviation of a daughter from the parent axis, radians; the larger daughter deviates less."""
        r1, r2 = self.daughter_radii
        total = math.radians(self.bifurcation_angle)
        return total * (r2 if branch == 1 else r1) / (r1 + r2)

    def blend_length(self, branch):
        """Length over which a daughter cross-section morphs from the junction shape to a circle."""
        r = self.daughter_radii[branch - 1]
        return max(2.0, 1.5 * r / math.tan(self.daughter_angle(branch)))

    def lesion_window(self, branch):
        """Global abscissa interval where lesions may be placed on ``branch``."""
        lo, hi = self.branch_extent(branch)
        if branch == 0:
            return lo + LESION_CLEARANCE, hi - LESION_CLEARANCE
        return lo + self.blend_length(branch) + LESION_CLEARANCE, hi - LESION_CLEARANCE

    def to_dict(self):
        d = asdict(self)
        d["daughter_lengths"] = list(self.daughter_lengths)
        d["daughter_radii"] = list(self.daughter_radii)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["daughter_lengths"] = tuple(d["daughter_lengths"])
        d["daughter_radii"] = tuple(d["daughter_radii"])
        d["lesions"] = [LesionSpec(**les) for les in d["lesions"]]
        return cls(**d)


@dataclass
class Branch:
    branch_id: int
    positions: np.ndarray
    radius: np.ndarray
    stenosed_radius: np.ndarray
    abscissa: np.ndarray
    tangent: np.ndarray
    parent_branch: int | None = None
    attach_abscissa: float | None = None


@dataclass
class CenterlineTree:
    branches: list
    lesions: list = field(default_factory=list)

    def stations(self):
        """All stations stacked: (branch ids, positions, healthy r, stenosed r, abscissa, tangent)."""
        bid = np.concatenate([np.full(len(b.abscissa), b.branch_id) for b in self.branches])
        cat = lambda name: np.concatenate([getattr(b, name) for b in self.branches])
        return bid, cat("positions"), cat("radius"), cat("stenosed_radius"), cat("abscissa"), cat("tangent")

    def to_json(self):
        out = {"branches": [], "lesions": [asdict(les) for les in self.lesions]}
        for b in self.branches:
            samples = [
                {
                    "x": p[0], "y": p[1], "z": p[2],
                    "radius_mm": r, "stenosed_radius_mm": rs, "abscissa_mm": s,
                    "tangent": t,
                }
                for p, r, rs, s, t in zip(
                    b.positions.tolist(), b.radius.tolist(), b.stenosed_radius.tolist(),
                    b.abscissa.tolist(), b.tangent.tolist(),
                )
            ]
            out["branches"].append({
                "branch_id": b.branch_id,
                "topology": {"parent_branch": b.parent_branch, "attach_abscissa_mm": b.attach_abscissa},
                "samples": samples,
            })
        return json.dumps(out, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        branches = []
        for b in d["branches"]:
            s = b["samples"]
            branches.append(Branch(
                branch_id=b["branch_id"],
                positions=np.array([[p["x"], p["y"], p["z"]] for p in s], dtype=float),
                radius=np.array([p["radius_mm"] for p in s], dtype=float),
                stenosed_radius=np.array([p["stenosed_radius_mm"] for p in s], dtype=float),
                abscissa=np.array([p["abscissa_mm"] for p in s], dtype=float),
                tangent=np.array([p["tangent"] for p in s], dtype=float),
                parent_branch=b["topology"]["parent_branch"],
                attach_abscissa=b["topology"]["attach_abscissa_mm"],
            ))
        return cls(branches, [LesionSpec(**les) for les in d.get("lesions", [])])


# ---------------------------------------------------------------- sampling


def _jitter(rng, value):
    return value * rng.uniform(1.0 - JITTER, 1.0 + JITTER)


def sample_spec(rng_seed):
    """Draw one anatomy and its boundary conditions, deterministically from ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    parent_length = _jitter(rng, PARENT_LENGTH)
    daughter_lengths = (_jitter(rng, DAUGHTER_LENGTHS[0]), _jitter(rng, DAUGHTER_LENGTHS[1]))
    parent_radius = _jitter(rng, PARENT_RADIUS)
    cap = 0.9 * PARENT_TAPER * parent_radius
    daughter_radii = (min(_jitter(rng, DAUGHTER_RADII[0]), cap), min(_jitter(rng, DAUGHTER_RADII[1]), cap))
    angle = rng.uniform(*ANGLE_RANGE)
    q_in = rng.uniform(*Q_RANGE)
    p_ao = rng.uniform(*P_AO_RANGE)
    spec = AnatomySpec(int(rng_seed), parent_length, daughter_lengths, parent_radius,
                       daughter_radii, angle, [], q_in, p_ao)
    n_lesions = int(rng.integers(1, 4))
    for _ in range(n_lesions):
        severity = rng.uniform(*SEVERITY_RANGE)
        length = rng.uniform(*LESION_LENGTH_RANGE)
        eccentric = rng.random() < 0.5
        ecc = rng.uniform(0.3, 1.0) if eccentric else 0.0
        psi = rng.uniform(0.0, 2 * np.pi)
        first = int(rng.integers(0, 3))
        placed = None
        for branch in (first, (first + 1) % 3, (first + 2) % 3):
            lo, hi = spec.lesion_window(branch)
            ell = min(length, hi - lo)
            taken = [les for les in spec.lesions if les.branch_id == branch]
            for _ in range(50):
                c = rng.uniform(lo + 0.5 * ell, hi - 0.5 * ell)
                if all(abs(c - o.center_abscissa) >= 0.5 * (ell + o.length) for o in taken):
                    placed = LesionSpec(branch, c, ell, severity, ecc, psi)
                    break
            if placed is not None:
                break
        if placed is not None:
            spec.lesions.append(placed)
    spec.lesions.sort(key=lambda les: (les.branch_id, les.center_abscissa))
    return spec


# ---------------------------------------------------------------- profile


def healthy_radius(spec, branch, s):
    lo, hi = spec.branch_extent(branch)
    r0, r1 = spec.end_radii(branch)
    u = (np.asarray(s, dtype=float) - lo) / (hi - lo)
    return r0 + (r1 - r0) * u


def radius_profile(spec, branch, s):
    """Healthy radius, stenosed radius and 2D lumen-centre offset at global abscissa ``s``.

    A lesion of severity ``d`` and length ``l`` centred at ``s0`` narrows the
    radius to ``r (1 - d cos^2(pi (s - s0) / l))``; eccentric lesions shift the
    centre by ``ecc * d * r`` times the same bump along the lesion normal.
    """
    s = np.asarray(s, dtype=float)
    lo, hi = spec.branch_extent(branch)
    if np.any(s < lo - 1e-9) or np.any(s > hi + 1e-9):
        raise ValueError(f"abscissa outside branch {branch} extent [{lo}, {hi}]")
    r = healthy_radius(spec, branch, s)
    factor = np.ones_like(s)
    offset = np.zeros(s.shape + (2,))
    for les in spec.lesions:
        if les.branch_id != branch:
            continue
        inside = np.abs(s - les.center_abscissa) <= 0.5 * les.length
        bump = np.where(inside, np.cos(np.pi * (s - les.center_abscissa) / les.length) ** 2, 0.0)
        factor = factor - les.severity * bump
        mag = les.eccentricity * les.severity * r * bump
        offset = offset + mag[..., None] * np.array([np.cos(les.normal_angle), np.sin(les.normal_angle)])
    return r, r * factor, offset


# ---------------------------------------------------------------- mesh construction


def _frame(branch, spec):
    """(origin, axis, e1, e2) of a branch; e1 x e2 = axis, e1 points to the outer side for daughters."""
    lp = spec.parent_length
    if branch == 0:
        return np.zeros(3), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    th = spec.daughter_angle(branch)
    origin = np.array([0.0, 0.0, lp])
    if branch == 1:
        axis = np.array([math.sin(th), 0.0, math.cos(th)])
        e1 = np.array([math.cos(th), 0.0, -math.sin(th)])
        e2 = np.array([0.0, 1.0, 0.0])
    else:
        axis = np.array([-math.sin(th), 0.0, math.cos(th)])
        e1 = np.array([-math.cos(th), 0.0, -math.sin(th)])
        e2 = np.array([0.0, -1.0, 0.0])
    return origin, axis, e1, e2


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _n_intervals(length, density):
    return max(2, int(round(length * density)))


def _fold_detected(spec, density):
    # consecutive rings whose lumen centres shift by more than the ring spacing fold the band
    for branch in range(3):
        lo, hi = spec.branch_extent(branch)
        n = _n_intervals(hi - lo, density)
        s = np.linspace(lo, hi, n + 1)
        _, _, off = radius_profile(spec, branch, s)
        step = (hi - lo) / n
        if np.any(np.linalg.norm(np.diff(off, axis=0), axis=1) > step):
            return True
    return False


def build_case(spec, rings_per_mm=2.0, segments_per_ring=24):
    """Sweep the anatomy into a watertight surface with three boundary rings.

    Returns ``(mesh, tree)``. The mesh has the inlet ring tagged 1 and both
    outlet rings tagged 2; the tree carries the analytic centreline at every
    ring station.
    """
    S = int(segments_per_ring)
    if S < 8 or S % 4:
        raise ValueError("segments_per_ring must be a multiple of 4 and at least 8")
    for les in spec.lesions:
        if les.length * rings_per_mm < 2:
            raise ValueError(f"ring density {rings_per_mm}/mm gives fewer than 2 rings over a {les.length:.2f} mm lesion")
    spec = AnatomySpec.from_dict(spec.to_dict())
    for _ in range(6):
        if not _fold_detected(spec, rings_per_mm):
            break
        msg = f"seed {spec.rng_seed}: steep eccentric lesion wall, damping eccentricity"
        warnings.warn(msg, GeometryWarning, stacklevel=2)
        logger.warning(msg)
        for les in spec.lesions:
            les.eccentricity *= 0.5

    theta = 2 * np.pi * np.arange(S) / S
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    verts = []
    faces = []
    branches = []

    # parent
    origin, axis, e1, e2 = _frame(0, spec)
    lp = spec.parent_length
    n_p = _n_intervals(lp, rings_per_mm)
    s_p = np.linspace(0.0, lp, n_p + 1)
    r_h, r_s, off = radius_profile(spec, 0, s_p)
    for j, s in enumerate(s_p):
        c = origin + s * axis + off[j, 0] * e1 + off[j, 1] * e2
        verts.append(c + r_s[j] * (np.outer(cos_t, e1) + np.outer(sin_t, e2)))
    parent_idx = np.arange((n_p + 1) * S).reshape(n_p + 1, S)
    for j in range(n_p):
        faces.append(ring_band_faces(parent_idx[j], parent_idx[j + 1]))
    branches.append(Branch(0, origin + np.outer(s_p, axis), r_h, r_s, s_p.copy(), np.tile(axis, (n_p + 1, 1))))

    # seam across the carina: sigma = 0 is the +y parent vertex, sigma = S/2 the -y one
    r_end = r_h[-1]
    half = S // 2
    sigma = np.arange(1, half)
    seam_y = r_end * np.cos(np.pi * sigma / half)
    seam_z = lp + CARINA_HEIGHT * r_end * np.sin(np.pi * sigma / half) ** 2
    seam = np.stack([np.zeros_like(seam_y), seam_y, seam_z], axis=1)
    seam_start = (n_p + 1) * S
    verts.append(seam)
    last = parent_idx[-1]

    def seam_vertex(sg):
        if sg == 0:
            return last[S // 4]
        if sg == half:
            return last[3 * S // 4]
        return seam_start + sg - 1

    next_index = seam_start + len(seam)
    for branch in (1, 2):
        origin, axis, e1, e2 = _frame(branch, spec)
        junction = np.empty(S, dtype=np.int64)
        for m in range(S):
            outer = m <= S // 4 or m >= 3 * S // 4
            if branch == 1:
                junction[m] = last[m] if outer else seam_vertex(m - S // 4)
            else:
                junction[m] = last[(half + m) % S] if outer else seam_vertex(3 * S // 4 - m)
        all_verts = np.concatenate(verts)
        d_shape = all_verts[junction]
        lo, hi = spec.branch_extent(branch)
        n_d = _n_intervals(hi - lo, rings_per_mm)
        s_d = np.linspace(lo, hi, n_d + 1)
        r_h, r_s, off = radius_profile(spec, branch, s_d)
        blend = spec.blend_length(branch)
        ring_ids = [junction]
        for j in range(1, n_d + 1):
            local = s_d[j] - lo
            c = origin + local * axis + off[j, 0] * e1 + off[j, 1] * e2
            circle = c + r_s[j] * (np.outer(cos_t, e1) + np.outer(sin_t, e2))
            w = _smoothstep(local / blend)
            ring = (1.0 - w) * (d_shape + local * axis) + w * circle
            verts.append(ring)
            ring_ids.append(np.arange(next_index, next_index + S))
            next_index += S
        for j in range(n_d):
            faces.append(ring_band_faces(ring_ids[j], ring_ids[j + 1]))
        positions = origin + np.outer(s_d - lo, axis)
        branches.append(Branch(branch, positions, r_h, r_s, s_d, np.tile(axis, (n_d + 1, 1)), 0, lp))
        if branch == 1:
            outlet1 = ring_ids[-1]
        else:
            outlet2 = ring_ids[-1]

    vertices = np.concatenate(verts)
    tags = np.zeros(len(vertices), dtype=np.int64)
    tags[parent_idx[0]] = INLET
    tags[outlet1] = OUTLET
    tags[outlet2] = OUTLET
    mesh = SurfaceMesh(vertices, np.concatenate(faces), tags)
    mesh.validate()
    return mesh, CenterlineTree(branches, [LesionSpec(**asdict(les)) for les in spec.lesions])


def expected_vertex_count(spec, rings_per_mm=2.0, segments_per_ring=24):
    """Closed-form vertex count of :func:`build_case`."""
    S = segments_per_ring
    n = _n_intervals(spec.parent_length, rings_per_mm) + 1
    n += sum(_n_intervals(length, rings_per_mm) for length in spec.daughter_lengths)
    return n * S + S // 2 - 1


# ---------------------------------------------------------------- surface <-> centreline


class CenterlineMismatch(ValueError):
    pass


def match_stations(points, tree, max_radius_factor=3.0):
    """Assign every point to its nearest centreline station.

    The branch is the one whose nearest station is closest relative to that
    station's healthy radius. Returns ``(branch_id, station_index)`` where
    the station index points into the stacked arrays of ``tree.stations()``.
    """
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=float)
    bid, pos, radius, _, _, _ = tree.stations()
    best_ratio = np.full(len(points), np.inf)
    best_station = np.zeros(len(points), dtype=np.int64)
    best_dist = np.full(len(points), np.inf)
    offset = 0
    for b in tree.branches:
        n = len(b.abscissa)
        d, j = cKDTree(b.positions).query(points)
        ratio = d / b.radius[j]
        better = ratio < best_ratio
        best_ratio[better] = ratio[better]
        best_station[better] = offset + j[better]
        best_dist[better] = d[better]
        offset += n
    bad = np.flatnonzero(best_dist > max_radius_factor * radius[best_station])
    if bad.size:
        i = int(bad[0])
        raise CenterlineMismatch(
            f"{bad.size} vertices lie farther than {max_radius_factor}x the local radius from the centreline "
            f"(first: vertex {i}, distance {best_dist[i]:.3f} mm)"
        )
    return bid[best_station], best_station
