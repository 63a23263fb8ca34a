"""Per-lesion minima of a vertex field."""

from dataclasses import asdict, dataclass

import numpy as np

from ..anatomy import match_stations

VFFR_CEILING = 1.05


@dataclass
class LesionRecord:
    case_id: str
    lesion_id: int
    branch: int
    severity: float
    pred_min: float
    gt_min: float
    n_vertices: int
    overshoot: bool = False

    def to_dict(self):
        return asdict(self)


def vertex_branch_abscissa(case):
    """Branch id and centreline abscissa of the nearest station, per vertex."""
    cached = getattr(case, "_branch_abscissa", None)
    if cached is None:
        branch, station = match_stations(case.mesh.vertices, case.tree)
        abscissa = case.tree.stations()[4][station]
        cached = (branch, abscissa)
        case._branch_abscissa = cached
    return cached


def lesion_masks(case):
    """One boolean vertex mask per annotated lesion, in annotation order."""
    branch, gamma = vertex_branch_abscissa(case)
    masks = []
    for i, les in enumerate(case.lesions):
        m = (branch == les.branch_id) & (gamma >= les.start) & (gamma <= les.end)
        if not m.any():
            raise ValueError(f"{case.case_id}: lesion {i} interval "
                             f"[{les.start:.3f}, {les.end:.3f}] on branch {les.branch_id} holds no vertices")
        masks.append(m)
    return masks


def lesion_minima(case, field):
    field = np.asarray(field, dtype=float).ravel()
    if field.size != case.mesh.n_vertices:
        raise ValueError("field length does not match the mesh")
    return [float(field[m].min()) for m in lesion_masks(case)]


def lesion_min_vffr(case, pred, gt=None):
    """Lesion records comparing the minimum predicted and reference vFFR inside each lesion.

    ``gt`` defaults to the case's ground-truth ffr field. Values above
    ``VFFR_CEILING`` or non-positive are flagged as overshoot rather than dropped.
    """
    gt = case.fields["ffr"] if gt is None else gt
    pred_min = lesion_minima(case, pred)
    gt_min = lesion_minima(case, gt)
    masks = lesion_masks(case)
    records = []
    for i, (les, p, g, m) in enumerate(zip(case.lesions, pred_min, gt_min, masks)):
        over = not (0.0 < p <= VFFR_CEILING and 0.0 < g <= VFFR_CEILING)
        records.append(LesionRecord(case.case_id, i, int(les.branch_id), float(les.severity),
                                    p, g, int(m.sum()), over))
    return records
