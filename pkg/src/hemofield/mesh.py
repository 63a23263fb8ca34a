"""Triangle surface meshes: validation, I/O and discrete operators.

Vertex positions are in millimetres. Faces are 0-based index triples in
memory and 1-based in Wavefront files. Every operator here is a pure
function of its inputs.
"""

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

WALL, INLET, OUTLET = 0, 1, 2
MIN_FACE_AREA = 1e-12
COT_CLAMP = 1e6


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant.

    ``element`` carries the offending face/vertex/edge index when known.
    """

    def __init__(self, message, element=None):
        super().__init__(message if element is None else f"{message} (element {element})")
        self.element = element


class DegenerateTriangleWarning(RuntimeWarning):
    pass


@dataclass
class SurfaceMesh:
    """Triangulated 2-manifold with boundary.

    Parameters
    ----------
    vertices : (N, 3) float array, mm
    faces : (F, 3) int array of 0-based vertex indices
    bc_tag : (N,) int array in {0, 1, 2} (wall, inlet, outlet), optional
    """

    vertices: np.ndarray
    faces: np.ndarray
    bc_tag: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (N, 3)")
        if self.bc_tag is None:
            self.bc_tag = np.zeros(len(self.vertices), dtype=np.int64)
        else:
            self.bc_tag = np.asarray(self.bc_tag, dtype=np.int64)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def validate(self, require_bc=True):
        """Check all structural invariants, raising :class:`MeshError` on the first failure."""
        n = self.n_vertices
        f = self.faces
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= n).any(axis=1))
        if bad.size:
            raise MeshError("face vertex index out of range", int(bad[0]))
        bad = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
        if bad.size:
            raise MeshError("face references repeated vertex", int(bad[0]))
        areas = face_areas(self)
        bad = np.flatnonzero(areas <= MIN_FACE_AREA)
        if bad.size:
            raise MeshError("zero-area face", int(bad[0]))
        edges, counts = _edge_census(f)
        bad = np.flatnonzero(counts > 2)
        if bad.size:
            a, b = edges[bad[0]]
            raise MeshError(f"non-manifold edge ({a}, {b}) shared by {counts[bad[0]]} faces", int(bad[0]))
        if self.bc_tag.shape != (n,):
            raise MeshError("bc_tag length does not match vertex count")
        bad = np.flatnonzero((self.bc_tag < 0) | (self.bc_tag > 2))
        if bad.size:
            raise MeshError("bc tag outside {0,1,2}", int(bad[0]))
        if require_bc:
            if not (self.bc_tag == INLET).any():
                raise MeshError("missing inlet tag")
            if not (self.bc_tag == OUTLET).any():
                raise MeshError("missing outlet tag")
        return self

    def permuted(self, perm):
        """Return the mesh with vertex ``perm[i]`` moved to position ``i``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return SurfaceMesh(self.vertices[perm], inv[self.faces], self.bc_tag[perm])

    def edges(self):
        """Unique undirected edges as an (E, 2) array with ``a < b``."""
        return _edge_census(self.faces)[0]

    def boundary_edges(self):
        edges, counts = _edge_census(self.faces)
        return edges[counts == 1]


def _edge_census(faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def boundary_loops(mesh):
    """Group boundary edges into closed loops; returns a list of vertex-index arrays."""
    be = mesh.boundary_edges()
    adj = {}
    for a, b in be:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    seen = set()
    loops = []
    for start in sorted(adj):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [v for v in adj[cur] if v != prev and v not in seen]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            seen.add(cur)
            loop.append(cur)
        loops.append(np.array(loop))
    return loops


# ---------------------------------------------------------------- I/O


def load_mesh(path, tags_path=None):
    """Read a Wavefront-style mesh plus its ``vertex_tags.csv``.

    The tags file defaults to ``vertex_tags.csv`` next to ``path``.
    """
    path = Path(path)
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                    if len(idx) != 3:
                        raise MeshError(f"line {lineno}: only triangles are supported", len(faces))
                    faces.append(idx)
            except ValueError as exc:
                if isinstance(exc, MeshError):
                    raise
                raise MeshError(f"parse failure at line {lineno}: {line.strip()!r}") from None
    tags_path = Path(tags_path) if tags_path is not None else path.with_name("vertex_tags.csv")
    if not tags_path.exists():
        raise MeshError(f"missing inlet/outlet tags: {tags_path} not found")
    tags = load_vertex_tags(tags_path, len(verts))
    mesh = SurfaceMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3), tags)
    return mesh.validate()


def load_vertex_tags(path, n_vertices):
    tags = np.zeros(n_vertices, dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["vertex_id", "bc_id"]:
            raise MeshError(f"{path}: expected header vertex_id,bc_id")
        for row in reader:
            vid = int(row["vertex_id"])
            if not 0 <= vid < n_vertices:
                raise MeshError("tag vertex index out of range", vid)
            tags[vid] = int(row["bc_id"])
    return tags


def save_mesh(mesh, path, tags_path=None):
    """Write ``mesh`` as OBJ and its tag file.

    Coordinates use the shortest repr that round-trips exactly.
    """
    path = Path(path)
    lines = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces.tolist()]
    path.write_text("".join(lines))
    tags_path = Path(tags_path) if tags_path is not None else path.with_name("vertex_tags.csv")
    rows = ["vertex_id,bc_id\n"] + [f"{i},{t}\n" for i, t in enumerate(mesh.bc_tag.tolist())]
    tags_path.write_text("".join(rows))


# ---------------------------------------------------------------- geometry


def face_normals(mesh, normalize=True):
    v = mesh.vertices
    f = mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    if normalize:
        n /= np.linalg.norm(n, axis=1, keepdims=True)
    return n


def face_areas(mesh):
    return 0.5 * np.linalg.norm(face_normals(mesh, normalize=False), axis=1)


def _corner_angles(mesh):
    v = mesh.vertices
    f = mesh.faces
    angles = np.empty(f.shape)
    for c in range(3):
        p = v[f[:, c]]
        a = v[f[:, (c + 1) % 3]] - p
        b = v[f[:, (c + 2) % 3]] - p
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles[:, c] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


def vertex_normals(mesh):
    """Angle-weighted vertex normals, unit length, oriented by face winding."""
    fn = face_normals(mesh)
    w = _corner_angles(mesh)
    n = np.zeros_like(mesh.vertices)
    for c in range(3):
        np.add.at(n, mesh.faces[:, c], fn * w[:, c:c + 1])
    norm = np.linalg.norm(n, axis=1)
    isolated = np.flatnonzero(norm == 0)
    if isolated.size:
        raise MeshError(f"isolated vertices without incident faces: {isolated[:10].tolist()}", int(isolated[0]))
    return n / norm[:, None]


def cotan_laplacian(mesh):
    """Cotangent Laplacian ``L`` (PSD, zero row sums) and barycentric lumped mass ``M``.

    Off-diagonal entries are ``-(cot a + cot b) / 2``. Cotangents are clamped to
    ``+-1e6``; each clamp emits a :class:`DegenerateTriangleWarning`.
    """
    v = mesh.vertices
    f = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    n_clamped = 0
    for c in range(3):
        i, j, k = f[:, c], f[:, (c + 1) % 3], f[:, (c + 2) % 3]
        a = v[j] - v[i]
        b = v[k] - v[i]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = np.einsum("ij,ij->i", a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = dot / cross
        bad = ~np.isfinite(cot) | (np.abs(cot) > COT_CLAMP)
        if bad.any():
            n_clamped += int(bad.sum())
            cot = np.where(np.isnan(cot), COT_CLAMP, cot)
            cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        # angle at corner i is opposite edge (j, k)
        w = -0.5 * cot
        rows += [j, k]
        cols += [k, j]
        vals += [w, w]
    if n_clamped:
        msg = f"{n_clamped} cotangent(s) clamped to +-{COT_CLAMP:g}"
        warnings.warn(msg, DegenerateTriangleWarning, stacklevel=2)
        logger.warning(msg)
    off = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    L = (off + sparse.diags(diag)).tocsr()
    areas = face_areas(mesh)
    mass = np.bincount(f.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
    M = sparse.diags(mass).tocsr()
    return L, M


def edge_graph(mesh):
    """Symmetric sparse adjacency weighted by Euclidean edge length."""
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = mesh.n_vertices
    g = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return g.tocsr()


def geodesic_to_set(mesh, seeds):
    """Dijkstra distance (mm) over the edge graph from the nearest seed vertex.

    Vertices unreachable from every seed get ``inf``.
    """
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if seeds.size == 0:
        raise ValueError("geodesic_to_set needs at least one seed")
    dist = dijkstra(edge_graph(mesh), directed=False, indices=seeds, min_only=True)
    dist[seeds] = 0.0
    n_unreached = int(np.isinf(dist).sum())
    if n_unreached:
        logger.warning("%d vertices unreachable from geodesic seeds", n_unreached)
    return dist


# ---------------------------------------------------------------- point sampling / neighbourhoods


def lexicographic_rank(points):
    """Rank of every point in (x, y, z) lexicographic order.

    Used to break exact distance ties by position instead of by row index,
    which keeps sampling and neighbourhoods independent of vertex order.
    """
    points = np.asarray(points, dtype=np.float64)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    rank = np.empty(len(points), dtype=np.int64)
    rank[order] = np.arange(len(points))
    return rank


def farthest_point_sample(points, ratio, seed=0):
    """Greedy farthest point sampling of ``ceil(ratio * N)`` indices.

    The first index is a seeded random draw; it is drawn as a rank in the
    lexicographic (x, y, z) order of the points, and equally far candidates
    are resolved by that order too, so the selected geometric points do not
    depend on how the input rows are ordered.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise ValueError("farthest_point_sample on empty point set")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    m = math.ceil(ratio * n - 1e-9)
    if m < 1:
        raise ValueError("ratio * N must be at least 1")
    rank = lexicographic_rank(points)
    start = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = int(np.flatnonzero(rank == start)[0])
    d = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d))
        ties = np.flatnonzero(d == d[nxt])
        if len(ties) > 1:
            nxt = int(ties[np.argmin(rank[ties])])
        chosen[i] = nxt
        d = np.minimum(d, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def _sorted_candidates(reference, queries, cand, rank, exclude=None):
    # exact squared distances; order by distance, then by lexicographic position
    d2 = np.sum((reference[cand] - queries[:, None, :]) ** 2, axis=2)
    if exclude is not None:
        d2 = np.where(cand == exclude[:, None], np.inf, d2)
    idx = np.argsort(rank[cand], axis=1, kind="stable")
    cand = np.take_along_axis(cand, idx, axis=1)
    d2 = np.take_along_axis(d2, idx, axis=1)
    order = np.argsort(d2, axis=1, kind="stable")
    return np.take_along_axis(cand, order, axis=1), np.take_along_axis(d2, order, axis=1)


def knn_query(reference, queries, k):
    """``k`` nearest reference points of each query (self included), ascending.

    Exact distance ties are broken by the lexicographic position of the
    reference points.
    """
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = len(reference)
    if k > n:
        raise ValueError(f"k={k} exceeds reference size {n}")
    return _knn(reference, queries, k, None)


def knn(points, k):
    """``k`` nearest neighbours of every point, self excluded, ascending, ties by position."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points {n}")
    return _knn(points, points, k, np.arange(n))


def _knn(reference, queries, k, exclude):
    n = len(reference)
    tree = cKDTree(reference)
    rank = lexicographic_rank(reference)
    kq = min(n, k + 5)
    while True:
        _, cand = tree.query(queries, k=kq)
        cand = np.asarray(cand).reshape(len(queries), kq)
        idx, d2 = _sorted_candidates(reference, queries, cand, rank, exclude)
        if kq == n:
            break
        # a tie at the k-th distance may hide equally near points outside the candidate list
        finite = np.where(np.isfinite(d2), d2, -np.inf)
        if np.all(finite.max(axis=1) > d2[:, k - 1] * (1 + 1e-9)):
            break
        kq = min(n, 2 * kq)
    return idx[:, :k]
