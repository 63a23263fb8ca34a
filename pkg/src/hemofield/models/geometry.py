"""Geometry side inputs shared by the models: tangent frames and gradient stencils."""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..mesh import SurfaceMesh, cotan_laplacian, knn_query, vertex_normals
from ..spectral import eigendecompose


@dataclass
class CaseGeometry:
    """Positions and normals of one case; faces and the spectral basis are optional."""

    positions: np.ndarray
    normals: np.ndarray
    faces: np.ndarray | None = None
    _basis: object = field(default=None, repr=False)

    @classmethod
    def from_mesh(cls, mesh, basis=None):
        return cls(mesh.vertices, vertex_normals(mesh), mesh.faces, basis)

    @property
    def n(self):
        return len(self.positions)

    def basis(self, k):
        if self._basis is None or self._basis.k < min(k, self.n):
            if self.faces is None:
                raise ValueError("spectral basis missing and no faces to compute it from")
            L, M = cotan_laplacian(SurfaceMesh(self.positions, self.faces))
            self._basis = eigendecompose(L, M, min(k, self.n))
        return self._basis

    def permuted(self, perm):
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        faces = None if self.faces is None else inv[self.faces]
        basis = None if self._basis is None else self._basis.permuted(perm)
        return CaseGeometry(self.positions[perm], self.normals[perm], faces, basis)


SNAP = 1e-9  # mm


def sampling_frame(positions):
    """Centred coordinates snapped to a ``SNAP`` grid for building point hierarchies.

    Farthest-point and nearest-neighbour choices on regular meshes hinge on
    exact distance ties; deciding them on snapped centred coordinates makes
    the hierarchy independent of translation round-off.
    """
    p = np.asarray(positions, dtype=float)
    return np.round((p - p.mean(axis=0)) / SNAP) * SNAP


def tangent_frames(normals):
    """Orthonormal (e1, e2) per vertex completing the unit normal to a right-handed frame.

    ``e1`` is the normalised projection of the coordinate axis least aligned
    with the normal.
    """
    n = np.asarray(normals, dtype=float)
    norm = np.linalg.norm(n, axis=1)
    if np.any(norm < 1e-12):
        raise ValueError(f"degenerate tangent basis: zero normal at vertex {int(np.argmin(norm))}")
    n = n / norm[:, None]
    axis = np.zeros_like(n)
    axis[np.arange(len(n)), np.argmin(np.abs(n), axis=1)] = 1.0
    e1 = axis - np.sum(axis * n, axis=1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


def lsq_gradient(points, normals, neighbors):
    """Sparse (2N, N) operator from a scalar field to its tangent gradient.

    Row ``2i + a`` holds component ``a`` (along ``e_a``) at point ``i``, fitted
    by least squares to the differences ``f_j - f_i`` over ``neighbors[i]``.
    """
    points = np.asarray(points, dtype=float)
    e1, e2 = tangent_frames(normals)
    n, k = neighbors.shape
    d = points[neighbors] - points[:, None, :]  # (n, k, 3)
    D = np.stack([np.einsum("nkc,nc->nk", d, e1), np.einsum("nkc,nc->nk", d, e2)], axis=2)  # (n, k, 2)
    DtD = np.einsum("nka,nkb->nab", D, D)
    scale = np.trace(DtD, axis1=1, axis2=2)[:, None, None]
    DtD = DtD + 1e-10 * scale * np.eye(2)
    P = np.linalg.solve(DtD, np.swapaxes(D, 1, 2))  # (n, 2, k): gradient = P @ (f_j - f_i)
    rows = np.repeat(np.arange(2 * n), k)
    cols = np.repeat(neighbors[:, None, :], 2, axis=1).ravel()
    vals = P.ravel()
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * n, n))
    diag = sparse.csr_matrix((-P.sum(axis=2).ravel(), (np.arange(2 * n), np.repeat(np.arange(n), 2))),
                             shape=(2 * n, n))
    return (G + diag).tocsr()


def inverse_distance_3nn(source, target, eps=1e-12):
    """Indices and normalised inverse-distance weights of the 3 nearest source points of each target."""
    k = min(3, len(source))
    idx = knn_query(source, target, k)
    d = np.linalg.norm(source[idx] - target[:, None, :], axis=2)
    w = 1.0 / (d + eps)
    exact = d[:, 0] < eps
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return idx, w / w.sum(axis=1, keepdims=True)
