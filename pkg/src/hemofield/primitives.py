"""Simple analytic meshes used for checks and as building blocks."""

import numpy as np

from .mesh import INLET, OUTLET, SurfaceMesh


def ring_band_faces(ring_a, ring_b):
    """Triangles joining two rings with equal vertex counts.

    Both rings must run counter-clockwise about the direction from ``ring_a``
    to ``ring_b``; the resulting normals then point away from the axis.
    """
    a = np.asarray(ring_a)
    b = np.asarray(ring_b)
    a1 = np.roll(a, -1)
    b1 = np.roll(b, -1)
    t1 = np.stack([a, a1, b1], axis=1)
    t2 = np.stack([a, b1, b], axis=1)
    return np.stack([t1, t2], axis=1).reshape(-1, 3)


def tube_mesh(n_rings, n_segments, radius=1.0, length=10.0, tag_ends=True):
    """Open cylinder along +z, ``n_rings`` rings of ``n_segments`` vertices.

    The first ring is tagged inlet and the last outlet when ``tag_ends`` is set.
    """
    z = np.linspace(0.0, length, n_rings)
    theta = 2 * np.pi * np.arange(n_segments) / n_segments
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n_segments)], axis=1)
    verts = np.concatenate([ring + [0.0, 0.0, zi] for zi in z])
    idx = np.arange(n_rings * n_segments).reshape(n_rings, n_segments)
    faces = np.concatenate([ring_band_faces(idx[r], idx[r + 1]) for r in range(n_rings - 1)])
    tags = np.zeros(len(verts), dtype=np.int64)
    if tag_ends:
        tags[idx[0]] = INLET
        tags[idx[-1]] = OUTLET
    return SurfaceMesh(verts, faces, tags)


def grid_patch(n, size=1.0):
    """Flat square ``[0, size]^2`` in the z=0 plane with ``n x n`` vertices, CCW winding."""
    xs = np.linspace(0.0, size, n)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(n * n)], axis=1)
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return SurfaceMesh(verts, faces)


def icosphere(subdivisions=3, radius=1.0):
    """Subdivided icosahedron; 3 subdivisions give 642 vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return SurfaceMesh(radius * np.array(verts), np.array(faces))
