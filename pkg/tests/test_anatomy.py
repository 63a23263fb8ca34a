import numpy as np
import pytest

from hemofield.anatomy import (
    LESION_CLEARANCE, AnatomySpec, CenterlineMismatch, CenterlineTree, build_case, expected_vertex_count,
    match_stations, radius_profile, sample_spec,
)
from hemofield.mesh import INLET, OUTLET, boundary_loops, save_mesh


def test_sample_spec_deterministic():
    a, b = sample_spec(42), sample_spec(42)
    assert a.to_dict() == b.to_dict()
    assert sample_spec(43).to_dict() != a.to_dict()


@pytest.fixture(scope="module")
def many_specs():
    return [sample_spec(s) for s in range(1000)]


def test_boundary_condition_ranges(many_specs):
    q = np.array([s.q_in for s in many_specs])
    p = np.array([s.p_ao for s in many_specs])
    assert q.min() >= 100 and q.max() <= 300
    assert 190 <= q.mean() <= 210
    assert p.min() >= 90 and p.max() <= 110


def test_lesion_count_frequencies(many_specs):
    counts = np.bincount([len(s.lesions) for s in many_specs], minlength=4)
    assert counts[0] == 0
    freq = counts[1:] / len(many_specs)
    np.testing.assert_allclose(freq, 1 / 3, atol=0.05)


def test_spec_invariants(many_specs):
    for s in many_specs:
        assert 1 <= len(s.lesions) <= 3
        assert all(0.2 <= les.severity <= 0.6 for les in s.lesions)
        assert all(0 <= les.eccentricity <= 1 for les in s.lesions)
        assert max(s.daughter_radii) < s.parent_radius
        assert min(s.daughter_radii + (s.parent_radius,)) > 0.5
        for les in s.lesions:
            lo, hi = s.branch_extent(les.branch_id)
            assert les.start >= lo + LESION_CLEARANCE - 1e-9
            assert les.end <= hi - LESION_CLEARANCE + 1e-9
        for b in range(3):
            on = sorted((les for les in s.lesions if les.branch_id == b), key=lambda les: les.start)
            for x, y in zip(on, on[1:]):
                assert x.end <= y.start + 1e-9


def test_spec_roundtrip():
    s = sample_spec(7)
    assert AnatomySpec.from_dict(s.to_dict()).to_dict() == s.to_dict()


def _one_lesion_spec(severity, ecc=0.0):
    s = sample_spec(3)
    lo, hi = s.lesion_window(1)
    from hemofield.anatomy import LesionSpec
    s.lesions = [LesionSpec(1, 0.5 * (lo + hi), 5.0, severity, ecc, 0.3)]
    return s


def test_profile_outside_lesions():
    s = _one_lesion_spec(0.5)
    h, r, off = radius_profile(s, 0, np.linspace(0, s.parent_length, 7))
    np.testing.assert_array_equal(h, r)
    assert not off.any()


def test_profile_lesion_center():
    s = _one_lesion_spec(0.5)
    c = s.lesions[0].center_abscissa
    h, r, _ = radius_profile(s, 1, c)
    assert r == pytest.approx(0.5 * h, abs=1e-12)


def test_profile_minimum_closed_form():
    s = _one_lesion_spec(0.2)
    les = s.lesions[0]
    x = np.linspace(les.start, les.end, 20001)
    h, r, _ = radius_profile(s, 1, x)
    i = np.argmin(r / h)
    # the minimum of (1 - d cos^2) is attained at the centre sample
    assert abs(x[i] - les.center_abscissa) < 1e-3
    assert (r / h).min() == pytest.approx(0.8, abs=1e-9)


def test_profile_eccentric_offset():
    s = _one_lesion_spec(0.4, ecc=0.5)
    les = s.lesions[0]
    h, _, off = radius_profile(s, 1, les.center_abscissa)
    assert np.linalg.norm(off) == pytest.approx(0.5 * 0.4 * h, rel=1e-12)


def test_profile_outside_branch():
    with pytest.raises(ValueError):
        radius_profile(sample_spec(0), 0, -1.0)


def test_zero_severity_case():
    s = sample_spec(11)
    for les in s.lesions:
        les.severity = 0.0
    mesh, tree = build_case(s)
    for b in tree.branches:
        np.testing.assert_array_equal(b.stenosed_radius, b.radius)


def test_mesh_structure(built_case):
    spec, mesh, tree = built_case
    mesh.validate()
    assert 2000 <= mesh.n_vertices <= 6000
    assert mesh.n_vertices == expected_vertex_count(spec)
    loops = boundary_loops(mesh)
    assert len(loops) == 3
    boundary = np.concatenate(loops)
    assert (mesh.bc_tag[boundary] > 0).all()
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary)
    assert (mesh.bc_tag[interior] == 0).all()
    tags = sorted(int(mesh.bc_tag[loop[0]]) for loop in loops)
    assert tags == [INLET, OUTLET, OUTLET]


def test_watertight_edges(built_case):
    _, mesh, _ = built_case
    e = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    n_boundary_vertices = sum(len(loop) for loop in boundary_loops(mesh))
    assert (counts == 1).sum() == n_boundary_vertices


def test_outward_normals(built_case):
    from hemofield.mesh import vertex_normals
    _, mesh, tree = built_case
    branch, station = match_stations(mesh.vertices, tree)
    _, pos, *_ = tree.stations()
    n = vertex_normals(mesh)
    radial = mesh.vertices - pos[station]
    assert (np.sum(n * radial, axis=1) > 0).mean() > 0.99


def test_centerline_invariants(built_case):
    spec, _, tree = built_case
    lp = spec.parent_length
    for b in tree.branches:
        assert (np.diff(b.abscissa) > 0).all()
        assert (b.stenosed_radius <= b.radius + 1e-12).all()
        np.testing.assert_allclose(np.linalg.norm(b.tangent, axis=1), 1.0, atol=1e-12)
        inside = np.zeros(len(b.abscissa), dtype=bool)
        for les in tree.lesions:
            if les.branch_id == b.branch_id:
                inside |= (b.abscissa > les.start) & (b.abscissa < les.end)
        np.testing.assert_array_equal(b.stenosed_radius[~inside], b.radius[~inside])
        if b.branch_id > 0:
            assert b.abscissa[0] == pytest.approx(lp)
            assert b.parent_branch == 0 and b.attach_abscissa == pytest.approx(lp)
    assert tree.branches[0].abscissa[0] == 0.0


def test_ring_centroids_follow_centerline(built_case):
    spec, mesh, tree = built_case
    branch, station = match_stations(mesh.vertices, tree)
    bid, pos, radius, _, gamma, _ = tree.stations()
    checked = 0
    for j in np.unique(station):
        b = bid[j]
        lo, hi = spec.branch_extent(b)
        # concentric, away from the junction blend
        if b == 0 and gamma[j] > spec.parent_length - 2.0:
            continue
        if b > 0 and gamma[j] < lo + spec.blend_length(b):
            continue
        if any(les.branch_id == b and les.start - 0.5 <= gamma[j] <= les.end + 0.5 and les.eccentricity > 0
               for les in tree.lesions):
            continue
        ring = mesh.vertices[station == j]
        if len(ring) < spec_segments(mesh, tree):
            continue
        assert np.linalg.norm(ring.mean(axis=0) - pos[j]) < 0.1 * radius[j]
        checked += 1
    assert checked > 50


def spec_segments(mesh, tree):
    return int((mesh.bc_tag == INLET).sum())


def test_lesion_annotations_match_profile(built_case):
    _, _, tree = built_case
    for les in tree.lesions:
        b = tree.branches[les.branch_id]
        inside = (b.abscissa >= les.start) & (b.abscissa <= les.end)
        ratio = b.stenosed_radius[inside] / b.radius[inside]
        j = np.argmin(ratio)
        # the narrowest station lies at most one ring spacing from the centre
        spacing = np.diff(b.abscissa).max()
        assert abs(b.abscissa[inside][j] - les.center_abscissa) <= spacing
        assert ratio.min() <= 1 - les.severity * np.cos(np.pi * spacing / les.length) ** 2 + 1e-9


def test_build_deterministic(case_spec, tmp_path):
    blobs = []
    for i in range(2):
        mesh, tree = build_case(case_spec)
        save_mesh(mesh, tmp_path / f"m{i}.obj", tmp_path / f"t{i}.csv")
        blobs.append(((tmp_path / f"m{i}.obj").read_bytes(), tree.to_json()))
    assert blobs[0] == blobs[1]


def test_centerline_json_roundtrip(built_case):
    _, _, tree = built_case
    back = CenterlineTree.from_json(tree.to_json())
    for a, b in zip(tree.branches, back.branches):
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.stenosed_radius, b.stenosed_radius)
        np.testing.assert_array_equal(a.abscissa, b.abscissa)
    assert [les.__dict__ for les in back.lesions] == [les.__dict__ for les in tree.lesions]


def test_density_too_low_for_lesion():
    with pytest.raises(ValueError):
        build_case(sample_spec(1), rings_per_mm=0.1)


def test_match_stations_far_point(built_case):
    _, _, tree = built_case
    with pytest.raises(CenterlineMismatch):
        match_stations(np.array([[100.0, 100.0, 100.0]]), tree)


def test_dense_high_severity_warns_or_builds():
    # steep eccentric lesions are damped rather than folding the surface
    from hemofield.anatomy import LesionSpec
    s = sample_spec(5)
    lo, hi = s.lesion_window(2)
    s.lesions = [LesionSpec(2, 0.5 * (lo + hi), 3.0, 0.6, 1.0, 0.0)]
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mesh, _ = build_case(s, rings_per_mm=6.0)
    mesh.validate()
