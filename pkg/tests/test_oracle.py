import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hemofield.anatomy import Branch, CenterlineTree, build_case, sample_spec
from hemofield.mesh import INLET
from hemofield.oracle import (
    MMHG, mmhg_to_pa, pa_to_mmhg, poiseuille_gradient, pressure_along, project_fields,
    read_fields, solve_case, split_flows, write_fields,
)


def straight_branch(bid, radius, length=10.0, n=101, start=0.0, parent=None):
    s = np.linspace(start, start + length, n)
    pos = np.zeros((n, 3))
    pos[:, 2] = s
    tan = np.tile([0.0, 0.0, 1.0], (n, 1))
    r = np.full(n, float(radius))
    return Branch(bid, pos, r, r.copy(), s, tan, parent, None if parent is None else start)


def y_tree(r1, r2):
    return CenterlineTree([
        straight_branch(0, 2.0),
        straight_branch(1, r1, start=10.0, parent=0),
        straight_branch(2, r2, start=10.0, parent=0),
    ])


def test_equal_split():
    f = split_flows(y_tree(1.3, 1.3), 180.0)
    assert f[1] == f[2] == 90.0


def test_cube_law_ratio():
    f = split_flows(y_tree(2.0, 1.0), 90.0)
    assert f[1] / f[2] == pytest.approx(8.0, rel=1e-12)


def test_split_brute_force():
    f = split_flows(y_tree(1.4, 1.2), 200.0)
    w1, w2 = 1.4 * 1.4 * 1.4, 1.2 * 1.2 * 1.2
    assert f[1] == pytest.approx(200.0 * w1 / (w1 + w2), rel=1e-14)
    assert f[2] == pytest.approx(200.0 * w2 / (w1 + w2), rel=1e-14)
    assert abs(f[1] + f[2] - f[0]) <= 1e-9 * f[0]


def test_split_errors():
    t = y_tree(1.0, 1.0)
    t.branches[2].radius[-1] = 0.0
    with pytest.raises(ValueError):
        split_flows(t, 100.0)
    with pytest.raises(ValueError):
        split_flows(CenterlineTree([straight_branch(0, 1.0)]), 100.0)


def test_zero_flow():
    t = y_tree(1.4, 1.2)
    out = pressure_along(t, np.zeros(3), p_in=12000.0)
    for p in out:
        np.testing.assert_array_equal(p, 12000.0)


def test_poiseuille_closed_form():
    mu, r, L, Q = 0.004, 1.5e-3, 10e-3, 150.0 * 1e-6 / 60.0
    expected = 8 * mu * L * Q / (np.pi * r ** 4)
    t = CenterlineTree([straight_branch(0, 1.5, length=10.0)])
    p = pressure_along(t, np.array([150.0]), mu=0.004, p_in=1e4)[0]
    assert abs((1e4 - p[-1]) - expected) <= 1e-3 * expected


def test_halving_radius():
    def drop(r):
        t = CenterlineTree([straight_branch(0, r)])
        return 1e4 - pressure_along(t, np.array([100.0]), p_in=1e4)[0][-1]
    assert drop(0.75) / drop(1.5) == pytest.approx(16.0, rel=5e-3)


def test_pressure_along_errors():
    t = CenterlineTree([straight_branch(0, 1.0)])
    t.branches[0].stenosed_radius[5] = 0.0
    with pytest.raises(ValueError):
        pressure_along(t, np.array([100.0]))
    t = CenterlineTree([straight_branch(0, 1.0)])
    with pytest.raises(FloatingPointError):
        pressure_along(t, np.array([np.inf]))


def test_continuity_at_bifurcation():
    t = y_tree(1.4, 1.2)
    out = pressure_along(t, split_flows(t, 200.0), p_in=1e4)
    assert out[1][0] == pytest.approx(out[0][-1], rel=1e-14)
    assert out[2][0] == pytest.approx(out[0][-1], rel=1e-14)


def test_gradient_units():
    # 1 ml/min through r = 1 mm at 4 cP
    g = poiseuille_gradient(1.0, 1.0, 0.004)
    assert g == pytest.approx(8 * 0.004 * 1e-6 / 60 / (np.pi * 1e-12), rel=1e-14)


@pytest.fixture(scope="module")
def solved(built_case):
    spec, mesh, tree = built_case
    return spec, mesh, tree, solve_case(mesh, tree, spec.q_in, spec.p_ao)


def test_solution_invariants(solved):
    spec, mesh, tree, sol = solved
    assert sol.p_in == pytest.approx(spec.p_ao * MMHG)
    inlet = mesh.bc_tag == INLET
    np.testing.assert_array_equal(sol.pressure[inlet], sol.p_in)
    np.testing.assert_array_equal(sol.pressure_drop[inlet], 0.0)
    np.testing.assert_array_equal(sol.ffr[inlet], 1.0)
    assert (sol.pressure_drop >= 0).all()
    assert (sol.ffr > 0).all() and (sol.ffr <= 1).all()
    np.testing.assert_allclose(sol.ffr, 1 - sol.pressure_drop / sol.p_in, rtol=0, atol=1e-12)
    assert abs(sol.flows[1] + sol.flows[2] - sol.flows[0]) <= 1e-9 * sol.flows[0]
    for p in sol.station_pressure:
        assert (np.diff(p) <= 0).all()


def test_ring_means_monotone(solved):
    from hemofield.anatomy import match_stations
    _, mesh, tree, sol = solved
    branch, station = match_stations(mesh.vertices, tree)
    for b in range(3):
        on = branch == b
        ids = np.unique(station[on])
        means = [sol.ffr[station == j].mean() for j in ids]
        assert (np.diff(means) <= 1e-15).all()


def test_ffr_definition_example():
    from hemofield.primitives import tube_mesh
    mesh = tube_mesh(11, 12, radius=1.0, length=10.0)
    tree = CenterlineTree([straight_branch(0, 1.0, n=11)])
    p_in = float(mmhg_to_pa(100.0))
    stations = [np.full(11, float(mmhg_to_pa(80.0)))]
    sol = project_fields(mesh, tree, stations, p_in)
    wall = mesh.bc_tag != INLET
    np.testing.assert_allclose(sol.pressure_drop[wall], float(mmhg_to_pa(20.0)), rtol=1e-12)
    np.testing.assert_allclose(sol.ffr[wall], 0.8, atol=1e-12)
    np.testing.assert_array_equal(sol.ffr[~wall], 1.0)


def test_severity_monotone():
    base = sample_spec(21)
    drops = []
    for sev in (0.2, 0.35, 0.5):
        s = sample_spec(21)
        for les in s.lesions:
            les.severity = sev
        mesh, tree = build_case(s)
        sol = solve_case(mesh, tree, s.q_in, s.p_ao)
        drops.append([p[-1] for p in sol.station_pressure])
    b = base.lesions[0].branch_id
    out = [d[b] for d in drops]
    # lower outlet pressure means a strictly larger outlet drop
    assert out[0] > out[1] > out[2]


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e4, allow_nan=False))
def test_unit_roundtrip(p):
    assert float(pa_to_mmhg(mmhg_to_pa(p))) == pytest.approx(p, rel=1e-12)
    assert float(mmhg_to_pa(1.0)) == 133.322


def test_project_fields_mismatch(built_case):
    from hemofield.anatomy import CenterlineMismatch
    _, mesh, tree = built_case
    moved = type(mesh)(mesh.vertices + 50.0, mesh.faces, mesh.bc_tag)
    with pytest.raises(CenterlineMismatch):
        project_fields(moved, tree, pressure_along(tree, np.full(3, 100.0)), 1e4)


def test_fields_roundtrip(solved, tmp_path):
    _, _, _, sol = solved
    path = tmp_path / "fields.csv"
    write_fields(path, sol)
    lines = path.read_text().splitlines()
    assert lines[0] == "vertex_id,pressure_pa,pressure_drop_pa,ffr"
    assert lines[1].startswith("0,")
    back = read_fields(path)
    np.testing.assert_array_equal(back["pressure"], sol.pressure)
    np.testing.assert_array_equal(back["pressure_drop"], sol.pressure_drop)
    np.testing.assert_array_equal(back["ffr"], sol.ffr)


def test_fields_bad_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("a,b\n0,1\n")
    with pytest.raises(ValueError):
        read_fields(path)
    path.write_text("vertex_id,pressure_pa,pressure_drop_pa,ffr\n1,1,0,1\n")
    with pytest.raises(ValueError):
        read_fields(path)
