import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csim.flow import trajectory
from csim.simplex import (
    BarycentricMesh,
    RadialGraph,
    backward_side,
    c1_diagnostic,
    export_graph,
    face_consistency_check,
    hull_check,
    invariance_residual,
    radial_excess,
    read_graph_csv,
    reconstruct_sigma,
    surface_distance,
    unorderedness_check,
)
from csim.sysmodel import MayLeonardSystem, restrict_to_face, weak_coupling_lv


@pytest.fixture(scope="module")
def graph10():
    return reconstruct_sigma(weak_coupling_lv(), 10)


@pytest.mark.parametrize("n,m,rows", [(3, 1, 3), (3, 2, 6), (3, 40, 861), (4, 3, 20), (2, 5, 6)])
def test_mesh_counts(n, m, rows):
    mesh = BarycentricMesh(n, m)
    assert len(mesh) == rows == math.comb(m + n - 1, n - 1)
    np.testing.assert_allclose(mesh.points.sum(axis=1), 1, atol=1e-14)
    assert mesh.points.min() >= 0
    assert len(mesh.cells()) == m ** (n - 1)


@given(st.integers(2, 4), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_locate_reproduces_points(n, m, seed):
    mesh = BarycentricMesh(n, m)
    U = np.random.default_rng(seed).dirichlet(np.ones(n), size=20)
    idx, w = mesh.locate(U)
    assert np.all(w >= -1e-12)
    np.testing.assert_allclose(w.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.einsum("kj,kjn->kn", w, mesh.points[idx]), U, atol=1e-12)


def test_constant_graph_is_exact():
    mesh = BarycentricMesh(3, 7)
    g = RadialGraph(mesh, np.full(len(mesh), 2.0))
    U = np.random.default_rng(0).dirichlet(np.ones(3), size=50)
    np.testing.assert_allclose(g.radius_at(U), 2.0, atol=1e-14)
    np.testing.assert_allclose(surface_distance(g, 2.0 * U), 0, atol=1e-12)


def test_unorderedness_synthetic():
    mesh = BarycentricMesh(3, 6)
    g = RadialGraph(mesh, np.full(len(mesh), 1.5))
    assert unorderedness_check(g) == []
    i = mesh.index[(2, 2, 2)]
    j = mesh.index[(3, 2, 1)]
    radii = g.radii.copy()
    radii[i] = 4.0
    pairs = unorderedness_check(RadialGraph(mesh, radii))
    assert (j, i) in pairs


def test_c1_diagnostic_synthetic():
    flat = RadialGraph(BarycentricMesh(3, 10), np.ones(66))
    assert c1_diagnostic(flat).max_angle == pytest.approx(0.0, abs=1e-7)
    angles = []
    for m in (8, 16, 32):
        mesh = BarycentricMesh(3, m)
        crease = RadialGraph.from_function(mesh, lambda u: 1 + abs(u[0] - u[1]))
        angles.append(c1_diagnostic(crease).max_angle)
    assert min(angles) > 0.5 * max(angles) > 0.1
    with pytest.raises(ValueError):
        c1_diagnostic(RadialGraph(BarycentricMesh(3, 4), np.ones(15)))


def test_csv_round_trip(tmp_path, graph10):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    export_graph(graph10, a)
    export_graph(graph10, b)
    assert a.read_bytes() == b.read_bytes()
    back = read_graph_csv(a)
    np.testing.assert_array_equal(back.radii, graph10.radii)
    np.testing.assert_array_equal(back.mesh.ints, graph10.mesh.ints)
    np.testing.assert_array_equal(back.bracket_width, graph10.bracket_width)
    lines = a.read_text().splitlines()
    assert lines[0] == "b1,b2,b3,r,x1,x2,x3,bracket_width"
    row = [float(v) for v in lines[1].split(",")]
    np.testing.assert_allclose(row[4:7], row[3] * np.array(row[:3]) / 10)


def test_csv_small_mesh(tmp_path):
    g = RadialGraph(BarycentricMesh(3, 1), np.ones(3))
    export_graph(g, tmp_path / "s.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 4


def test_csv_rejects_foreign_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("b1,b2,r,x1,x2,bracket_width\n1,0,1,1,0,0\n1,0,1,1,0,0\n")
    with pytest.raises(ValueError):
        read_graph_csv(p)


def test_weak_lv_coarse_reconstruction(graph10):
    g = graph10
    mesh = g.mesh
    for i, e in enumerate(np.eye(3, dtype=int)):
        assert g.radii[mesh.index[tuple(10 * e)]] == pytest.approx(1.0, abs=1e-6)
    assert g.radii[mesh.index[(5, 5, 0)]] == pytest.approx(2 / 1.1, abs=1e-6)
    assert g.radius_at([1 / 3, 1 / 3, 1 / 3])[0] == pytest.approx(2.5, abs=1e-6)
    assert np.max(g.bracket_width) < 1e-5
    assert unorderedness_check(g) == []


def test_reconstruction_matches_orbit_truth_in_two_dimensions():
    # the curve is made of the heteroclinic orbits from the axial points to (1/1.1, 1/1.1)
    s = restrict_to_face(weak_coupling_lv(), (2,))
    g = reconstruct_sigma(s, 20)
    v = np.array([-0.1 / 1.9, 1.0])
    tr = trajectory(s, np.array([1.0, 0.0]) + 1e-7 * v, 40.0, 0.01)
    Q = tr.states[tr.states.sum(axis=1) > 1.0 + 1e-4]
    u1, r = Q[:, 0] / Q.sum(axis=1), Q.sum(axis=1)
    order = np.argsort(u1)
    nodes = (g.mesh.points[:, 0] >= u1.min()) & (g.mesh.points[:, 0] <= u1.max())
    assert nodes.sum() >= 9
    truth = np.interp(g.mesh.points[nodes, 0], u1[order], r[order])
    assert np.abs(truth - g.radii[nodes]).max() < 1e-4


def test_scaled_system_has_same_surface():
    s = weak_coupling_lv()
    g1 = reconstruct_sigma(s, 6)
    g2 = reconstruct_sigma(s.scaled(3.0), 6)
    np.testing.assert_allclose(g1.radii, g2.radii, atol=1e-6)


def test_invariance_residual_properties(graph10):
    s = weak_coupling_lv()
    res = invariance_residual(graph10, s, 0.1)
    vertex = graph10.mesh.index[(10, 0, 0)]
    assert res.per_point[vertex] < 1e-8
    small = invariance_residual(graph10, s, 0.02)
    assert small.max < 0.5 * res.max


def test_invariance_residual_refines():
    s = weak_coupling_lv()
    r10 = invariance_residual(reconstruct_sigma(s, 10), s).max
    r20 = invariance_residual(reconstruct_sigma(s, 20), s).max
    assert r20 <= 1.2 * r10


def test_face_consistency(graph10):
    faces = face_consistency_check(graph10, weak_coupling_lv())
    assert len(faces) == 6
    for f in faces:
        assert f.max_discrepancy < 1e-3
        if len(f.face) == 1:
            assert f.face_bound_holds


def test_hull_check(graph10):
    s = weak_coupling_lv()
    res = hull_check(graph10, s, samples=30, T=60.0, T_extra=10.0, box=3.0)
    assert res.holds and res.entered == res.remained == 30
    assert radial_excess(graph10, np.zeros((1, 3)))[0] == -np.inf
    on = graph10.points()[5:6]
    assert radial_excess(graph10, on)[0] == pytest.approx(0.0, abs=1e-12)


def test_backward_side_classifies(graph10):
    s = weak_coupling_lv()
    u = np.array([0.2, 0.3, 0.5])
    r = graph10.radius_at(u)[0]
    assert backward_side(s, np.array([0.9 * r * u]), 0.02, 6.0)[0] == -1
    assert backward_side(s, np.array([1.1 * r * u]), 0.02, 6.0)[0] == 1


def test_may_leonard_reconstruction():
    s = MayLeonardSystem(1.4, 0.9)
    g = reconstruct_sigma(s, 12)
    assert g.radius_at([1 / 3, 1 / 3, 1 / 3])[0] == pytest.approx(3 / 3.3, abs=1e-6)
    for e in np.eye(3, dtype=int):
        assert g.radii[g.mesh.index[tuple(12 * e)]] == pytest.approx(1.0, abs=1e-6)
    assert unorderedness_check(g) == []
    assert invariance_residual(g, s).max < 1e-3


def test_weak_lv_refinement_regression():
    # frozen regression values: adjacent-normal angle and invariance residual at m = 10, 20, 40
    s = weak_coupling_lv()
    angles, residuals = [], []
    for m in (10, 20, 40):
        g = reconstruct_sigma(s, m)
        angles.append(c1_diagnostic(g).max_angle)
        residuals.append(invariance_residual(g, s).max)
    np.testing.assert_allclose(angles, [0.94297, 0.89989, 0.83372], rtol=1e-3)
    np.testing.assert_allclose(residuals, [6.972e-3, 6.145e-3, 5.392e-3], rtol=1e-3)
    assert angles[0] > angles[1] > angles[2]
    assert residuals[0] > residuals[1] > residuals[2]
