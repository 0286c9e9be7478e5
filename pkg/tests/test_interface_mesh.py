import numpy as np
import pytest

from iimflow import (
    BasisKind,
    BasisSpec,
    InterfaceMesh,
    SurfaceField,
    build_polyline,
    element_normal,
    element_stretch,
    eval_field,
    gauss_rule,
    project,
    quad_points,
)
from iimflow.interface_mesh import read_mesh_text, write_mesh_text

SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def unit_circle_mesh(n=64, diameter=1.0):
    th = 2 * np.pi * np.arange(n) / n
    r = diameter / 2
    return build_polyline(np.column_stack((r * np.cos(th), r * np.sin(th))),
                          target_h=10.0, closed=True)


def test_build_square_subdivision():
    mesh = build_polyline(SQUARE, target_h=0.5, closed=True)
    assert mesh.num_nodes == 8
    assert mesh.num_elements == 8
    for corner in SQUARE:
        d = np.linalg.norm(mesh.ref_nodes - np.array(corner), axis=1)
        assert d.min() < 1e-14


def test_build_circle_keeps_vertices():
    mesh = unit_circle_mesh(64)
    assert mesh.num_elements == 64


def test_build_open_segment():
    mesh = build_polyline([(0.0, 0.0), (1.0, 0.0)], target_h=0.3)
    assert mesh.num_elements == 4
    assert np.allclose(mesh.ref_lengths(), 0.25)
    assert not mesh.closed


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_polyline([(0, 0), (1, 0), (1, 0), (0, 1)], target_h=0.5)
    bowtie = [(0, 0), (1, 1), (1, 0), (0, 1)]
    with pytest.raises(ValueError):
        build_polyline(bowtie, target_h=10.0, closed=True)


def test_build_reorients_clockwise_input():
    mesh = build_polyline(SQUARE[::-1], target_h=10.0, closed=True)
    assert mesh.signed_area() > 0


def test_element_normals_on_square():
    mesh = build_polyline(SQUARE, target_h=10.0, closed=True)
    # bottom (0,0)->(1,0), right, top, left in CCW order
    assert np.allclose(element_normal(mesh, 0), [0.0, -1.0])
    assert np.allclose(element_normal(mesh, 1), [1.0, 0.0])
    assert np.allclose(element_normal(mesh, 2), [0.0, 1.0])
    assert np.allclose(element_normal(mesh, 3), [-1.0, 0.0])


def test_element_normal_diagonal():
    mesh = build_polyline([(0.0, 0.0), (1.0, 1.0)], target_h=10.0)
    assert np.allclose(element_normal(mesh, 0),
                       [np.sqrt(2) / 2, -np.sqrt(2) / 2])


def test_closed_mesh_normal_sum_vanishes():
    mesh = unit_circle_mesh(37)
    total = (mesh.lengths()[:, None] * mesh.normals()).sum(axis=0)
    assert np.abs(total).max() < 1e-12


def test_element_stretch():
    mesh = build_polyline(SQUARE, target_h=0.5, closed=True)
    assert np.allclose(mesh.stretches(), 1.0)
    scaled = mesh.with_current(2.0 * mesh.ref_nodes)
    assert np.allclose(scaled.stretches(), 2.0)
    assert element_stretch(scaled, 3) == pytest.approx(2.0)
    shifted = mesh.with_current(mesh.ref_nodes + [0.3, -0.7])
    assert np.allclose(shifted.stretches(), 1.0)


def test_quad_weights_partition_lengths():
    mesh = build_polyline([(0.0, 0.0), (1.0, 0.0)], target_h=2.0)
    _, _, _, w = quad_points(mesh)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)

    circle = unit_circle_mesh(64)
    _, _, _, w = quad_points(circle)
    perimeter = circle.lengths().sum()
    assert w.sum() == pytest.approx(perimeter, abs=1e-12)
    assert perimeter < np.pi  # inscribed polygon


def test_quad_degree7_exactness():
    rule = gauss_rule()
    for k in range(8):
        val = np.sum(rule.weights * rule.points**k)
        assert val == pytest.approx(1.0 / (k + 1), abs=1e-13)


def test_quad_integrates_cubic():
    mesh = build_polyline([(0.0, 0.0), (1.0, 0.0)], target_h=2.0)
    _, s, xy, w = quad_points(mesh)
    assert np.sum(w * xy[:, 0] ** 3) == pytest.approx(0.25, abs=1e-14)


def test_project_constant_both_bases():
    mesh = unit_circle_mesh(16)
    for kind in (BasisKind.CG, BasisKind.DG):
        f = project(mesh, kind, lambda e, s: np.full_like(s, 5.0))
        assert np.allclose(f.coeffs, 5.0, atol=1e-12)


def _three_element_line():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    elems = np.array([[0, 1], [1, 2], [2, 3]])
    return InterfaceMesh(nodes, elems)


def _jump_sampler(e, s):
    # f = x on elements 0,1 and x + 2 on element 2: jump of 2 at node x=2
    x = e + s
    return x + np.where(e == 2, 2.0, 0.0)


def test_dg_projection_reproduces_discontinuous_affine():
    mesh = _three_element_line()
    f = project(mesh, BasisKind.DG, _jump_sampler)
    expected = np.array([0.0, 1.0, 1.0, 2.0, 4.0, 5.0])
    assert np.allclose(f.coeffs[:, 0], expected, atol=1e-12)
    # one-sided limits at the shared node x=2, from the two incident elements
    assert eval_field(f, mesh, 1, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert eval_field(f, mesh, 2, 0.0) == pytest.approx(4.0, abs=1e-12)


def test_cg_projection_matches_hand_assembled_system():
    # oracle: dense mass matrix and exact rhs of the 3-element chain,
    # solved with plain numpy (frozen values below)
    mesh = _three_element_line()
    f = project(mesh, BasisKind.CG, _jump_sampler)
    M = np.array([
        [1 / 3, 1 / 6, 0, 0],
        [1 / 6, 2 / 3, 1 / 6, 0],
        [0, 1 / 6, 2 / 3, 1 / 6],
        [0, 0, 1 / 6, 1 / 3],
    ])
    b = np.zeros(4)
    for e in range(3):
        off = 2.0 if e == 2 else 0.0
        b[e] += (e + off) / 2 + 1 / 6
        b[e + 1] += (e + off) / 2 + 1 / 3
    oracle = np.linalg.solve(M, b)
    assert np.allclose(oracle, [0.13333333, 0.73333333, 2.93333333, 5.53333333],
                       atol=1e-7)
    assert np.allclose(f.coeffs[:, 0], oracle, atol=1e-12)
    # the coefficient at the jump node lies between the one-sided limits 2 and 4
    assert 2.0 < f.coeffs[2, 0] < 4.0


def test_projection_preserves_integral():
    mesh = unit_circle_mesh(24)
    _, _, xy, w = quad_points(mesh, use_current=False)

    def sampler(e, s):
        p = mesh.points_at(e, s, use_current=False)
        return np.sin(3 * p[:, 0]) + p[:, 1] ** 2

    target = np.sum(w * (np.sin(3 * xy[:, 0]) + xy[:, 1] ** 2))
    for kind in (BasisKind.CG, BasisKind.DG):
        f = project(mesh, kind, sampler)
        elems, s, _, wq = quad_points(mesh, use_current=False)
        total = np.sum(wq * f.eval(mesh, elems, s)[:, 0])
        assert total == pytest.approx(target, rel=1e-10)


def test_cg_error_at_jump_persists_under_refinement():
    # sampler with a unit jump at x=1 on a refining open chain: the CG
    # nodal value at the jump stays a fixed fraction of the jump away
    # from both one-sided limits
    for n in (4, 8, 16, 32):
        nodes = np.column_stack((np.linspace(0, 2, 2 * n + 1),
                                 np.zeros(2 * n + 1)))
        elems = np.column_stack((np.arange(2 * n), np.arange(1, 2 * n + 1)))
        mesh = InterfaceMesh(nodes, elems)
        h = 1.0 / n

        def sampler(e, s):
            x = (e + s) * h
            return np.where(x >= 1.0 - 1e-12, 1.0, 0.0)

        f = project(mesh, BasisKind.CG, sampler)
        err = abs(f.coeffs[n, 0] - 0.0)  # against the left limit
        assert min(err, abs(f.coeffs[n, 0] - 1.0)) >= 0.25


def test_cg_dg_agree_for_smooth_sampler_under_refinement():
    def gap(n):
        mesh = unit_circle_mesh(n)

        def sampler(e, s):
            p = mesh.points_at(e, s, use_current=False)
            return np.cos(np.arctan2(p[:, 1], p[:, 0]))

        cg = project(mesh, BasisKind.CG, sampler)
        dg = project(mesh, BasisKind.DG, sampler)
        elems, s, _, _ = quad_points(mesh)
        return np.abs(cg.eval(mesh, elems, s) - dg.eval(mesh, elems, s)).max()

    gaps = [gap(n) for n in (16, 32, 64, 128)]
    rates = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(rates >= 1.0)


def test_eval_field_dg_midpoint_and_cg_endpoint():
    mesh = build_polyline([(0.0, 0.0), (1.0, 0.0)], target_h=2.0)
    dg = SurfaceField(BasisSpec.for_mesh(mesh, BasisKind.DG), np.array([2.0, 4.0]))
    assert eval_field(dg, mesh, 0, 0.5) == pytest.approx(3.0)
    cg = SurfaceField(BasisSpec.for_mesh(mesh, BasisKind.CG), np.array([7.0, 9.0]))
    assert eval_field(cg, mesh, 0, 0.0) == pytest.approx(7.0)
    with pytest.raises(ValueError):
        eval_field(cg, mesh, 0, 1.5)


def test_mesh_text_roundtrip(tmp_path):
    mesh = build_polyline(SQUARE, target_h=0.5, closed=True)
    path = tmp_path / "square.txt"
    write_mesh_text(mesh, path)
    back = read_mesh_text(path)
    assert back.closed
    assert np.allclose(back.ref_nodes, mesh.ref_nodes)
    assert np.array_equal(back.elements, mesh.elements)


def test_closed_mesh_validation():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        InterfaceMesh(nodes, [[0, 1], [1, 2]], closed=True)
    with pytest.raises(ValueError):
        InterfaceMesh(nodes, [[0, 1], [1, 2], [2, 0], [0, 2]], closed=True)
