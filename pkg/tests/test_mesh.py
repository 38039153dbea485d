import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afem.errors import InputError
from afem.experiments import is_conforming_refinement
from afem.mesh import (GEOMETRIES, Mesh, check_conforming, make_initial_mesh, min_angle,
                       overlay, read_mesh, refine_nvb, refine_uniform, write_mesh)


def _random_refinement(mesh, rng, steps, fraction=0.3):
    for _ in range(steps):
        n = max(1, int(fraction * mesh.num_elements))
        mesh, _ = refine_nvb(mesh, rng.choice(mesh.num_elements, n, replace=False))
    return mesh


def _boundary_length(mesh):
    d = np.diff(mesh.vertices[mesh.boundary_edges], axis=1)[:, 0]
    return np.hypot(d[:, 0], d[:, 1]).sum()


@pytest.mark.parametrize("geometry,area,nfree", [
    ("unit_square", 1.0, 0), ("l_shape", 3.0, 0), ("z_shape", 3.5, 0)])
def test_initial_meshes(geometry, area, nfree):
    m = make_initial_mesh(geometry)
    check_conforming(m)
    assert np.all(m.areas > 0)
    assert m.areas.sum() == pytest.approx(area, rel=1e-14)
    assert m.num_free_dofs == nfree


def test_unit_square_has_two_elements():
    assert make_initial_mesh("unit_square").num_elements == 2


def test_unknown_geometry():
    with pytest.raises(InputError):
        make_initial_mesh("annulus")


def test_reentrant_corner_angles():
    # the origin is the reentrant corner: sum of interior angles there
    for geometry, expected in (("l_shape", 1.5 * np.pi), ("z_shape", 1.75 * np.pi)):
        m = make_initial_mesh(geometry)
        total = 0.0
        for t in m.elements:
            if 0 not in t:
                continue
            k = list(t).index(0)
            p0 = m.vertices[t[k]]
            u, v = m.vertices[t[(k + 1) % 3]] - p0, m.vertices[t[(k + 2) % 3]] - p0
            total += np.arccos(u @ v / np.linalg.norm(u) / np.linalg.norm(v))
        assert total == pytest.approx(expected, rel=1e-12)


def test_reference_edge_is_longest_initially():
    m = make_initial_mesh("l_shape")
    p = m.vertices[m.elements]
    ref = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    others = np.maximum(np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                        np.linalg.norm(p[:, 0] - p[:, 2], axis=1))
    assert np.all(ref >= others - 1e-14)


def test_empty_marking_is_identity(square):
    fine, rel = refine_nvb(square, [])
    assert fine is square
    assert rel.unchanged.all() and not rel.refined.any()


def test_bisect_square_both_elements(square):
    fine, rel = refine_nvb(square, [0, 1])
    assert fine.num_elements == 4
    assert np.array_equal(rel.children_counts, [2, 2])
    assert fine.num_vertices == 5
    assert np.allclose(fine.vertices[4], [0.5, 0.5])
    check_conforming(fine)


def test_single_mark_closure(square):
    # both reference edges are the shared diagonal: marking one refines both
    fine, rel = refine_nvb(square, [0])
    assert rel.refined.all()
    assert fine.num_elements == 4


def test_invalid_ids(square):
    with pytest.raises(InputError):
        refine_nvb(square, [2])
    with pytest.raises(InputError):
        refine_nvb(square, [-1])


def test_uniform_refinement_four_children():
    m = make_initial_mesh("z_shape")
    fine, rel = refine_uniform(m)
    assert np.all(rel.children_counts == 4)
    assert fine.num_elements == 4 * m.num_elements
    check_conforming(fine)


def test_children_partition_parent_area(rng):
    m = _random_refinement(make_initial_mesh("l_shape"), rng, 3)
    fine, rel = refine_nvb(m, rng.choice(m.num_elements, 10, replace=False))
    sums = np.bincount(rel.parent_of, weights=fine.areas, minlength=m.num_elements)
    assert np.allclose(sums, m.areas, rtol=1e-13, atol=0)
    # unchanged elements are their own parents
    f = np.flatnonzero(rel.unchanged)
    assert np.array_equal(fine.elements[f], m.elements[rel.parent_of[f]])
    assert not rel.refined[rel.parent_of[f]].any()


@settings(max_examples=40, deadline=None)
@given(geometry=st.sampled_from(GEOMETRIES), seed=st.integers(0, 2 ** 31),
       steps=st.integers(1, 5), fraction=st.floats(0.01, 1.0))
def test_refinement_properties(geometry, seed, steps, fraction):
    rng = np.random.default_rng(seed)
    mesh = make_initial_mesh(geometry)
    base = mesh
    for _ in range(steps):
        n = max(1, int(fraction * mesh.num_elements))
        marked = rng.choice(mesh.num_elements, n, replace=False)
        fine, rel = refine_nvb(mesh, marked)
        assert is_conforming_refinement(fine, base)
        assert np.all(fine.areas > 0)
        assert rel.refined[marked].all()
        lo, nf, hi = rel.splitting_bounds(4)
        assert lo <= nf <= hi
        assert set(np.unique(rel.children_counts)) <= {1, 2, 3, 4}
        # new vertices are midpoints of coarse edges
        mid = 0.5 * (mesh.vertices[rel.new_vertex_edges[:, 0]]
                     + mesh.vertices[rel.new_vertex_edges[:, 1]])
        assert np.array_equal(fine.vertices[mesh.num_vertices:], mid)
        assert _boundary_length(fine) == pytest.approx(_boundary_length(base), rel=1e-12)
        mesh = fine


@pytest.mark.parametrize("geometry", GEOMETRIES)
def test_min_angle_saturates(geometry):
    m = make_initial_mesh(geometry)
    angles = []
    for _ in range(8):
        angles.append(min_angle(m))
        m, _ = refine_uniform(m)
    assert np.allclose(angles[2:], angles[2], rtol=0, atol=1e-12)
    assert angles[-1] > 0.1


def test_nvb_similarity_classes(rng):
    # adaptive NVB never degrades below the saturated uniform minimum angle
    m = make_initial_mesh("l_shape")
    ref = min_angle(refine_uniform(refine_uniform(m)[0])[0])
    m = _random_refinement(m, rng, 12, 0.2)
    assert min_angle(m) >= ref - 1e-12


def test_closure_ratio_uniform_marking():
    m0 = make_initial_mesh("l_shape")
    m, marked_total = m0, 0
    for _ in range(3):
        marked_total += m.num_elements
        m, _ = refine_nvb(m, np.arange(m.num_elements))
    ratio = (m.num_elements - m0.num_elements) / marked_total
    assert 1.0 <= ratio <= 4.0


# ----------------------------------------------------------------------
# overlay


def test_overlay_idempotent(square):
    ov = overlay(square, square, square)
    assert ov.num_elements == square.num_elements
    assert np.isclose(ov.areas.sum(), 1.0)


def test_overlay_left_right():
    base = refine_uniform(make_initial_mesh("unit_square"))[0]
    c = base.vertices[base.elements].mean(axis=1)
    left, _ = refine_nvb(base, np.flatnonzero(c[:, 0] < 0.5))
    right, _ = refine_nvb(base, np.flatnonzero(c[:, 0] >= 0.5))
    ov = overlay(left, right, base)
    assert ov.num_elements <= left.num_elements + right.num_elements - base.num_elements
    assert is_conforming_refinement(ov, base)
    both = overlay(ov, left, base)
    assert both.num_elements == ov.num_elements


def test_overlay_equals_union_refinement(rng):
    base = refine_uniform(make_initial_mesh("l_shape"))[0]
    a = _random_refinement(base, rng, 2)
    b, _ = refine_nvb(a, rng.choice(a.num_elements, 5, replace=False))
    # b refines a, so the overlay is b itself
    ov = overlay(a, b, base)
    assert ov.num_elements == b.num_elements
    assert sorted(ov.element_keys()) == sorted(b.element_keys())


@pytest.mark.parametrize("geometry", ["l_shape", "z_shape"])
def test_overlay_bound_random_pairs(geometry):
    rng = np.random.default_rng(7)
    base = make_initial_mesh(geometry)
    for _ in range(100):
        a = _random_refinement(base, rng, 5, 0.15)
        b = _random_refinement(base, rng, 5, 0.15)
        ov = overlay(a, b, base)
        assert ov.num_elements <= a.num_elements + b.num_elements - base.num_elements
        assert is_conforming_refinement(ov, base)
        ka, kb, ko = set(a.element_keys()), set(b.element_keys()), set(ov.element_keys())
        # every overlay element descends from (or equals) an element of a and of b
        for keys in (ka, kb):
            for r, lev, p in ko:
                assert any((r, j, p >> (lev - j)) in keys for j in range(lev + 1))


def test_overlay_different_hierarchies():
    a = make_initial_mesh("unit_square")
    b = make_initial_mesh("unit_square")
    with pytest.raises(InputError):
        overlay(a, b, a)


def test_hanging_node_detected():
    # a square split into two triangles on one side and one on the other
    v = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    t = [(0, 1, 4), (1, 2, 4), (0, 2, 3)]
    mesh = Mesh.from_triangles(v, t)
    assert not is_conforming_refinement(mesh, make_initial_mesh("unit_square"))


# ----------------------------------------------------------------------
# text format


def test_mesh_roundtrip(rng):
    m = _random_refinement(make_initial_mesh("z_shape"), rng, 4)
    buf = io.StringIO()
    write_mesh(m, buf)
    text = buf.getvalue()
    assert text.startswith("afem-mesh v1\nvertices ")
    back = read_mesh(io.StringIO(text))
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.elements, m.elements)
    assert np.array_equal(back.level, m.level)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    # refinement continues identically from the re-read mesh
    f1, _ = refine_nvb(m, [0, 3])
    f2, _ = refine_nvb(back, [0, 3])
    assert np.array_equal(f1.elements, f2.elements)


def test_read_rotated_reference(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("afem-mesh v1\nvertices 4\n0 0\n1 0\n1 1\n0 1\n"
                 "elements 2\n2 0 1 1 0\n0 2 3 0 0\n"
                 "boundary 4\n0 1\n1 2\n2 3\n3 0\n")
    m = read_mesh(p)
    # the stored index names the newest vertex, which moves to local index 2
    assert list(m.elements[0]) == [1, 2, 0]
    assert list(m.elements[1]) == [2, 3, 0]


@pytest.mark.parametrize("text", [
    "nope\n",
    "afem-mesh v1\nvertices 2\n0 0\n",
    "afem-mesh v1\nvertices 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2 5 0\nboundary 3\n0 1\n1 2\n2 0\n",
])
def test_read_malformed(text):
    with pytest.raises(InputError):
        read_mesh(io.StringIO(text))
