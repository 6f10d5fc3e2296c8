import numpy as np
import pytest

from thinspec.errors import DegenerateLevelSet, DomainEmpty, DomainUnbounded, MeshTooLarge
from thinspec.expr import parse
from thinspec.geometry import (build_cell_mesh, build_thin_mesh, elements, interpolate,
                               normal_velocity, velocity_field)
from thinspec.linalg import assemble_mass

from conftest import h


def test_flat_cell_has_full_periodic_rows(flat):
    m = build_cell_mesh(flat, 0.3, 64, 64)
    cls = m.node_class
    inside = m.grid.inside
    y2 = m.grid.c2
    open_rows = (y2 > 1e-12) & (y2 < 1 - 1e-12)
    assert np.all(inside[:, open_rows])
    assert not np.any(inside[:, ~open_rows])
    assert cls.shape == (64, 65)
    assert set(np.unique(cls)) == {0, 1, 2}
    assert m.area == pytest.approx(1.0, rel=1e-12)


def test_cut_strip_boundary_samples_lie_on_level_set():
    F = parse("y2*(1 - x1^2/2 - y2)")
    m = build_cell_mesh(F, 0.5, 32, 40, y2_box=(-0.3, 1.3))
    b = m.boundary
    vals = F.evaluate(0.5, b.points[:, 0], b.points[:, 1])
    assert np.max(np.abs(vals)) <= 1e-10
    top = b.points[:, 1] > 0.5
    np.testing.assert_allclose(b.points[top, 1], 0.875, atol=1e-12)
    np.testing.assert_allclose(b.normal[top], [[0.0, 1.0]] * top.sum(), atol=1e-12)
    assert np.all((b.theta > 0) & (b.theta <= 1))


def test_empty_and_unbounded_cells():
    with pytest.raises(DomainEmpty):
        build_cell_mesh(parse("-1 - y2^2"), 0.0, 16, 16)
    with pytest.raises(DomainUnbounded):
        build_cell_mesh(parse("1 - y2^2/100"), 0.0, 16, 16)


def test_area_converges_on_wavy_cell():
    F = parse("y2*(1 + 0.2*sin(2*pi*y1) - y2)")
    errs = [abs(build_cell_mesh(F, 0.0, n, n).area - 1.0) for n in (16, 32, 64)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 1.0)


def test_periodic_shift_rolls_node_classes():
    n = 100
    F = parse("y2*(1 + 0.3*sin(2*pi*y1) - y2)")
    G = parse("y2*(1 + 0.3*sin(2*pi*(y1 + 0.37)) - y2)")
    a = build_cell_mesh(F, 0.0, n, 50)
    b = build_cell_mesh(G, 0.0, n, 50)
    np.testing.assert_allclose(a.grid.c2, b.grid.c2, atol=1e-12)
    assert np.array_equal(np.roll(a.grid.inside, -37, axis=0), b.grid.inside)


def test_thin_mesh_flat_rectangle(flat):
    m = build_thin_mesh(flat, 0.1, 16, 32)
    x1, x2 = m.grid.coords
    assert m.extent == pytest.approx((0.0, 0.1), abs=1e-12)
    assert np.all((x1 > -0.5) & (x1 < 0.5))
    assert np.all((x2 > 0) & (x2 < 0.1))
    # bases x1 = -1/2, 1/2 belong to the Dirichlet set
    assert not m.grid.inside[0].any() and not m.grid.inside[-1].any()
    # the four corner cells are cut along a diagonal: O(h1 h2) missing area
    g = m.grid
    assert np.sum(elements(g).measure) == pytest.approx(0.1 - 2 * g.h1 * g.h2, rel=1e-12)


def test_thin_mesh_slowly_varying_height():
    F = parse("y2*(1 - x1^2/2 - y2)")
    m = build_thin_mesh(F, 0.1, 16, 32)
    x1, x2 = m.grid.coords
    assert np.all(F.evaluate(x1, x1 / 0.1, x2 / 0.1) > 0)
    assert m.extent[1] == pytest.approx(0.1, rel=1e-9)
    area = np.sum(elements(m.grid).measure)
    assert area == pytest.approx(0.1 * (1 - 1 / 24), rel=1e-3)


def test_thin_mesh_budget():
    with pytest.raises(MeshTooLarge):
        build_thin_mesh(parse("y2*(1-y2)"), 1e-4, 16, 128, node_cap=20_000_000)


def test_normal_velocity_examples(flat, hstrip):
    m = build_cell_mesh(flat, 0.2, 32, 32)
    assert np.all(normal_velocity(flat, m) == 0)
    m = build_cell_mesh(hstrip, 0.5, 32, 32)
    vn = normal_velocity(hstrip, m)
    top = m.boundary.points[:, 1] > 0.5
    np.testing.assert_allclose(vn[top], 0.5, rtol=1e-9)
    np.testing.assert_allclose(vn[~top], 0.0, atol=1e-12)


def test_degenerate_level_set():
    # squared level set: double root, so the gradient vanishes on the boundary
    F = parse("(y2*(1-y2))^2")
    m = build_cell_mesh(parse("y2*(1-y2)"), 0.0, 16, 16)
    with pytest.raises(DegenerateLevelSet):
        normal_velocity(F, m)


def test_zero_speed_gives_zero_field(flat):
    m = build_cell_mesh(flat, 0.0, 32, 32)
    vf = velocity_field(m, np.zeros(len(m.boundary)))
    assert np.max(np.abs(vf.V)) <= 1e-10


def test_flat_strip_top_speed_gives_linear_field(flat):
    m = build_cell_mesh(flat, 0.0, 32, 32)
    top = m.boundary.points[:, 1] > 0.5
    vn = np.where(top, 0.5, 0.0)
    vf = velocity_field(m, vn)
    b = m.boundary
    assert vf.projection == pytest.approx(0.5 * b.weight[top].sum() / b.measure, rel=1e-12)
    _, y2 = m.grid.coords
    np.testing.assert_allclose(vf.V[:, 1], 0.5 * y2, atol=1e-8)
    np.testing.assert_allclose(vf.V[:, 0], 0.0, atol=1e-8)


def test_h_strip_field_matches_closed_form(hstrip):
    x = 0.25
    hp = -x
    errs = []
    for n in (32, 64):
        m = build_cell_mesh(hstrip, x, n, n)
        vf = velocity_field(m, normal_velocity(hstrip, m))
        _, y2 = m.grid.coords
        errs.append(np.max(np.abs(vf.V[:, 1] + hp * y2 / h(x))) + np.max(np.abs(vf.V[:, 0])))
    assert errs[1] <= 1e-6


def test_discrete_divergence_theorem():
    F = parse("(y2 - 0.15*sin(2*pi*y1)*(1+x1))*(1 - x1^2/2 + 0.1*cos(2*pi*y1) - y2)")
    m = build_cell_mesh(F, 0.2, 48, 48)
    vn = normal_velocity(F, m)
    vf = velocity_field(m, vn)
    mass = assemble_mass(m, mode="free").diagonal().sum()
    flux = np.sum(m.boundary.weight * vn) + vf.source * mass
    assert abs(flux) <= 1e-8 * m.boundary.measure


def test_interpolation_reproduces_bilinear_fields(flat):
    m = build_cell_mesh(flat, 0.0, 32, 32)
    _, y2 = m.grid.coords
    u = 3.0 * y2 * (1 - y2)
    pts1 = np.array([0.013, 0.5, 0.987])
    pts2 = np.array([0.3, 0.5, 0.71])
    got = interpolate(m, u, pts1, pts2)
    np.testing.assert_allclose(got, 3.0 * pts2 * (1 - pts2), atol=3 * m.h2 ** 2)
