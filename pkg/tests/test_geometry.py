import math

import numpy as np
import pytest

from trimiga.geometry import (
    AxisRect,
    Disk,
    GeometryError,
    HalfPlane,
    TrimmedRegion,
    classify_cells,
    cut_cell_quadrature,
    face_quadrature,
    identity_map,
    map_pullback,
    polar_annulus_map,
    pullback_batch,
    trimming_boundary_quadrature,
)
from trimiga.hierarchy import space_from_root
from trimiga.splines import TensorSpace, make_knot_vector


def uniform_space(degree, n, mu=2):
    kv = make_knot_vector(degree, np.linspace(0, 1, n + 1))
    return space_from_root(TensorSpace((kv, kv)), mu=mu)


def shifted_space(degree, shift_x, shift_y, mu=None):
    bx = np.array([0.0] + [k / 4 + shift_x for k in (1, 2, 3)] + [1.0])
    by = np.array([0.0] + [k / 4 + shift_y for k in (1, 2, 3)] + [1.0])
    return space_from_root(TensorSpace((make_knot_vector(degree, bx),
                                        make_knot_vector(degree, by))),
                           mu=mu or degree)


TWO_DISKS = TrimmedRegion([Disk((0.25, 0.25), 0.1), Disk((0.75, 0.75), 0.1)])


def test_empty_region_all_interior():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TrimmedRegion(), identity_map())
    assert all(c.status == "interior" for c in cls.cells.values())
    assert abs(cls.omega_measure - 1.0) < 1e-14


def test_single_disk_clipped_area():
    hs = uniform_space(2, 4)
    region = TrimmedRegion([Disk((0.25, 0.25), 0.1)])
    cls = classify_cells(hs, region, identity_map())
    total = sum(c.param_area for c in cls.cells.values())
    assert abs(total - (1 - math.pi * 0.01)) < 1e-12
    # the disk overlaps exactly the four cells around (0.25, 0.25)
    cut = sorted((c.i, c.j) for c, g in cls.cells.items() if g.status == "cut")
    assert cut == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_two_disks_measure_consistency():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TWO_DISKS, identity_map())
    assert abs(cls.omega_measure - (1 - math.pi * (0.01 + 0.01))) < 1e-8


def test_classification_vs_monte_carlo_membership():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TWO_DISKS, identity_map())
    rng = np.random.default_rng(0)
    pts = rng.random((10 ** 5, 2))
    in_d = TWO_DISKS.inside(pts)
    for cell, info in cls.cells.items():
        x0, x1, y0, y1 = hs.cell_rect(cell)
        sel = ((pts[:, 0] > x0) & (pts[:, 0] < x1)
               & (pts[:, 1] > y0) & (pts[:, 1] < y1))
        if not sel.any():
            continue
        frac_out = (~in_d[sel]).mean()
        if info.status == "interior":
            assert frac_out == 1.0
        elif info.status == "exterior":
            assert frac_out == 0.0
        else:
            assert 0.0 < frac_out < 1.0


def test_pentagon_shifted_mesh_tiny_triangles():
    # the mesh knot lines sit at k/4 + eps (x) and k/4 - eps (y); the cells
    # just above the trimming line keep triangular active parts with two legs
    # of length 2*eps, hence area 2*eps^2
    eps = 1e-6
    hs = shifted_space(3, eps, -eps)
    region = TrimmedRegion([HalfPlane.left_of((0, 0.25), (0.75, 1))])
    cls = classify_cells(hs, region, identity_map())
    areas = sorted(i.param_area for i in cls.cells.values() if i.status == "cut")
    assert abs(areas[0] - 2 * eps ** 2) / (2 * eps ** 2) < 1e-6
    assert abs(areas[1] - 2 * eps ** 2) / (2 * eps ** 2) < 1e-6
    assert abs(cls.omega_measure - (1 - 0.5 * 0.75 ** 2)) < 1e-12


def test_lshape_statuses_and_gamma():
    eps = 1e-6
    hs = shifted_space(2, -eps, eps)
    region = TrimmedRegion([AxisRect(0.5, 1.0, 0.0, 0.5)])
    cls = classify_cells(hs, region, identity_map())
    statuses = [i.status for i in cls.cells.values()]
    assert statuses.count("exterior") == 1
    assert abs(cls.omega_measure - 0.75) < 1e-12
    glen = sum(trimming_boundary_quadrature(cls, c, 6).total
               for c, i in cls.cells.items() if i.status == "cut")
    assert abs(glen - 1.0) < 1e-10


def test_interior_cell_rule_sums_to_area():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TrimmedRegion(), identity_map())
    cell = hs.cells()[0]
    rule = cut_cell_quadrature(cls, cell, order=2)
    assert rule.points.shape[0] == 9  # (order+1)^2
    assert abs(rule.total - 0.0625) < 1e-12
    assert np.all(rule.weights >= 0)


def test_halfplane_cell_rule_half_area():
    hs = uniform_space(2, 1)
    region = TrimmedRegion([HalfPlane.left_of((0, 0), (1, 1))])
    cls = classify_cells(hs, region, identity_map())
    cell = hs.cells()[0]
    rule = cut_cell_quadrature(cls, cell, order=3)
    assert abs(rule.total - 0.5) < 1e-12


def test_quarter_disk_clip_polynomial_integral():
    hs = uniform_space(2, 1)
    region = TrimmedRegion([Disk((0.0, 0.0), 0.8)])
    cls = classify_cells(hs, region, identity_map())
    cell = hs.cells()[0]
    rule = cut_cell_quadrature(cls, cell, order=15)
    got = float(rule.weights @ (rule.phys_points[:, 0] ** 2 * rule.phys_points[:, 1]))
    exact = 1 / 6 - (0.8 ** 5 / 5) / 3  # closed-form polar integral
    assert abs(got - exact) < 1e-10
    assert abs(rule.total - (1 - math.pi * 0.64 / 4)) < 1e-10


def test_degenerate_sliver_gives_empty_rule():
    hs = uniform_space(2, 1)
    # half-plane shaving a sliver far below area resolution
    region = TrimmedRegion([HalfPlane((1.0, 0.0), 1e-18)])
    cls = classify_cells(hs, region, identity_map())
    cell = hs.cells()[0]
    info = cls.cells[cell]
    rule = cut_cell_quadrature(cls, cell, order=2)
    assert info.status == "exterior" or rule.points.shape[0] == 0 or \
        abs(rule.total - info.measure) < 1e-12


def test_gamma_line_segment_length_and_normals():
    hs = uniform_space(2, 1)
    region = TrimmedRegion([HalfPlane.left_of((0, 0.5), (1, 0.5))])  # trim top half
    cls = classify_cells(hs, region, identity_map())
    cell = hs.cells()[0]
    rule = trimming_boundary_quadrature(cls, cell, 4)
    assert abs(rule.total - 1.0) < 1e-12
    assert np.allclose(rule.normals, [0.0, 1.0])  # outward = up into D


def test_gamma_circle_circumference_and_normals():
    hs = uniform_space(2, 4)
    region = TrimmedRegion([Disk((0.25, 0.25), 0.1)])
    cls = classify_cells(hs, region, identity_map())
    total = 0.0
    for cell, info in cls.cells.items():
        if info.status != "cut":
            continue
        rule = trimming_boundary_quadrature(cls, cell, 6)
        total += rule.total
        rad = rule.points - np.array([0.25, 0.25])
        rad /= np.linalg.norm(rad, axis=1, keepdims=True)
        assert np.allclose((rule.normals * rad).sum(axis=1), -1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(rule.normals, axis=1), 1.0, atol=1e-12)
    assert abs(total - 2 * math.pi * 0.1) < 1e-10


def test_gamma_disconnected_in_one_cell():
    # two disks biting one cell from two sides: gamma_K has two components
    hs = uniform_space(2, 1)
    region = TrimmedRegion([Disk((0.0, 0.5), 0.2), Disk((1.0, 0.5), 0.2)])
    cls = classify_cells(hs, region, identity_map())
    cell = hs.cells()[0]
    info = cls.cells[cell]
    assert info.status == "cut"
    assert len(info.gamma) >= 2  # disconnected trimming boundary
    rule = trimming_boundary_quadrature(cls, cell, 8)
    assert abs(rule.total - 2 * math.pi * 0.2) < 1e-10  # two half circles
    assert abs(info.param_area - (1 - math.pi * 0.04)) < 1e-12


def test_outward_normals_against_membership():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TWO_DISKS, identity_map())
    for cell, info in cls.cells.items():
        if info.status != "cut":
            continue
        rule = trimming_boundary_quadrature(cls, cell, 3)
        probe = rule.points + 1e-8 * rule.normals
        assert TWO_DISKS.inside(probe).all()
        probe = rule.points - 1e-8 * rule.normals
        assert not TWO_DISKS.inside(probe).any()


def test_face_rules_identity():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TWO_DISKS, identity_map(), dirichlet_sides=("bottom",))
    assert len(cls.dirichlet_faces) == 4
    # left, right, top: 4 faces each
    assert len(cls.neumann_faces) == 12
    for f in cls.neumann_faces:
        rule = face_quadrature(cls, f, 4)
        assert abs(rule.total - 0.25) < 1e-12
        assert np.allclose(np.linalg.norm(rule.normals, axis=1), 1.0)


def test_cut_faces_on_lshape_boundary():
    eps = 1e-6
    hs = shifted_space(2, -eps, eps)
    region = TrimmedRegion([AxisRect(0.5, 1.0, 0.0, 0.5)])
    cls = classify_cells(hs, region, identity_map(), dirichlet_sides=("top", "left"))
    cut_faces = [f for f in cls.neumann_faces if f.cut]
    assert len(cut_faces) == 2  # one on the bottom, one on the right
    for f in cut_faces:
        assert abs(f.measure - eps) < 1e-12 * max(1, eps)


def test_map_pullback_identity():
    hs = uniform_space(2, 2)
    ts = hs.spaces[0]
    be = ts.eval_basis((0.3, 0.4), max_deriv=2)
    g, lap = map_pullback(identity_map(), (0.3, 0.4), be)
    assert np.allclose(g, be.gradients)
    assert np.allclose(lap, be.hessians[:, 0] + be.hessians[:, 2])


def test_map_pullback_polar_composition():
    # take the physical function g(x, y) = |x|^2 whose Laplacian is 4, pulled
    # back through the annulus map; feeding its parametric derivatives to the
    # pullback must return the physical gradient 2x and Laplacian 4
    geo = polar_annulus_map((2.0, 0.0), 1.0, 3.0, 7 * math.pi / 8, 9 * math.pi / 8)
    rng = np.random.default_rng(3)
    pts = rng.random((50, 2))
    c = np.array([2.0, 0.0])
    r0, dr = 1.0, 2.0
    phi0, dphi = 7 * math.pi / 8, math.pi / 4

    xi, eta = pts[:, 0], pts[:, 1]
    R = r0 + dr * eta
    phi = phi0 + dphi * xi
    # u_hat = |F|^2 = |c|^2 + 2 c . (R e(phi)) + R^2
    du_dxi = 2 * R * dphi * (-c[0] * np.sin(phi) + c[1] * np.cos(phi))
    du_deta = 2 * dr * (c[0] * np.cos(phi) + c[1] * np.sin(phi)) + 2 * R * dr
    d2_xi = 2 * R * dphi ** 2 * (-c[0] * np.cos(phi) - c[1] * np.sin(phi))
    d2_xieta = 2 * dr * dphi * (-c[0] * np.sin(phi) + c[1] * np.cos(phi))
    d2_eta = np.full_like(R, 2 * dr * dr)
    grads = np.stack([du_dxi, du_deta], axis=1)[:, None, :]
    hess = np.stack([d2_xi, d2_xieta, d2_eta], axis=1)[:, None, :]
    phys_g, lap = pullback_batch(geo, pts, grads, hess)
    phys = geo(pts)
    assert np.allclose(phys_g[:, 0, :], 2 * phys, atol=1e-8)
    assert np.allclose(lap[:, 0], 4.0, atol=1e-8)


def test_laplacian_scaling_under_dyadic_refinement():
    # identity map: the same-shape basis function on the next dyadic level
    # has Laplacian scaled by 4 (h^-2 law)
    kv = make_knot_vector(2, np.linspace(0, 1, 5))
    ts = TensorSpace((kv, kv))
    child, _ = ts.dyadic_refine()
    be0 = ts.eval_basis((0.40, 0.40), max_deriv=2)
    be1 = child.eval_basis((0.20, 0.20), max_deriv=2)
    lap0 = be0.hessians[:, 0] + be0.hessians[:, 2]
    lap1 = be1.hessians[:, 0] + be1.hessians[:, 2]
    assert np.allclose(lap1, 4.0 * lap0, atol=1e-9)


def test_mapped_measure_annulus_sector():
    eps = 1e-6
    hs = shifted_space(3, -eps, eps)
    region = TrimmedRegion([AxisRect(0.5, 1.0, 0.0, 0.5)])
    geo = polar_annulus_map((2.0, 0.0), 1.0, 3.0, 7 * math.pi / 8, 9 * math.pi / 8)
    cls = classify_cells(hs, region, geo)
    full = (math.pi / 4) * (9 - 1) / 2
    trimmed = (math.pi / 8) * (4 - 1) / 2
    assert abs(cls.omega_measure - (full - trimmed)) < 1e-9


def test_mapped_normals_outward():
    eps = 1e-3
    hs = shifted_space(2, -eps, eps)
    region = TrimmedRegion([AxisRect(0.5, 1.0, 0.0, 0.5)])
    geo = polar_annulus_map((2.0, 0.0), 1.0, 3.0, 7 * math.pi / 8, 9 * math.pi / 8)
    cls = classify_cells(hs, region, geo)
    c = np.array([2.0, 0.0])
    phi0, dphi = 7 * math.pi / 8, math.pi / 4
    for cell, info in cls.cells.items():
        if info.status != "cut":
            continue
        rule = trimming_boundary_quadrature(cls, cell, 3)
        probe = rule.phys_points + 1e-8 * rule.normals
        # analytic inverse of the annulus map
        R = np.linalg.norm(probe - c, axis=1)
        phi = np.arctan2(probe[:, 1] - c[1], probe[:, 0] - c[0]) % (2 * math.pi)
        xi = (phi - phi0) / dphi
        eta = (R - 1.0) / 2.0
        assert region.inside(np.column_stack([xi, eta])).all()


def test_quadrature_convergence_smooth_integrand():
    hs = uniform_space(2, 4)
    region = TrimmedRegion([Disk((0.25, 0.25), 0.1)])
    cls = classify_cells(hs, region, identity_map())

    def integrate(order):
        tot = 0.0
        for cell in hs.cells():
            rule = cut_cell_quadrature(cls, cell, order)
            if rule.points.size:
                tot += float(rule.weights @ np.exp(rule.phys_points[:, 0]
                                                   + rule.phys_points[:, 1]))
        return tot

    ref = integrate(18)
    errs = [abs(integrate(n) - ref) for n in (2, 4, 8)]
    assert errs[2] < errs[0]
    assert errs[2] < 1e-9


def test_singular_jacobian_detected():
    geo = polar_annulus_map((0.0, 0.0), 1.0, 1.0, 0.0, math.pi)  # zero radial width
    hs = uniform_space(2, 2)
    cls = classify_cells(hs, TrimmedRegion(), geo)
    with pytest.raises(GeometryError):
        cut_cell_quadrature(cls, hs.cells()[0], 2)
