import math

import numpy as np
import pytest

from trimiga.assembly import assemble, build_basis_index, impose_dirichlet, solve
from trimiga.estimator import (
    EstimatorBreakdown,
    cut_scaling,
    estimate,
    eta_constant,
    scaling,
)
from trimiga.geometry import (
    Disk,
    TrimmedRegion,
    classify_cells,
    identity_map,
)
from trimiga.hierarchy import space_from_root
from trimiga.splines import TensorSpace, make_knot_vector


def uniform_space(degree, n, mu=None):
    kv = make_knot_vector(degree, np.linspace(0, 1, n + 1))
    return space_from_root(TensorSpace((kv, kv)), mu=mu or degree)


def bisect_oracle():
    # independent oracle: plain bisection on f(t) = t + log(t)
    lo, hi = 0.5, 0.6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid + math.log(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_eta_constant_defining_residual():
    eta = eta_constant()
    assert abs(eta + math.log(eta)) < 1e-14


def test_eta_constant_value_against_oracle():
    eta = eta_constant()
    assert abs(eta - bisect_oracle()) < 1e-14
    assert abs(eta - 0.5671432904097838) < 1e-13


def test_eta_bracket_monotonicity():
    g = lambda t: t + math.log(t)
    assert g(0.5) < 0 < g(0.6)


def test_scaling_spot_values():
    eta = eta_constant()
    # |K ∩ Ω| = 1e-10: c = sqrt(-log(1e-10)) = sqrt(23.02585...)
    c = cut_scaling(1e-10)
    assert abs(c - math.sqrt(-math.log(1e-10))) < 1e-12
    assert abs(c - 4.79853) < 1e-5
    assert abs(c * math.sqrt(1e-10) - 4.79853e-5) < 1e-10
    # |K ∩ Ω| = 0.8: -log(0.8) = 0.22314 < eta, so c = sqrt(eta)
    c = cut_scaling(0.8)
    assert abs(c - math.sqrt(eta)) < 1e-14
    assert abs(c - 0.753089) < 1e-6


def test_scaling_on_classification():
    hs = uniform_space(2, 4)
    region = TrimmedRegion([Disk((0.25, 0.25), 0.1)])
    cls = classify_cells(hs, region, identity_map())
    scal = scaling(cls)
    for cell, info in cls.cells.items():
        if info.status == "interior":
            assert scal.delta_cell[cell] == info.h
            assert abs(scal.delta_cell[cell] - 0.25 * math.sqrt(2)) < 1e-14
        elif info.status == "cut":
            c = scal.c_cell[cell]
            assert abs(scal.delta_cell[cell] - c * math.sqrt(info.measure)) < 1e-14
            # monotonicity guard: delta never exceeds the uncut-cell bound
            assert scal.delta_cell[cell] <= c * math.sqrt(0.0625) + 1e-14


def test_patch_test_estimator_vanishes():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TrimmedRegion(), identity_map(),
                         dirichlet_sides=("bottom",))

    def g_n(pts, normals):
        return normals @ np.array([1.0, 1.0])

    zero = lambda p: np.zeros(p.shape[0])
    sys_ = assemble(hs, cls, zero, g_n)
    impose_dirichlet(sys_, hs, cls, lambda p: p[:, 0] + p[:, 1])
    x = solve(sys_, rtol=1e-13)
    bd = estimate(hs, x, sys_.index, cls, zero, g_n)
    assert bd.total < 1e-8


def test_single_cell_interior_residual_closed_form():
    # u_h = 0 and f = 1 on a single, fully Dirichlet cell: the estimator is
    # the interior term alone, delta_K * ||1|| = h_K * |K|^(1/2) with h_K the
    # cell diameter sqrt(2)
    hs = uniform_space(2, 1)
    cls = classify_cells(hs, TrimmedRegion(), identity_map(),
                         dirichlet_sides=("bottom", "top", "left", "right"))
    idx = build_basis_index(hs, cls)
    coeffs = np.zeros(idx.n)
    one = lambda p: np.ones(p.shape[0])
    none = lambda p, n: np.zeros(p.shape[0])
    bd = estimate(hs, coeffs, idx, cls, one, none)
    assert not cls.neumann_faces
    assert abs(bd.total - math.sqrt(2)) < 1e-12


def test_estimator_decomposition_and_exterior_cells():
    hs = uniform_space(2, 4)
    region = TrimmedRegion([Disk((0.25, 0.25), 0.24)])
    cls = classify_cells(hs, region, identity_map(), dirichlet_sides=("top",))
    idx = build_basis_index(hs, cls)
    rng = np.random.default_rng(0)
    coeffs = rng.random(idx.n)
    f = lambda p: np.sin(3 * p[:, 0])
    g_n = lambda p, n: np.cos(2 * p[:, 1])
    bd = estimate(hs, coeffs, idx, cls, f, g_n)
    total2 = sum(e for _, e in bd.contributions())
    assert abs(bd.total - math.sqrt(total2)) < 1e-13
    for cell, info in cls.cells.items():
        if info.status == "exterior":
            assert bd.cell_total2(cell) == 0.0


def test_estimator_locality_under_coefficient_perturbation():
    hs = uniform_space(2, 4)
    cls = classify_cells(hs, TrimmedRegion(), identity_map(),
                         dirichlet_sides=("bottom",))
    idx = build_basis_index(hs, cls)
    rng = np.random.default_rng(5)
    coeffs = rng.random(idx.n)
    f = lambda p: np.sin(3 * p[:, 0])
    g_n = lambda p, n: np.zeros(p.shape[0])
    bd0 = estimate(hs, coeffs, idx, cls, f, g_n)
    k = idx.n // 2
    fn = idx.functions[k]
    coeffs2 = coeffs.copy()
    coeffs2[k] += 0.5
    bd1 = estimate(hs, coeffs2, idx, cls, f, g_n)
    (i0, i1), (j0, j1) = hs.spaces[fn.level].function_support_cells((fn.i, fn.j))
    for cell in hs.cells():
        changed = abs(bd1.cell_total2(cell) - bd0.cell_total2(cell)) > 1e-12
        in_support = i0 <= cell.i <= i1 and j0 <= cell.j <= j1
        assert changed == in_support or not changed
        if changed:
            assert in_support
