import numpy as np
import pytest
from scipy.interpolate import BSpline

from trimiga.splines import (
    KnotVector,
    TensorSpace,
    dyadic_refine,
    eval_basis,
    make_knot_vector,
    support_extension,
)


def scipy_basis(kv, j):
    """Independent de Boor evaluation of one basis function."""
    c = np.zeros(kv.n_dof)
    c[j] = 1.0
    return BSpline(kv.knots.copy(), c, kv.degree, extrapolate=False)


def dense_eval(kv, x, k=0):
    """Dense vector of all basis values/derivatives at x from eval_basis."""
    be = eval_basis(kv, x, max_deriv=k)
    out = np.zeros(kv.n_dof)
    out[be.first:be.first + kv.degree + 1] = be.ders[k]
    return out


def test_make_knot_vector_trivial():
    kv = make_knot_vector(1, [0, 1])
    assert np.array_equal(kv.knots, [0, 0, 1, 1])
    assert kv.n_dof == 2

    kv = make_knot_vector(2, [0, 0.5, 1])
    assert np.array_equal(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])
    assert kv.n_dof == 4


def test_make_knot_vector_ndof_count():
    # n_dof = #breakpoints - 1 + degree, by direct count of the knot list
    bps = [0, 0.25, 0.5, 0.75, 1]
    kv = make_knot_vector(2, bps)
    assert kv.n_dof == len(bps) - 1 + 2 == 6
    assert kv.knots.size == kv.n_dof + kv.degree + 1


@pytest.mark.parametrize("bad", [
    ([0.5, 1],),        # missing left endpoint
    ([0, 0.75],),       # missing right endpoint
    ([0, 0.6, 0.4, 1],),  # not sorted
    ([0, 0.5, 0.5, 1],),  # not strictly increasing
])
def test_make_knot_vector_invalid(bad):
    with pytest.raises(ValueError):
        make_knot_vector(2, bad[0])


def test_make_knot_vector_bad_degree():
    with pytest.raises(ValueError):
        make_knot_vector(0, [0, 1])


def test_eval_basis_hats():
    kv = make_knot_vector(1, [0, 1])
    be = eval_basis(kv, 0.5)
    assert np.allclose(be.values, [0.5, 0.5])


def test_eval_basis_quadratic_midpoint():
    # independent oracle: scipy BSpline, checked in test_eval_matches_scipy;
    # here the hand value: at the interior knot the two middle functions are
    # 1/2 and the sum over all four is 1.
    kv = make_knot_vector(2, [0, 0.5, 1])
    dense = dense_eval(kv, 0.5)
    assert np.allclose(dense, [0.0, 0.5, 0.5, 0.0])
    assert abs(dense.sum() - 1.0) < 1e-14


def test_eval_basis_domain_error():
    kv = make_knot_vector(2, [0, 0.5, 1])
    with pytest.raises(ValueError):
        eval_basis(kv, -0.1)
    with pytest.raises(ValueError):
        eval_basis(kv, 1.1)


@pytest.mark.parametrize("degree,bps", [
    (1, [0, 1]),
    (2, [0, 0.5, 1]),
    (2, [0, 0.25, 0.5, 0.75, 1]),
    (3, [0, 0.2, 0.7, 1]),
    (4, [0, 0.3, 0.6, 1]),
])
def test_eval_matches_scipy(degree, bps):
    kv = make_knot_vector(degree, bps)
    rng = np.random.default_rng(7)
    xs = np.concatenate([rng.random(40), [0.0, 1.0] + list(bps)])
    splines = [scipy_basis(kv, j) for j in range(kv.n_dof)]
    for x in xs:
        xs_eval = min(x, 1.0 - 1e-13)  # scipy's right end is open
        for k in range(min(2, degree) + 1):
            dense = dense_eval(kv, x, k)
            ref = np.array([s.derivative(k)(xs_eval) if k else s(xs_eval)
                            for s in splines])
            ref = np.nan_to_num(ref)
            assert np.allclose(dense, ref, atol=1e-9), (x, k)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_partition_of_unity_and_derivative_sums(degree):
    kv = make_knot_vector(degree, np.linspace(0, 1, 6))
    rng = np.random.default_rng(degree)
    for x in rng.random(1000):
        be = eval_basis(kv, x, max_deriv=1)
        assert abs(be.values.sum() - 1.0) < 1e-12
        assert abs(be.ders[1].sum()) < 1e-9  # derivative of the unity sum
        assert np.all(be.values >= 0)


@pytest.mark.parametrize("degree", [2, 3])
def test_derivative_consistency_finite_differences(degree):
    kv = make_knot_vector(degree, [0, 0.3, 0.55, 0.8, 1])
    rng = np.random.default_rng(11)
    h = 1e-6
    for x in 0.02 + 0.96 * rng.random(60):
        lo = eval_basis(kv, x - h, 2)
        hi = eval_basis(kv, x + h, 2)
        mid = eval_basis(kv, x, 2)
        if lo.first != hi.first or lo.first != mid.first:
            continue  # straddling a breakpoint
        fd_grad = (hi.ders[0] - lo.ders[0]) / (2 * h)
        scale = max(1.0, np.abs(fd_grad).max())
        assert np.allclose(fd_grad, mid.ders[1], atol=1e-6 * scale, rtol=1e-6)
        fd_hess = (hi.ders[1] - lo.ders[1]) / (2 * h)
        scale = max(1.0, np.abs(fd_hess).max())
        assert np.allclose(fd_hess, mid.ders[2], atol=1e-4 * scale, rtol=1e-4)


def test_support_extension_examples():
    # degree 1, breakpoints [0, 0.5, 1]: first cell extends over everything
    ts = TensorSpace((make_knot_vector(1, [0, 0.5, 1]),
                      make_knot_vector(1, [0, 0.5, 1])))
    x0, x1, y0, y1 = support_extension(ts, (0, 0))
    assert (x0, x1) == (0.0, 1.0) and (y0, y1) == (0.0, 1.0)

    # single-cell space: extension is the whole domain for any degree
    for p in (1, 2, 3):
        ts = TensorSpace((make_knot_vector(p, [0, 1]), make_knot_vector(p, [0, 1])))
        assert support_extension(ts, (0, 0)) == (0.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_support_extension_interior_width(degree):
    n = 16
    h = 1.0 / n
    kv = make_knot_vector(degree, np.linspace(0, 1, n + 1))
    ts = TensorSpace((kv, kv))
    cell = (n // 2, n // 2)
    x0, x1, y0, y1 = support_extension(ts, cell)
    assert abs((x1 - x0) - (2 * degree + 1) * h) < 1e-14
    assert abs((y1 - y0) - (2 * degree + 1) * h) < 1e-14


def test_support_extension_invalid_cell():
    ts = TensorSpace((make_knot_vector(2, [0, 0.5, 1]),
                      make_knot_vector(2, [0, 0.5, 1])))
    with pytest.raises(ValueError):
        support_extension(ts, (5, 0))


def test_dyadic_refine_linear_mask():
    kv = make_knot_vector(1, [0, 1])
    child, ts = dyadic_refine(kv)
    assert np.allclose(child.breakpoints, [0, 0.5, 1])
    off, row = ts.row(0)
    assert off == 0 and np.allclose(row, [1.0, 0.5])
    off, row = ts.row(1)
    assert off == 1 and np.allclose(row, [0.5, 1.0])


def test_dyadic_refine_quadratic_interior_mask():
    # uniform interior function: classic subdivision mask (1/4, 3/4, 3/4, 1/4),
    # also obtainable by repeated single knot insertion
    kv = make_knot_vector(2, np.linspace(0, 1, 5))
    _, ts = dyadic_refine(kv)
    off, row = ts.row(2)
    assert np.allclose(row, [0.25, 0.75, 0.75, 0.25])
    off, row = ts.row(3)
    assert np.allclose(row, [0.25, 0.75, 0.75, 0.25])


@pytest.mark.parametrize("degree,bps", [
    (1, [0, 1]),
    (2, [0, 0.5, 1]),
    (2, [0, 0.25, 0.5 - 1e-6, 0.75, 1]),   # non-uniform, shifted line
    (3, [0, 0.2, 0.7, 1]),
    (4, [0, 0.25, 0.5, 0.75, 1]),
])
def test_two_scale_reproduces_coarse_functions(degree, bps):
    kv = make_knot_vector(degree, bps)
    child, ts = dyadic_refine(kv)
    rng = np.random.default_rng(3)
    xs = rng.random(100)
    for j in range(kv.n_dof):
        off, row = ts.row(j)
        assert np.all(row >= -1e-15)
        for x in xs:
            coarse = dense_eval(kv, x)[j]
            fine = dense_eval(child, x)
            combo = float(row @ fine[off:off + row.size])
            assert abs(coarse - combo) < 1e-12


def test_function_evaluates_to_zero_outside_support():
    kv = make_knot_vector(2, np.linspace(0, 1, 9))
    for j in range(kv.n_dof):
        lo, hi = kv.function_support(j)
        for x in np.linspace(0, 1, 33):
            val = dense_eval(kv, x)[j]
            if x < lo - 1e-12 or x > hi + 1e-12:
                assert val == 0.0


def test_tensor_eval_window_and_partition():
    ts = TensorSpace((make_knot_vector(2, [0, 0.5, 1]),
                      make_knot_vector(3, [0, 0.25, 0.5, 0.75, 1])))
    rng = np.random.default_rng(5)
    for _ in range(100):
        xy = rng.random(2)
        be = ts.eval_basis(xy, max_deriv=2)
        n = (ts.degrees[0] + 1) * (ts.degrees[1] + 1)
        assert be.values.size == n
        assert abs(be.values.sum() - 1.0) < 1e-12
        assert np.all(be.values >= 0)
        assert abs(be.gradients.sum(axis=0)).max() < 1e-9
