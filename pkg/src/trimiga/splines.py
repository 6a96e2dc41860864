"""Univariate and tensor-product B-spline spaces.

Open knot vectors over breakpoints in [0,1] with interior multiplicity 1,
Cox-de Boor evaluation with derivatives up to order 2, support extensions,
and dyadic refinement with the two-scale (knot insertion) coefficients
relating a space to its dyadically refined child.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class KnotVector:
    """Open knot vector of a fixed degree over breakpoints in [0,1].

    The first and last knots carry multiplicity degree+1 and interior knots
    are simple, so the basis is C^(degree-1) everywhere inside the domain.

    Attributes:
        degree (int): spline degree, >= 1
        breakpoints (ndarray): strictly increasing, from 0.0 to 1.0
        knots (ndarray): the assembled open knot vector
    """

    __slots__ = ("degree", "breakpoints", "knots")

    def __init__(self, degree, breakpoints):
        breakpoints = np.ascontiguousarray(breakpoints, dtype=float)
        if degree < 1:
            raise ValueError("degree must be >= 1")
        if breakpoints.ndim != 1 or breakpoints.size < 2:
            raise ValueError("need at least two breakpoints")
        if not np.all(np.diff(breakpoints) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if breakpoints[0] != 0.0 or breakpoints[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        self.degree = int(degree)
        self.breakpoints = breakpoints
        self.knots = np.concatenate(
            (np.zeros(degree), breakpoints, np.ones(degree))
        )

    @property
    def n_dof(self):
        return self.knots.size - self.degree - 1

    @property
    def n_cells(self):
        return self.breakpoints.size - 1

    def __repr__(self):
        return "KnotVector(p=%d, cells=%d)" % (self.degree, self.n_cells)

    def cell_interval(self, i):
        """Breakpoint interval (zeta_i, zeta_{i+1}) of cell i."""
        if not 0 <= i < self.n_cells:
            raise ValueError("cell index %d out of range" % i)
        return self.breakpoints[i], self.breakpoints[i + 1]

    def cell_span(self, i):
        """Knot index s such that cell i is the span (knots[s], knots[s+1])."""
        return i + self.degree

    def function_support(self, j):
        """Parametric support (knots[j], knots[j+p+1]) of basis function j."""
        return self.knots[j], self.knots[j + self.degree + 1]

    def function_cells(self, j):
        """Inclusive range (lo, hi) of cell indices covered by function j."""
        p = self.degree
        return max(0, j - p), min(j, self.n_cells - 1)

    def cell_functions(self, i):
        """Inclusive range (i, i+p) of functions nonzero on cell i."""
        return i, i + self.degree

    def support_extension(self, i):
        """Support extension of cell i: union of supports of all functions
        nonzero on it, i.e. the open interval (knots[s-p], knots[s+p+1])."""
        if not 0 <= i < self.n_cells:
            raise ValueError("cell index %d out of range" % i)
        p = self.degree
        s = self.cell_span(i)
        return self.knots[s - p], self.knots[s + p + 1]


def make_knot_vector(degree, breakpoints):
    """Open knot vector with boundary multiplicity degree+1 and simple
    interior knots over the given breakpoints."""
    return KnotVector(degree, breakpoints)


@dataclass
class UnivariateBasis:
    """Nonzero B-splines at one point: function window and derivative table.

    ders[k, j] is the k-th derivative of function first+j.
    """

    first: int
    ders: np.ndarray

    @property
    def values(self):
        return self.ders[0]


def eval_basis(kv, x, max_deriv=0):
    """Evaluate the degree+1 B-splines nonzero at x with derivatives up to
    max_deriv. Values are nonnegative and sum to one."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("evaluation point %r outside [0, 1]" % (x,))
    spans, ders = kernels.basis_ders(kv.knots, kv.degree, np.array([x]), max_deriv)
    return UnivariateBasis(first=int(spans[0]) - kv.degree, ders=ders[0])


def eval_basis_many(kv, x, max_deriv=0, spans=None):
    """Batch version of :func:`eval_basis`; returns (first_indices, ders)."""
    spans, ders = kernels.basis_ders(kv.knots, kv.degree, x, max_deriv, spans=spans)
    return spans - kv.degree, ders


class TwoScale:
    """Two-scale coefficients of a dyadic refinement step.

    Each coarse function equals a nonnegative combination of child-level
    functions; row j is stored as (offset_j, coeffs_j) with
    coarse_j = sum_t coeffs_j[t] * fine_{offset_j + t}.
    """

    __slots__ = ("offsets", "rows")

    def __init__(self, offsets, rows):
        self.offsets = offsets
        self.rows = rows

    def row(self, j):
        return self.offsets[j], self.rows[j]

    def window_matrix(self, coarse_lo, fine_lo, p):
        """Dense (p+1)x(p+1) block M[a, b] = coefficient of fine function
        fine_lo+b in coarse function coarse_lo+a."""
        M = np.zeros((p + 1, p + 1))
        for a in range(p + 1):
            off, row = self.row(coarse_lo + a)
            for t, c in enumerate(row):
                b = off + t - fine_lo
                if 0 <= b <= p:
                    M[a, b] = c
        return M


def _insertion_rows(coarse, fine):
    """Knot-insertion (discrete B-spline) coefficients expressing each
    coarse function on the fine knot vector; fine must refine coarse."""
    p = coarse.degree
    ck = coarse.knots
    fk = fine.knots
    n_coarse = coarse.n_dof
    n_fine = fine.n_dof
    cols = [{} for _ in range(n_fine)]
    for i in range(n_fine):
        # discrete B-spline recurrence, built up from the zero-degree column
        mu = int(kernels.find_spans(ck, p, np.array([fk[i]]))[0])
        if fk[i] >= ck[-1]:
            mu = n_coarse - 1 + p  # right-end column lives on the last span
        alpha = {mu: 1.0}
        for k in range(1, p + 1):
            t = fk[i + k]
            new = {}
            for j, a in alpha.items():
                den = ck[j + k] - ck[j]
                if den > 0.0:
                    w = a * (t - ck[j]) / den
                    if w != 0.0:
                        new[j] = new.get(j, 0.0) + w
                    w = a * (ck[j + k] - t) / den
                    if w != 0.0:
                        new[j - 1] = new.get(j - 1, 0.0) + w
                else:
                    new[j] = new.get(j, 0.0) + a
            alpha = new
        for j, a in alpha.items():
            if 0 <= j < n_coarse and abs(a) > 1e-14:
                cols[i][j] = a
    offsets = np.zeros(n_coarse, dtype=int)
    rows = [None] * n_coarse
    by_row = [{} for _ in range(n_coarse)]
    for i, col in enumerate(cols):
        for j, a in col.items():
            by_row[j][i] = a
    for j in range(n_coarse):
        idx = sorted(by_row[j])
        offsets[j] = idx[0]
        row = np.zeros(idx[-1] - idx[0] + 1)
        for i in idx:
            row[i - idx[0]] = by_row[j][i]
        rows[j] = row
    return TwoScale(offsets, rows)


def dyadic_refine(kv):
    """Bisect every breakpoint interval; returns the child knot vector and
    the two-scale table expressing each coarse function on the child basis."""
    bp = kv.breakpoints
    mids = 0.5 * (bp[:-1] + bp[1:])
    child_bp = np.empty(bp.size + mids.size)
    child_bp[0::2] = bp
    child_bp[1::2] = mids
    child = KnotVector(kv.degree, child_bp)
    return child, _insertion_rows(kv, child)


@dataclass
class BasisEval:
    """Nonzero tensor-product basis functions at one parametric point.

    Functions are the (p1+1)*(p2+1) products indexed by the window starting
    at ``first``; flattening is row-major over (i, j) window offsets.
    hessians columns are (dxx, dxy, dyy).
    """

    first: tuple
    values: np.ndarray
    gradients: np.ndarray = None
    hessians: np.ndarray = None


class TensorSpace:
    """Tensor-product B-spline space on [0,1]^2 at one hierarchical level."""

    __slots__ = ("kvs", "level")

    def __init__(self, kvs, level=0):
        assert len(kvs) == 2
        self.kvs = tuple(kvs)
        self.level = int(level)

    @property
    def degrees(self):
        return self.kvs[0].degree, self.kvs[1].degree

    @property
    def n_cells(self):
        return self.kvs[0].n_cells, self.kvs[1].n_cells

    @property
    def n_dof(self):
        return self.kvs[0].n_dof * self.kvs[1].n_dof

    @property
    def n_dof_dir(self):
        return self.kvs[0].n_dof, self.kvs[1].n_dof

    def __repr__(self):
        return "TensorSpace(p=%s, cells=%s, level=%d)" % (
            self.degrees, self.n_cells, self.level)

    def cell_rect(self, cell):
        """Parametric rectangle (x0, x1, y0, y1) of cell index (i, j)."""
        i, j = cell
        x0, x1 = self.kvs[0].cell_interval(i)
        y0, y1 = self.kvs[1].cell_interval(j)
        return x0, x1, y0, y1

    def locate_cell(self, xy):
        """Cell (i, j) containing the point; right-open convention with the
        last cell owning its right endpoint."""
        i = int(np.clip(np.searchsorted(self.kvs[0].breakpoints, xy[0], side="right") - 1,
                        0, self.kvs[0].n_cells - 1))
        j = int(np.clip(np.searchsorted(self.kvs[1].breakpoints, xy[1], side="right") - 1,
                        0, self.kvs[1].n_cells - 1))
        return i, j

    def function_support_cells(self, fn):
        """Inclusive cell index ranges ((i0,i1),(j0,j1)) of function (i,j)."""
        i, j = fn
        return self.kvs[0].function_cells(i), self.kvs[1].function_cells(j)

    def cell_function_window(self, cell):
        """First function (i0, j0) of the (p1+1)x(p2+1) window nonzero on cell."""
        return cell[0], cell[1]

    def support_extension(self, cell):
        """Tensor product of the per-direction support extensions of cell."""
        i, j = cell
        ex = self.kvs[0].support_extension(i)
        ey = self.kvs[1].support_extension(j)
        return ex[0], ex[1], ey[0], ey[1]

    def eval_local(self, pts, cell, max_deriv=0):
        """Evaluate the function window of ``cell`` at points (n, 2).

        Points are expected on the closure of the cell; the spans are forced
        to the cell so values on shared edges are the limits from inside it.
        Returns arrays (values, gradients, hessians); the latter two are None
        below the requested derivative order.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        p1, p2 = self.degrees
        sx = np.full(n, self.kvs[0].cell_span(cell[0]), dtype=np.int64)
        sy = np.full(n, self.kvs[1].cell_span(cell[1]), dtype=np.int64)
        _, dx = kernels.basis_ders(self.kvs[0].knots, p1, pts[:, 0], max_deriv, spans=sx)
        _, dy = kernels.basis_ders(self.kvs[1].knots, p2, pts[:, 1], max_deriv, spans=sy)
        nf = (p1 + 1) * (p2 + 1)
        values = (dx[:, 0, :, None] * dy[:, 0, None, :]).reshape(n, nf)
        gradients = hessians = None
        if max_deriv >= 1:
            gradients = np.empty((n, nf, 2))
            gradients[:, :, 0] = (dx[:, 1, :, None] * dy[:, 0, None, :]).reshape(n, nf)
            gradients[:, :, 1] = (dx[:, 0, :, None] * dy[:, 1, None, :]).reshape(n, nf)
        if max_deriv >= 2:
            hessians = np.empty((n, nf, 3))
            hessians[:, :, 0] = (dx[:, 2, :, None] * dy[:, 0, None, :]).reshape(n, nf)
            hessians[:, :, 1] = (dx[:, 1, :, None] * dy[:, 1, None, :]).reshape(n, nf)
            hessians[:, :, 2] = (dx[:, 0, :, None] * dy[:, 2, None, :]).reshape(n, nf)
        return values, gradients, hessians

    def eval_basis(self, xy, max_deriv=0):
        """Nonzero tensor-product basis functions at one point."""
        if not (0.0 <= xy[0] <= 1.0 and 0.0 <= xy[1] <= 1.0):
            raise ValueError("evaluation point %r outside [0, 1]^2" % (xy,))
        cell = self.locate_cell(xy)
        values, gradients, hessians = self.eval_local(np.array([xy]), cell, max_deriv)
        return BasisEval(
            first=self.cell_function_window(cell),
            values=values[0],
            gradients=None if gradients is None else gradients[0],
            hessians=None if hessians is None else hessians[0],
        )

    def dyadic_refine(self):
        """Child space with every cell bisected plus per-direction two-scale
        tables."""
        kx, tx = dyadic_refine(self.kvs[0])
        ky, ty = dyadic_refine(self.kvs[1])
        return TensorSpace((kx, ky), level=self.level + 1), (tx, ty)


def support_extension(ts, cell):
    """Support extension of a Bezier cell of a tensor space (spec operation)."""
    return ts.support_extension(cell)
