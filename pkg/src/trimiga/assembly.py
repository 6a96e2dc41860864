"""Galerkin assembly of the Poisson system on the trimmed space.

Stiffness and load are integrated cell by cell with the clipped rules on cut
cells; Neumann data enters from boundary faces and from the trimming curve.
Dirichlet values are fitted on the untrimmed Dirichlet faces by a boundary
least-squares projection and eliminated symmetrically. The solver is a
Jacobi-scaled conjugate gradient iteration with a residual history.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import (
    cut_cell_quadrature,
    face_quadrature,
    pullback_batch,
    trimming_boundary_quadrature,
)


class SolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals if residuals is not None else []


@dataclass
class TrimmedBasisIndex:
    """Dof numbering of the active functions whose support meets the trimmed
    domain, with Dirichlet-candidate flags."""
    functions: list
    index: dict
    dirichlet: np.ndarray

    @property
    def n(self):
        return len(self.functions)


def build_basis_index(hs, classification):
    """Active functions nonzero on some cell with positive clipped measure,
    i.e. the basis of the trimmed approximation space."""
    keep = set()
    for cell in hs.cells():
        if classification.cells[cell].status == "exterior":
            continue
        funs, _ = hs.cell_basis(cell)
        keep.update(funs)
    functions = sorted(keep)
    index = {f: i for i, f in enumerate(functions)}
    dirichlet = np.zeros(len(functions), dtype=bool)
    sides = classification.dirichlet_sides
    for i, f in enumerate(functions):
        n1, n2 = hs.spaces[f.level].n_dof_dir
        if (("left" in sides and f.i == 0) or ("right" in sides and f.i == n1 - 1)
                or ("bottom" in sides and f.j == 0) or ("top" in sides and f.j == n2 - 1)):
            dirichlet[i] = True
    return TrimmedBasisIndex(functions, index, dirichlet)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    index: TrimmedBasisIndex = None
    constrained: np.ndarray = None
    constrained_values: np.ndarray = None
    residuals: list = field(default_factory=list)

    @property
    def n(self):
        return self.rhs.shape[0]


def assemble(hs, classification, f, g_n, order=None, corner_cells=()):
    """Stiffness matrix and load vector of the trimmed Poisson problem.

    f maps physical points (n,2) to values; g_n maps (points, outward unit
    normals) to Neumann data. Cells listed in corner_cells get one extra
    dyadic quadrature subdivision (used near solution singularities).
    """
    geomap = classification.geomap
    if order is None:
        order = max(hs.degrees)
    idx = build_basis_index(hs, classification)
    rows, cols, vals = [], [], []
    rhs = np.zeros(idx.n)
    corner_cells = set(corner_cells)
    for cell in hs.cells():
        info = classification.cells[cell]
        if info.status == "exterior":
            continue
        rule = cut_cell_quadrature(classification, cell, order,
                                   subdivide=1 if cell in corner_cells else 0)
        if rule.points.shape[0] == 0:
            continue
        funs, V, G, _ = hs.eval_on_cell(cell, rule.points, max_deriv=1)
        gids = np.fromiter((idx.index[fn] for fn in funs), dtype=np.int64,
                           count=len(funs))
        pg, _ = pullback_batch(geomap, rule.points, G)
        A_loc = np.einsum("pfd,pgd,p->fg", pg, pg, rule.weights)
        rows.append(np.repeat(gids, gids.size))
        cols.append(np.tile(gids, gids.size))
        vals.append(A_loc.ravel())
        rhs_loc = V.T @ (rule.weights * f(rule.phys_points))
        np.add.at(rhs, gids, rhs_loc)
        if info.status == "cut" and info.gamma:
            grule = trimming_boundary_quadrature(classification, cell, order)
            if grule.points.shape[0]:
                _, Vg, _, _ = hs.eval_on_cell(cell, grule.points)
                gn = g_n(grule.phys_points, grule.normals)
                np.add.at(rhs, gids, Vg.T @ (grule.weights * gn))
    for face in classification.neumann_faces:
        rule = face_quadrature(classification, face, order)
        if rule.points.shape[0] == 0:
            continue
        funs, V, _, _ = hs.eval_on_cell(face.cell, rule.points)
        gids = np.fromiter((idx.index[fn] for fn in funs), dtype=np.int64,
                           count=len(funs))
        gn = g_n(rule.phys_points, rule.normals)
        np.add.at(rhs, gids, V.T @ (rule.weights * gn))
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(idx.n, idx.n)).tocsr()
    return SparseSystem(A, rhs, idx, idx.dirichlet.copy(),
                        np.zeros(idx.n))


def impose_dirichlet(system, hs, classification, g_d, order=None):
    """Fit g_d on the Dirichlet trace by boundary least squares and mark the
    fitted dofs for symmetric elimination.

    The Dirichlet boundary must consist of full untrimmed faces; a face
    meeting the trimming curve is rejected.
    """
    for face in classification.dirichlet_faces:
        if face.trimmed_dirichlet:
            raise ValueError("Dirichlet boundary intersects the trimming "
                             "curve; only untrimmed Dirichlet faces are "
                             "supported")
    idx = system.index
    if order is None:
        order = max(hs.degrees) + 2
    cand = np.where(idx.dirichlet)[0]
    if cand.size == 0:
        system.constrained = np.zeros(idx.n, dtype=bool)
        return system
    pos = {g: k for k, g in enumerate(cand)}
    M = np.zeros((cand.size, cand.size))
    r = np.zeros(cand.size)
    for face in classification.dirichlet_faces:
        rule = face_quadrature(classification, face, order, full=True)
        funs, V, _, _ = hs.eval_on_cell(face.cell, rule.points)
        sel = [k for k, fn in enumerate(funs) if idx.index[fn] in pos]
        if not sel:
            continue
        loc = [pos[idx.index[funs[k]]] for k in sel]
        Vb = V[:, sel]
        Mloc = Vb.T @ (rule.weights[:, None] * Vb)
        gd = g_d(rule.phys_points)
        rloc = Vb.T @ (rule.weights * gd)
        M[np.ix_(loc, loc)] += Mloc
        r[loc] += rloc
    diag = np.diag(M)
    live = diag > 1e-14 * max(diag.max(), 1e-300)
    values = np.zeros(cand.size)
    if live.any():
        sol, *_ = np.linalg.lstsq(M[np.ix_(live, live)], r[live], rcond=None)
        values[live] = sol
    constrained = np.zeros(idx.n, dtype=bool)
    constrained[cand[live]] = True
    system.constrained = constrained
    system.constrained_values = np.zeros(idx.n)
    system.constrained_values[cand] = values
    return system


def solve(system, rtol=1e-12, maxiter=None, x0=None):
    """Jacobi-scaled conjugate gradients on the constrained system.

    Iterates until the unscaled relative algebraic residual drops below
    rtol; raises SolverError carrying the residual history when the
    iteration cap is reached. Returns the full coefficient vector with the
    constrained values filled in.
    """
    A = system.matrix
    con = system.constrained if system.constrained is not None \
        else np.zeros(system.n, dtype=bool)
    free = ~con
    vals = system.constrained_values if system.constrained_values is not None \
        else np.zeros(system.n)
    b = system.rhs[free] - A[free][:, con] @ vals[con]
    Aff = A[free][:, free].tocsr()
    n = b.shape[0]
    if n == 0:
        return vals.copy()
    d = Aff.diagonal()
    if np.any(d <= 0):
        raise SolverError("nonpositive stiffness diagonal on free dofs")
    s = 1.0 / np.sqrt(d)
    bt = s * b
    bnorm = np.linalg.norm(b)
    if maxiter is None:
        maxiter = max(500, 2 * n)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)[free] / s
    resid = []

    def matvec(v):
        return s * (Aff @ (s * v))

    r = bt - matvec(x)
    res = np.linalg.norm(r / s)
    resid.append(res)
    tol = rtol * (bnorm if bnorm > 0 else 1.0)
    p = r.copy()
    rz = float(r @ r)
    it = 0
    while res > tol:
        if it >= maxiter:
            system.residuals = resid
            raise SolverError("conjugate gradients did not reach rtol=%g in "
                              "%d iterations (residual %.3e)"
                              % (rtol, maxiter, res / max(bnorm, 1e-300)),
                              residuals=resid)
        Ap = matvec(p)
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rz_new = float(r @ r)
        p = r + (rz_new / rz) * p
        rz = rz_new
        res = np.linalg.norm(r / s)
        resid.append(res)
        it += 1
    system.residuals = resid
    out = vals.copy()
    out[free] = s * x
    return out


def solution_on_cell(hs, geomap, index, coeffs, cell, pts, max_deriv=0):
    """Discrete solution on one active cell at parametric points (n, 2)."""
    funs, V, G, H = hs.eval_on_cell(cell, pts, max_deriv=max_deriv)
    c = np.array([coeffs[index.index[fn]] if fn in index.index else 0.0
                  for fn in funs])
    values = V @ c
    grads = laps = None
    if max_deriv >= 1:
        pg, lap = pullback_batch(geomap, pts, G, H)
        grads = np.einsum("pfd,f->pd", pg, c)
        if max_deriv >= 2:
            laps = lap @ c
    return values, grads, laps


def eval_solution(hs, geomap, index, coeffs, points, max_deriv=0):
    """Discrete solution values (and physical gradients / Laplacians) at
    parametric points (n, 2). Returns (values, gradients, laplacians)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    values = np.zeros(n)
    grads = np.zeros((n, 2)) if max_deriv >= 1 else None
    laps = np.zeros(n) if max_deriv >= 2 else None
    groups = {}
    for k in range(n):
        groups.setdefault(hs.locate_cell(points[k]), []).append(k)
    for cell, ids in groups.items():
        ids = np.asarray(ids)
        v, g, l = solution_on_cell(hs, geomap, index, coeffs, cell,
                                   points[ids], max_deriv)
        values[ids] = v
        if max_deriv >= 1:
            grads[ids] = g
            if max_deriv >= 2:
                laps[ids] = l
    return values, grads, laps
