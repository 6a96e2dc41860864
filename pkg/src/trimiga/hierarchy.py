"""Hierarchical B-spline spaces on dyadic domain hierarchies.

Covers the domain hierarchy bookkeeping, HB/THB active-function recursion,
per-cell extraction of active functions onto the cell's own level (with
truncation in THB mode), multilevel support extensions, neighborhoods,
class-mu admissibility checking, and recursive admissible refinement.

Cells and functions are addressed as (level, i, j) with i, j grid indices in
that level's tensor space; dyadic nesting makes parent/child arithmetic an
index shift.
"""

from typing import NamedTuple

import numpy as np

from .splines import TensorSpace


class Cell(NamedTuple):
    level: int
    i: int
    j: int


class Fun(NamedTuple):
    level: int
    i: int
    j: int


class DomainHierarchy:
    """Nested subdomains of [0,1]^2 of a given depth.

    The level-ell subdomain (ell >= 1) is stored as the set of level-(ell-1)
    cells whose union it is: ``refined[ell-1]``. Level 0 is the full domain
    and the level-``depth`` subdomain is empty.
    """

    __slots__ = ("depth", "refined")

    def __init__(self, depth, refined=()):
        refined = [frozenset(s) for s in refined]
        if depth < 1 or len(refined) != depth - 1:
            raise ValueError("need depth-1 refined-cell sets for depth %d" % depth)
        for ell in range(1, len(refined)):
            for (i, j) in refined[ell]:
                if (i // 2, j // 2) not in refined[ell - 1]:
                    raise ValueError(
                        "hierarchy not nested: level-%d cell (%d,%d) is outside "
                        "the level-%d subdomain" % (ell, i, j, ell))
        self.depth = depth
        self.refined = refined

    def __eq__(self, other):
        return self.depth == other.depth and self.refined == other.refined


def _children(cells):
    out = set()
    for (i, j) in cells:
        out.update(((2 * i, 2 * j), (2 * i + 1, 2 * j),
                    (2 * i, 2 * j + 1), (2 * i + 1, 2 * j + 1)))
    return out


def _support_in_domain(space, fn, domain_cells):
    (i0, i1), (j0, j1) = space.function_support_cells(fn)
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            if (i, j) not in domain_cells:
                return False
    return True


def _funcs_touching(space, cells):
    p1, p2 = space.degrees
    out = set()
    for (i, j) in cells:
        for a in range(i, i + p1 + 1):
            for b in range(j, j + p2 + 1):
                out.add((a, b))
    return out


class HierarchicalSpace:
    """Hierarchical (truncated) B-spline space over a domain hierarchy.

    Frozen after construction; :func:`refine` returns a new space. Evaluation
    goes through per-cell extraction matrices expressing every active
    function nonzero on a cell in the tensor basis of the cell's level,
    which is exact because coarser functions are spanned by finer levels and
    truncated components vanish on coarser active cells.
    """

    def __init__(self, spaces, two_scale, hierarchy, mode="THB", mu=2):
        if mode not in ("THB", "HB"):
            raise ValueError("mode must be 'THB' or 'HB'")
        if mu < 2:
            raise ValueError("admissibility class mu must be >= 2")
        if len(spaces) != hierarchy.depth:
            raise ValueError("need one tensor space per hierarchy level")
        self.spaces = list(spaces)
        self.two_scale = list(two_scale)  # (tx, ty) for step ell-1 -> ell
        self.hierarchy = hierarchy
        self.mode = mode
        self.mu = int(mu)
        self._compute_active()
        self._cell_basis_cache = {}
        self._window_cache = {}
        self._funcs_sorted = None

    # -- construction ------------------------------------------------------

    def _compute_active(self):
        """Active cells and the HB recursion for active/born functions."""
        L = len(self.spaces)
        refined = self.hierarchy.refined
        self.active_cells = []
        for ell in range(L):
            if ell == 0:
                n1, n2 = self.spaces[0].n_cells
                dom = {(i, j) for i in range(n1) for j in range(n2)}
            else:
                dom = _children(refined[ell - 1])
            cut = refined[ell] if ell < L - 1 else frozenset()
            self.active_cells.append(dom - cut)

        n1, n2 = self.spaces[0].n_dof_dir
        self.active_funcs = [{(a, b) for a in range(n1) for b in range(n2)}]
        self.born_funcs = [set(self.active_funcs[0])]
        for ell in range(1, L):
            dom = refined[ell - 1]
            space_prev = self.spaces[ell - 1]
            keep = {f for f in self.active_funcs[ell - 1]
                    if not _support_in_domain(space_prev, f, dom)}
            self.active_funcs[ell - 1] = keep
            child_dom = _children(dom)
            space = self.spaces[ell]
            born = {f for f in _funcs_touching(space, child_dom)
                    if _support_in_domain(space, f, child_dom)}
            self.born_funcs.append(born)
            self.active_funcs.append(set(born))

    @property
    def n_levels(self):
        return len(self.spaces)

    @property
    def degrees(self):
        return self.spaces[0].degrees

    @property
    def n_active_levels(self):
        """Number of levels carrying active cells."""
        return 1 + max(ell for ell, s in enumerate(self.active_cells) if s)

    def cells(self):
        """All active cells, sorted."""
        return [Cell(ell, i, j)
                for ell in range(self.n_levels)
                for (i, j) in sorted(self.active_cells[ell])]

    def functions(self):
        """All active functions, sorted; this ordering defines dof ids."""
        if self._funcs_sorted is None:
            self._funcs_sorted = [Fun(ell, i, j)
                                  for ell in range(self.n_levels)
                                  for (i, j) in sorted(self.active_funcs[ell])]
        return self._funcs_sorted

    @property
    def n_functions(self):
        return sum(len(s) for s in self.active_funcs)

    def cell_rect(self, cell):
        return self.spaces[cell.level].cell_rect((cell.i, cell.j))

    def is_active_cell(self, cell):
        return (cell.i, cell.j) in self.active_cells[cell.level]

    # -- point location ----------------------------------------------------

    def locate_cell(self, xy):
        """Active cell whose closure owns the point (right-open convention)."""
        ell = 0
        refined = self.hierarchy.refined
        while True:
            ij = self.spaces[ell].locate_cell(xy)
            if ell < len(refined) and ij in refined[ell]:
                ell += 1
                continue
            return Cell(ell, *ij)

    # -- extraction --------------------------------------------------------

    def _window_matrix(self, ell, axis, coarse_lo, fine_lo):
        """Local two-scale block for the step ell-1 -> ell on one axis."""
        key = (ell, axis, coarse_lo, fine_lo)
        M = self._window_cache.get(key)
        if M is None:
            p = self.degrees[axis]
            M = self.two_scale[ell - 1][axis].window_matrix(coarse_lo, fine_lo, p)
            self._window_cache[key] = M
        return M

    def cell_basis(self, cell, truncate=None):
        """Active functions nonzero on an active cell and their coefficients
        on the (p1+1)(p2+1) tensor functions of the cell's level.

        Returns (funs, C) with C of shape (len(funs), (p1+1)*(p2+1)). With
        truncate=True rows are the THB (truncated) representations; rows of
        deactivated-by-truncation functions would be zero and are dropped.
        """
        if truncate is None:
            truncate = self.mode == "THB"
        key = (cell, truncate)
        hit = self._cell_basis_cache.get(key)
        if hit is not None:
            return hit
        ell, ci, cj = cell
        p1, p2 = self.degrees
        funs = []
        rows = []
        for k in range(ell + 1):
            ai, aj = ci >> (ell - k), cj >> (ell - k)
            active = self.active_funcs[k]
            for a in range(ai, ai + p1 + 1):
                for b in range(aj, aj + p2 + 1):
                    if (a, b) not in active:
                        continue
                    R = np.zeros((p1 + 1, p2 + 1))
                    R[a - ai, b - aj] = 1.0
                    wi, wj = ai, aj
                    for m in range(k + 1, ell + 1):
                        fi, fj = ci >> (ell - m), cj >> (ell - m)
                        M1 = self._window_matrix(m, 0, wi, fi)
                        M2 = self._window_matrix(m, 1, wj, fj)
                        R = M1.T @ R @ M2
                        if truncate:
                            born = self.born_funcs[m]
                            for aa in range(p1 + 1):
                                for bb in range(p2 + 1):
                                    if R[aa, bb] != 0.0 and (fi + aa, fj + bb) in born:
                                        R[aa, bb] = 0.0
                        wi, wj = fi, fj
                    if np.any(R != 0.0):
                        funs.append(Fun(k, a, b))
                        rows.append(R.ravel())
        C = np.array(rows) if rows else np.zeros((0, (p1 + 1) * (p2 + 1)))
        self._cell_basis_cache[key] = (funs, C)
        return funs, C

    def eval_on_cell(self, cell, pts, max_deriv=0, truncate=None):
        """Evaluate all active functions nonzero on ``cell`` at points (n,2).

        Returns (funs, values, gradients, hessians); derivative arrays are
        None below the requested order. Points should lie on the closure of
        the cell.
        """
        funs, C = self.cell_basis(cell, truncate)
        V, G, H = self.spaces[cell.level].eval_local(pts, (cell.i, cell.j), max_deriv)
        values = V @ C.T
        gradients = None if G is None else np.einsum("pnd,fn->pfd", G, C)
        hessians = None if H is None else np.einsum("pnd,fn->pfd", H, C)
        return funs, values, gradients, hessians


class HierBasisEval(NamedTuple):
    """Active functions nonzero at a point with values and derivatives."""
    functions: list
    values: np.ndarray
    gradients: np.ndarray
    hessians: np.ndarray


def build_space(levels, hierarchy, mode="THB", mu=2):
    """Assemble a hierarchical space from dyadically nested tensor-product
    levels and a domain hierarchy (spec operation).

    The two-scale tables are recomputed from level 0; the given levels must
    match that dyadic chain or the hierarchy is rejected as non-nested.
    """
    if len(levels) != hierarchy.depth:
        raise ValueError("need one tensor space per hierarchy level")
    spaces = [levels[0]]
    two_scale = []
    for ell in range(1, len(levels)):
        child, ts = spaces[-1].dyadic_refine()
        for ax in range(2):
            got = levels[ell].kvs[ax]
            if (got.degree != child.kvs[ax].degree
                    or got.breakpoints.size != child.kvs[ax].breakpoints.size
                    or not np.allclose(got.breakpoints, child.kvs[ax].breakpoints)):
                raise ValueError("level %d is not the dyadic refinement of level %d"
                                 % (ell, ell - 1))
        spaces.append(child)
        two_scale.append(ts)
    return HierarchicalSpace(spaces, two_scale, hierarchy, mode, mu)


def space_from_root(root, mode="THB", mu=2):
    """Depth-1 hierarchical space over a single tensor-product level."""
    return build_space([root], DomainHierarchy(1), mode, mu)


def eval_hier_basis(hs, xy, max_deriv=0):
    """All active functions nonzero at a parametric point, each evaluated
    through its expansion on the level of the active cell containing it."""
    if not (0.0 <= xy[0] <= 1.0 and 0.0 <= xy[1] <= 1.0):
        raise ValueError("point %r outside [0,1]^2" % (xy,))
    cell = hs.locate_cell(xy)
    funs, V, G, H = hs.eval_on_cell(cell, np.asarray(xy, dtype=float)[None, :], max_deriv)
    return HierBasisEval(funs, V[0],
                         None if G is None else G[0],
                         None if H is None else H[0])


def multilevel_support_extension(hs, cell, k):
    """Support extension of the level-k ancestor cell containing ``cell``."""
    if k > cell.level:
        raise ValueError("requested level %d exceeds cell level %d" % (k, cell.level))
    shift = cell.level - k
    return hs.spaces[k].support_extension((cell.i >> shift, cell.j >> shift))


def _cells_meeting_rect(space, rect):
    """Grid index windows of the cells of ``space`` whose interior meets the
    open rectangle (x0, x1, y0, y1)."""
    x0, x1, y0, y1 = rect
    bx = space.kvs[0].breakpoints
    by = space.kvs[1].breakpoints
    i_lo = max(0, np.searchsorted(bx, x0, side="right") - 1)
    i_hi = min(space.n_cells[0] - 1, np.searchsorted(bx, x1, side="left") - 1)
    j_lo = max(0, np.searchsorted(by, y0, side="right") - 1)
    j_hi = min(space.n_cells[1] - 1, np.searchsorted(by, y1, side="left") - 1)
    return range(i_lo, i_hi + 1), range(j_lo, j_hi + 1)


def neighborhood(hs, cell, mu, active_cells=None):
    """Coarse active cells whose refinement must precede this cell's: the
    active cells of level ``lev-mu+1`` meeting the multilevel support
    extension with respect to level ``lev-mu+2``; empty below level mu-1."""
    m = cell.level - mu + 1
    if m < 0:
        return set()
    rect = multilevel_support_extension(hs, cell, m + 1)
    if active_cells is None:
        active_cells = hs.active_cells
    act = active_cells[m]
    ri, rj = _cells_meeting_rect(hs.spaces[m], rect)
    return {Cell(m, i, j) for i in ri for j in rj if (i, j) in act}


def refine(hs, marked):
    """Subdivide the marked active cells, recursively refining neighborhoods
    first so the result stays T-admissible of class mu (spec operation).

    Returns a new space; ``hs`` is unchanged.
    """
    marked = [c if isinstance(c, Cell) else Cell(*c) for c in marked]
    for c in marked:
        if not (0 <= c.level < hs.n_levels and hs.is_active_cell(c)):
            raise ValueError("marked cell %r is not an active cell" % (c,))
    if not marked:
        return hs

    spaces = list(hs.spaces)
    two_scale = list(hs.two_scale)
    refined = [set(s) for s in hs.hierarchy.refined]
    active_cells = [set(s) for s in hs.active_cells]
    work = hs  # only used for spaces/degrees via neighborhood helper
    subdivided = set()

    def ensure_level(ell):
        while len(spaces) <= ell:
            child, ts = spaces[-1].dyadic_refine()
            spaces.append(child)
            two_scale.append(ts)
            refined.append(set())
            active_cells.append(set())

    def subdivide(cell):
        ensure_level(cell.level + 1)
        refined[cell.level].add((cell.i, cell.j))
        active_cells[cell.level].discard((cell.i, cell.j))
        active_cells[cell.level + 1].update(_children([(cell.i, cell.j)]))
        subdivided.add(cell)

    class _View:
        """Just enough of the space interface for neighborhood()."""
        def __init__(self):
            self.spaces = spaces
            self.active_cells = active_cells
            self.degrees = work.degrees

    view = _View()

    def refine_recursive(cell):
        stack = [(cell, False)]
        while stack:
            cur, expanded = stack.pop()
            if cur in subdivided:
                continue
            if expanded:
                if (cur.i, cur.j) in active_cells[cur.level]:
                    subdivide(cur)
            else:
                stack.append((cur, True))
                for nb in sorted(neighborhood(view, cur, hs.mu,
                                              active_cells=active_cells),
                                 reverse=True):
                    stack.append((nb, False))

    for cell in sorted(marked):
        refine_recursive(cell)

    while len(refined) >= len(spaces):  # keep one refined set per step
        refined.pop()
    hierarchy = DomainHierarchy(len(spaces), refined)
    return HierarchicalSpace(spaces, two_scale, hierarchy, hs.mode, hs.mu)


def check_admissibility(hs):
    """Class-mu admissibility via the function-level-span criterion: on every
    active cell the (truncated) active functions that are nonzero there must
    belong to at most mu successive levels. Returns (ok, violating cells)."""
    violators = []
    for cell in hs.cells():
        funs, _ = hs.cell_basis(cell, truncate=True)
        if funs:
            levels = [f.level for f in funs]
            if max(levels) - min(levels) + 1 > hs.mu:
                violators.append(cell)
    return not violators, violators


def function_expansion(hs, fun, to_level, truncate=None):
    """Global expansion of an active function on the tensor basis of a finer
    level, with truncation applied per level in THB mode.

    Returns a dict (i, j) -> coefficient. Intended for oracles and small
    spaces; cost grows with the support at the target level.
    """
    if truncate is None:
        truncate = hs.mode == "THB"
    fun = fun if isinstance(fun, Fun) else Fun(*fun)
    if to_level < fun.level:
        raise ValueError("target level below the function's level")
    coeffs = {(fun.i, fun.j): 1.0}
    for m in range(fun.level + 1, to_level + 1):
        tx, ty = hs.two_scale[m - 1]
        nxt = {}
        for (a, b), c in coeffs.items():
            offx, rowx = tx.row(a)
            offy, rowy = ty.row(b)
            for t1, c1 in enumerate(rowx):
                for t2, c2 in enumerate(rowy):
                    w = c * c1 * c2
                    if w != 0.0:
                        key = (offx + t1, offy + t2)
                        nxt[key] = nxt.get(key, 0.0) + w
        if truncate:
            born = hs.born_funcs[m] if m < len(hs.born_funcs) else set()
            for key in list(nxt):
                if key in born:
                    del nxt[key]
        coeffs = nxt
    return coeffs
