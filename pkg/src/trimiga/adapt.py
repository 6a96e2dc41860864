"""Doerfler marking with ghost-element closure and the adaptive loop.

One iteration runs classify -> assemble -> solve -> estimate -> record ->
mark -> refine; marking picks a greedy prefix of cells sorted by decreasing
squared contribution until the Doerfler fraction is reached, then extends
the set with the ghost elements needed so that functions whose in-domain
support is fully marked really get deactivated on refinement.
"""

import time
from dataclasses import dataclass

from .assembly import SolverError, assemble, impose_dirichlet, solve
from .estimator import estimate
from .geometry import classify_cells
from .hierarchy import Cell, refine


@dataclass
class MarkingResult:
    """Doerfler-marked cells, the ghost cells appended afterwards, and the
    achieved squared fraction of the total estimator."""
    marked: set
    ghosts: set
    theta: float
    achieved_fraction: float

    @property
    def all_cells(self):
        return self.marked | self.ghosts


@dataclass
class IterationRecord:
    """One row of an adaptive (or uniform) run."""
    iteration: int
    n_dof: int
    n_levels: int
    energy_error: float
    estimator: float
    effectivity: float
    n_marked: int
    wall_time: float


class AdaptiveRunError(RuntimeError):
    """Solver failure inside the loop; partial records are preserved."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def doerfler_mark(breakdown, theta):
    """Greedy-prefix Doerfler marking on squared cell contributions, ties
    broken by cell id; exterior cells carry zero contribution and are never
    picked (spec operation)."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("marking parameter theta must be in (0, 1]")
    contribs = sorted(breakdown.contributions(), key=lambda t: (-t[1], t[0]))
    total = sum(e for _, e in contribs)
    if total <= 0.0:
        return MarkingResult(set(), set(), theta, 0.0)
    target = theta * theta * total
    acc = 0.0
    marked = set()
    for cell, e in contribs:
        if acc >= target or e <= 0.0:
            break
        marked.add(cell)
        acc += e
    return MarkingResult(marked, set(), theta, acc / total)


def add_ghosts(hs, classification, marked):
    """Extend a marked set with the ghost elements: for every marked cut
    cell K, the exterior active cells of the same level sharing the support
    of some active function with K (spec operation)."""
    out = set(marked)
    p1, p2 = hs.degrees
    for cell in marked:
        info = classification.cells.get(cell)
        if info is None or info.status != "cut":
            continue
        lev = cell.level
        act_lev = hs.active_cells[lev]
        for k in range(lev + 1):
            shift = lev - k
            ai, aj = cell.i >> shift, cell.j >> shift
            space = hs.spaces[k]
            for a in range(ai, ai + p1 + 1):
                for b in range(aj, aj + p2 + 1):
                    if (a, b) not in hs.active_funcs[k]:
                        continue
                    (i0, i1), (j0, j1) = space.function_support_cells((a, b))
                    for ii in range(i0 << shift, ((i1 + 1) << shift)):
                        for jj in range(j0 << shift, ((j1 + 1) << shift)):
                            if (ii, jj) not in act_lev:
                                continue
                            cand = Cell(lev, ii, jj)
                            if cand in out:
                                continue
                            ci = classification.cells.get(cand)
                            if ci is not None and ci.status == "exterior":
                                out.add(cand)
    return out


def adapt_loop(case, mode=None, on_iteration=None):
    """Run the solve-estimate-mark-refine loop of a benchmark case until the
    dof or level budget is exhausted (spec operation).

    In uniform mode every active cell is refined each iteration instead of
    marking. Returns the list of per-iteration records; a solver failure
    raises AdaptiveRunError carrying the records produced so far.
    """
    mode = mode or case.mode
    if mode not in ("adaptive", "uniform"):
        raise ValueError("mode must be 'adaptive' or 'uniform'")
    hs = case.initial_space()
    records = []
    iteration = 0
    while True:
        t0 = time.perf_counter()
        cls = classify_cells(hs, case.region, case.geomap, case.dirichlet_sides)
        corner = case.corner_cells(hs)
        system = assemble(hs, cls, case.f, case.g_n, corner_cells=corner)
        impose_dirichlet(system, hs, cls, case.g_d)
        try:
            coeffs = solve(system, rtol=case.solver_rtol)
        except SolverError as exc:
            raise AdaptiveRunError("solver failed at iteration %d: %s"
                                   % (iteration, exc), records) from exc
        error = case.energy_error(hs, system.index, coeffs, cls)
        breakdown = estimate(hs, coeffs, system.index, cls, case.f, case.g_n,
                             corner_cells=corner)
        est = breakdown.total
        n_dof = system.index.n
        n_levels = hs.n_active_levels
        stop = (n_dof > case.max_dof
                or (case.max_levels is not None and n_levels > case.max_levels)
                or est == 0.0)
        to_refine = set()
        n_marked = 0
        if not stop:
            if mode == "uniform":
                to_refine = set(hs.cells())
            else:
                mk = doerfler_mark(breakdown, case.theta)
                ghosts = add_ghosts(hs, cls, mk.marked) - mk.marked
                mk.ghosts = ghosts
                to_refine = mk.all_cells
            n_marked = len(to_refine)
            if not to_refine:
                stop = True
        record = IterationRecord(iteration, n_dof, n_levels, error, est,
                                 est / error if error > 0 else float("inf"),
                                 n_marked, time.perf_counter() - t0)
        records.append(record)
        if on_iteration is not None:
            on_iteration(hs, cls, breakdown, record)
        if stop:
            return records
        hs = refine(hs, to_refine)
        iteration += 1
