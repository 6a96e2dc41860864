"""The four benchmark problems: geometry, manufactured data, initial meshes,
the exact energy-error evaluation, and log-log rate fitting helpers.

All cases are Poisson problems with data manufactured from a known solution:
f = -lap(u), Neumann data from the analytic gradient and the geometry
normals, Dirichlet data as the trace of u. The smooth cases live on the
identity map; the singular ones use the corner function r^(2/3) sin(2 phi/3)
whose gradient blows up at a re-entrant corner of the trimmed domain.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import solution_on_cell
from .geometry import (
    AxisRect,
    Disk,
    HalfPlane,
    TrimmedRegion,
    cut_cell_quadrature,
    identity_map,
    polar_annulus_map,
)
from .hierarchy import space_from_root
from .splines import TensorSpace, make_knot_vector

CASE_IDS = ("two-disks", "pentagon", "lshape", "lshape-mapped")
EPSILON_SET = (1e-5, 1e-6, 1e-7)


@dataclass
class BenchmarkCase:
    id: str
    degree: int
    theta: float
    epsilon: float
    mode: str
    mu: int
    max_dof: int
    max_levels: int
    map_id: str
    geomap: object
    region: TrimmedRegion
    dirichlet_sides: tuple
    breakpoints: tuple          # (bx, by)
    u: callable
    grad_u: callable
    f: callable
    singular_corner: tuple = None
    solver_rtol: float = 1e-11
    error_order_boost: int = 2

    def g_n(self, pts, normals):
        return (self.grad_u(pts) * normals).sum(axis=1)

    def g_d(self, pts):
        return self.u(pts)

    def initial_space(self):
        bx, by = self.breakpoints
        ts = TensorSpace((make_knot_vector(self.degree, bx),
                          make_knot_vector(self.degree, by)))
        return space_from_root(ts, mode="THB", mu=self.mu)

    def corner_cells(self, hs):
        """Active cells whose closure contains the singular corner; they get
        one extra quadrature subdivision."""
        if self.singular_corner is None:
            return set()
        cx, cy = self.singular_corner
        out = set()
        for cell in hs.cells():
            x0, x1, y0, y1 = hs.cell_rect(cell)
            if x0 <= cx <= x1 and y0 <= cy <= y1:
                out.add(cell)
        return out

    def energy_error(self, hs, index, coeffs, classification, order=None):
        return energy_error(hs, index, coeffs, self, classification, order)


def energy_error(hs, index, coeffs, case, classification, order=None):
    """Exact energy error ||grad(u - u_h)|| over the trimmed domain, using
    the clipped rules cell by cell (spec operation)."""
    if order is None:
        order = max(hs.degrees) + case.error_order_boost
    corner = case.corner_cells(hs)
    total = 0.0
    for cell in hs.cells():
        info = classification.cells[cell]
        if info.status == "exterior":
            continue
        rule = cut_cell_quadrature(classification, cell, order,
                                   subdivide=1 if cell in corner else 0)
        if rule.points.shape[0] == 0:
            continue
        _, grads, _ = solution_on_cell(hs, classification.geomap, index,
                                       coeffs, cell, rule.points, max_deriv=1)
        diff = case.grad_u(rule.phys_points) - grads
        total += float(rule.weights @ (diff * diff).sum(axis=1))
    return math.sqrt(total)


def _shifted_breakpoints(shift):
    return np.array([0.0, 0.25 + shift, 0.5 + shift, 0.75 + shift, 1.0])


def _corner_solution(center, span=1.5 * math.pi):
    """The harmonic corner function r^(2/3) sin(2 phi / 3) around ``center``
    with the angle unwrapped to [0, 2 pi); the domains using it occupy the
    sector [0, 3 pi / 2]."""
    cx, cy = center

    def u(pts):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        phi = np.arctan2(dy, dx) % (2 * math.pi)
        return r ** (2.0 / 3.0) * np.sin(2.0 * phi / 3.0)

    def grad_u(pts):
        dx = pts[:, 0] - cx
        dy = pts[:, 1] - cy
        r = np.hypot(dx, dy)
        phi = np.arctan2(dy, dx) % (2 * math.pi)
        safe = np.where(r > 0, r, 1.0)
        amp = (2.0 / 3.0) * safe ** (-1.0 / 3.0)
        s = np.sin(2.0 * phi / 3.0)
        c = np.cos(2.0 * phi / 3.0)
        gx = amp * (s * np.cos(phi) - c * np.sin(phi))
        gy = amp * (s * np.sin(phi) + c * np.cos(phi))
        zero = r <= 0
        if zero.any():
            gx = np.where(zero, 0.0, gx)
            gy = np.where(zero, 0.0, gy)
        return np.column_stack([gx, gy])

    def f(pts):
        return np.zeros(pts.shape[0])  # the corner function is harmonic

    return u, grad_u, f


def build_case(case_id, **overrides):
    """Benchmark case with its paper defaults, optionally overridden by
    degree/theta/epsilon/mode/mu/max_dof/max_levels (spec operation)."""
    if case_id not in CASE_IDS:
        raise ValueError("unknown case id %r (known: %s)"
                         % (case_id, ", ".join(CASE_IDS)))
    known = {"degree", "theta", "epsilon", "mode", "mu", "max_dof",
             "max_levels", "solver_rtol"}
    bad = set(overrides) - known
    if bad:
        raise ValueError("unknown case override %r" % (sorted(bad)[0],))

    defaults = {
        "two-disks": dict(degree=2, theta=0.8, epsilon=0.0, max_levels=None),
        "pentagon": dict(degree=3, theta=0.9, epsilon=1e-5, max_levels=None),
        "lshape": dict(degree=2, theta=0.9, epsilon=1e-5, max_levels=12),
        "lshape-mapped": dict(degree=3, theta=0.9, epsilon=1e-5, max_levels=12),
    }[case_id]
    opts = dict(mode="adaptive", max_dof=10000, mu=None, solver_rtol=1e-11)
    opts.update(defaults)
    opts.update(overrides)
    degree = int(opts["degree"])
    if degree < 2:
        raise ValueError("degree must be >= 2 (the discrete space must be C1)")
    mu = opts["mu"] or degree
    eps = float(opts["epsilon"])

    if case_id == "two-disks":
        bx = by = np.linspace(0.0, 1.0, 5)
        region = TrimmedRegion([Disk((0.25, 0.25), 0.1),
                                Disk((0.75, 0.75), 0.1)])
        geomap = identity_map()
        dirichlet = ("bottom",)
        map_id = "identity"

        def u(pts):
            return np.sin(3 * np.pi * pts[:, 0]) + np.cos(5 * np.pi * pts[:, 1])

        def grad_u(pts):
            return np.column_stack([
                3 * np.pi * np.cos(3 * np.pi * pts[:, 0]),
                -5 * np.pi * np.sin(5 * np.pi * pts[:, 1])])

        def f(pts):
            return (9 * np.pi ** 2 * np.sin(3 * np.pi * pts[:, 0])
                    + 25 * np.pi ** 2 * np.cos(5 * np.pi * pts[:, 1]))

        corner = None
    elif case_id == "pentagon":
        bx = _shifted_breakpoints(eps)
        by = _shifted_breakpoints(-eps)
        region = TrimmedRegion([HalfPlane.left_of((0.0, 0.25), (0.75, 1.0))])
        geomap = identity_map()
        dirichlet = ("bottom", "right")
        map_id = "identity"

        def u(pts):
            return np.arctan(15 * (pts[:, 0] - pts[:, 1] + 0.25))

        def grad_u(pts):
            s = pts[:, 0] - pts[:, 1] + 0.25
            g = 15.0 / (1 + 225 * s ** 2)
            return np.column_stack([g, -g])

        def f(pts):
            s = pts[:, 0] - pts[:, 1] + 0.25
            return 13500.0 * s / (1 + 225 * s ** 2) ** 2

        corner = None
    else:
        bx = _shifted_breakpoints(-eps)
        by = _shifted_breakpoints(eps)
        region = TrimmedRegion([AxisRect(0.5, 1.0, 0.0, 0.5)])
        dirichlet = ("top", "left")
        corner = (0.5, 0.5)
        if case_id == "lshape":
            geomap = identity_map()
            map_id = "identity"
            u, grad_u, f = _corner_solution((0.5, 0.5))
        else:
            geomap = polar_annulus_map((2.0, 0.0), 1.0, 3.0,
                                       7 * math.pi / 8, 9 * math.pi / 8)
            map_id = "polar-annulus"
            u, grad_u, f = _corner_solution((0.0, 0.0))

    return BenchmarkCase(
        id=case_id, degree=degree, theta=float(opts["theta"]), epsilon=eps,
        mode=opts["mode"], mu=mu, max_dof=int(opts["max_dof"]),
        max_levels=opts["max_levels"], map_id=map_id, geomap=geomap,
        region=region, dirichlet_sides=dirichlet, breakpoints=(bx, by),
        u=u, grad_u=grad_u, f=f, singular_corner=corner,
        solver_rtol=float(opts["solver_rtol"]))


def fit_slope(records, tail=None, value="energy_error"):
    """Least-squares slope of log(value) against log(n_dof) over the last
    ``tail`` records (default: the later half, at least 3)."""
    if tail is None:
        tail = max(3, len(records) // 2)
    recs = records[-tail:]
    x = np.log([r.n_dof for r in recs])
    y = np.log([getattr(r, value) for r in recs])
    A = np.column_stack([x, np.ones_like(x)])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(sol[0])


def asymptotic_effectivity(records, k=3):
    """Mean effectivity over the final k records."""
    recs = records[-k:]
    return float(np.mean([r.effectivity for r in recs]))
