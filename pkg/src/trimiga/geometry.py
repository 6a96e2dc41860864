"""Geometric maps, implicit trimming regions, and cut-cell integration.

The trimming region D is a union of primitives (disks, half-planes, axis
rectangles) defined in the parametric domain; the computational domain is
the parametric square minus D, pushed through the geometric map. Cell
classification clips every active cell exactly against the primitives;
quadrature rules on clipped cells, trimming-curve pieces, and boundary faces
carry physical-measure weights and, for curve rules, outward unit normals.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import clipping
from .clipping import (
    Piece,
    clip_circle_out,
    clip_halfplane,
    piece_area,
    piece_quadrature,
    rect_piece,
)

TOL = 1e-12


class GeometryError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# geometric maps

class GeoMap:
    """Analytic map from the parametric square to the physical domain.

    Provides values, Jacobians and per-component Hessians; the Jacobian must
    be nonsingular everywhere (the paper-style bi-Lipschitz requirement), but
    its determinant may have either sign.
    """

    def __init__(self, kind, params=None):
        self.kind = kind
        self.params = params or {}

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "identity":
            return pts.copy()
        c, r0, dr, phi0, dphi = self._polar()
        R = r0 + dr * pts[:, 1]
        phi = phi0 + dphi * pts[:, 0]
        return np.column_stack([c[0] + R * np.cos(phi), c[1] + R * np.sin(phi)])

    def _polar(self):
        p = self.params
        return (p["center"], p["r_inner"], p["r_outer"] - p["r_inner"],
                p["phi_start"], p["phi_end"] - p["phi_start"])

    def jacobian(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        J = np.zeros((n, 2, 2))
        if self.kind == "identity":
            J[:, 0, 0] = 1.0
            J[:, 1, 1] = 1.0
            return J
        c, r0, dr, phi0, dphi = self._polar()
        R = r0 + dr * pts[:, 1]
        phi = phi0 + dphi * pts[:, 0]
        J[:, 0, 0] = -R * dphi * np.sin(phi)
        J[:, 0, 1] = dr * np.cos(phi)
        J[:, 1, 0] = R * dphi * np.cos(phi)
        J[:, 1, 1] = dr * np.sin(phi)
        return J

    def hessians(self, pts):
        """Second derivatives, shape (n, component, 2, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = pts.shape[0]
        H = np.zeros((n, 2, 2, 2))
        if self.kind == "identity":
            return H
        c, r0, dr, phi0, dphi = self._polar()
        R = r0 + dr * pts[:, 1]
        phi = phi0 + dphi * pts[:, 0]
        cphi, sphi = np.cos(phi), np.sin(phi)
        H[:, 0, 0, 0] = -R * dphi * dphi * cphi
        H[:, 0, 0, 1] = H[:, 0, 1, 0] = -dr * dphi * sphi
        H[:, 1, 0, 0] = -R * dphi * dphi * sphi
        H[:, 1, 0, 1] = H[:, 1, 1, 0] = dr * dphi * cphi
        return H

    @property
    def is_identity(self):
        return self.kind == "identity"


def identity_map():
    return GeoMap("identity")


def polar_annulus_map(center, r_inner, r_outer, phi_start, phi_end):
    """Polar blend between two concentric arcs: maps the first parametric
    direction to angle and the second to radius."""
    return GeoMap("polar-annulus", dict(center=tuple(center), r_inner=r_inner,
                                        r_outer=r_outer, phi_start=phi_start,
                                        phi_end=phi_end))


# ---------------------------------------------------------------------------
# trimming primitives and regions

@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float


@dataclass(frozen=True)
class HalfPlane:
    """Open half-plane {x : normal . x > offset}."""
    normal: tuple
    offset: float

    @staticmethod
    def left_of(p, q):
        """Half-plane to the left of the directed line p -> q."""
        dx, dy = q[0] - p[0], q[1] - p[1]
        nrm = math.hypot(dx, dy)
        n = (-dy / nrm, dx / nrm)
        return HalfPlane(n, n[0] * p[0] + n[1] * p[1])


@dataclass(frozen=True)
class AxisRect:
    x0: float
    x1: float
    y0: float
    y1: float


class TrimmedRegion:
    """Trimmed-away region D as a union of primitives; the computational
    domain is the parametric square minus the closure of D."""

    def __init__(self, primitives=()):
        self.primitives = tuple(primitives)

    @property
    def empty(self):
        return not self.primitives

    def inside(self, pts):
        """Strict-interior membership in D, vectorized over points (n, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(pts.shape[0], dtype=bool)
        for prim in self.primitives:
            out |= _prim_inside_vec(prim, pts)
        return out

    def inside_point(self, pt):
        return bool(self.inside(np.asarray(pt, dtype=float)[None, :])[0])


def _prim_inside_vec(prim, pts):
    if isinstance(prim, Disk):
        d2 = (pts[:, 0] - prim.center[0]) ** 2 + (pts[:, 1] - prim.center[1]) ** 2
        return d2 < prim.radius ** 2
    if isinstance(prim, HalfPlane):
        return pts[:, 0] * prim.normal[0] + pts[:, 1] * prim.normal[1] > prim.offset
    return ((pts[:, 0] > prim.x0) & (pts[:, 0] < prim.x1)
            & (pts[:, 1] > prim.y0) & (pts[:, 1] < prim.y1))


def _prim_inside(prim, pt, closed=False):
    tol = TOL if closed else -TOL
    if isinstance(prim, Disk):
        d = math.hypot(pt[0] - prim.center[0], pt[1] - prim.center[1])
        return d < prim.radius + tol
    if isinstance(prim, HalfPlane):
        return pt[0] * prim.normal[0] + pt[1] * prim.normal[1] > prim.offset - tol
    return (prim.x0 - tol < pt[0] < prim.x1 + tol
            and prim.y0 - tol < pt[1] < prim.y1 + tol)


def _prim_rect_relation(prim, rect):
    """'disjoint' (no interior overlap), 'covers' (rect inside closure of the
    primitive), or 'overlap'."""
    x0, x1, y0, y1 = rect
    if isinstance(prim, Disk):
        cx, cy = prim.center
        dx = max(x0 - cx, 0.0, cx - x1)
        dy = max(y0 - cy, 0.0, cy - y1)
        if dx * dx + dy * dy >= prim.radius ** 2:
            return "disjoint"
        fx = max(abs(x0 - cx), abs(x1 - cx))
        fy = max(abs(y0 - cy), abs(y1 - cy))
        if fx * fx + fy * fy <= prim.radius ** 2:
            return "covers"
        return "overlap"
    if isinstance(prim, HalfPlane):
        nx, ny = prim.normal
        svals = [nx * x + ny * y - prim.offset
                 for x in (x0, x1) for y in (y0, y1)]
        if max(svals) <= 0.0:
            return "disjoint"
        if min(svals) >= 0.0:
            return "covers"
        return "overlap"
    ox = min(x1, prim.x1) - max(x0, prim.x0)
    oy = min(y1, prim.y1) - max(y0, prim.y0)
    if ox <= 0.0 or oy <= 0.0:
        return "disjoint"
    if prim.x0 <= x0 and x1 <= prim.x1 and prim.y0 <= y0 and y1 <= prim.y1:
        return "covers"
    return "overlap"


def _prim_subtract(prim, pieces):
    out = []
    if isinstance(prim, Disk):
        for pc in pieces:
            out.extend(clip_circle_out(pc, prim.center, prim.radius))
    elif isinstance(prim, HalfPlane):
        for pc in pieces:
            out.extend(clip_halfplane(pc, prim.normal, prim.offset))
    else:
        for pc in pieces:
            # disjoint cover of pc minus the rectangle by four clip columns
            out.extend(clip_halfplane(pc, (1.0, 0.0), prim.x0))
            for mc in clip_halfplane(pc, (-1.0, 0.0), -prim.x0):
                for ic in clip_halfplane(mc, (1.0, 0.0), prim.x1):
                    out.extend(clip_halfplane(ic, (0.0, 1.0), prim.y0))
                    out.extend(clip_halfplane(ic, (0.0, -1.0), -prim.y1))
                out.extend(clip_halfplane(mc, (-1.0, 0.0), -prim.x1))
    return out


def clip_cell(region, rect, primitives=None):
    """Pieces of rect minus the region (exact line/arc clipping)."""
    pieces = [rect_piece(*rect)]
    prims = region.primitives if primitives is None else primitives
    for prim in prims:
        pieces = _prim_subtract(prim, pieces)
        if not pieces:
            break
    return pieces


# ---------------------------------------------------------------------------
# trimming-curve (gamma) extraction

@dataclass
class GammaSeg:
    """One piece of the trimming boundary inside a cell.

    kind 'line': points p0 + t*(p1-p0); kind 'arc': circle(center, r) between
    angles a0 < a1. ``normal`` for lines is the unit parametric normal
    pointing out of the computational domain (into D); arcs use -radial.
    """
    kind: str
    p0: tuple = None
    p1: tuple = None
    center: tuple = None
    r: float = 0.0
    a0: float = 0.0
    a1: float = 0.0
    normal: tuple = None

    @property
    def param_length(self):
        if self.kind == "line":
            return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])
        return self.r * (self.a1 - self.a0)


def _line_param_circle(P, d, center, r):
    """t with |P + t d - center| = r, for unit direction d."""
    wx, wy = P[0] - center[0], P[1] - center[1]
    b = 2 * (d[0] * wx + d[1] * wy)
    c = wx * wx + wy * wy - r * r
    disc = b * b - 4 * c
    if disc <= 0:
        return []
    s = math.sqrt(disc)
    return [(-b - s) / 2, (-b + s) / 2]


def _line_param_line(P, d, n, c):
    den = n[0] * d[0] + n[1] * d[1]
    if abs(den) < 1e-15:
        return []
    return [(c - (n[0] * P[0] + n[1] * P[1])) / den]


def _prim_boundary_lines(prim):
    """Supporting lines (n, c) of a primitive's straight boundary parts."""
    if isinstance(prim, HalfPlane):
        return [(prim.normal, prim.offset)]
    if isinstance(prim, AxisRect):
        return [((1.0, 0.0), prim.x0), ((1.0, 0.0), prim.x1),
                ((0.0, 1.0), prim.y0), ((0.0, 1.0), prim.y1)]
    return []


def _curve_breaks_line(P, d, prims):
    ts = []
    for prim in prims:
        if isinstance(prim, Disk):
            ts.extend(_line_param_circle(P, d, prim.center, prim.radius))
        else:
            for n, c in _prim_boundary_lines(prim):
                ts.extend(_line_param_line(P, d, n, c))
    return ts


def _circle_breaks(center, r, prims, rect):
    angs = [0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]
    x0, x1, y0, y1 = rect
    cx, cy = center
    for v in (x0, x1):
        u = (v - cx) / r
        if abs(u) <= 1.0:
            a = math.acos(max(-1.0, min(1.0, u)))
            angs.extend([a, -a])
    for v in (y0, y1):
        u = (v - cy) / r
        if abs(u) <= 1.0:
            a = math.asin(max(-1.0, min(1.0, u)))
            angs.extend([a, math.pi - a])
    for prim in prims:
        if isinstance(prim, Disk):
            angs.extend(clipping._circle_circle_angles(center, r, prim.center,
                                                       prim.radius))
        else:
            for n, c in _prim_boundary_lines(prim):
                rr = math.hypot(n[0] * r, n[1] * r)
                C = n[0] * cx + n[1] * cy - c
                if rr > 0 and abs(C) < rr:
                    base = math.atan2(n[1], n[0])
                    da = math.acos(max(-1.0, min(1.0, -C / rr)))
                    angs.extend([base + da, base - da])
    return sorted(set(a % (2 * math.pi) for a in angs))


def _segment_lies_on_square_boundary(n, c):
    nx, ny = n
    if abs(ny) < 1e-14 and (abs(c / nx) < TOL or abs(c / nx - 1.0) < TOL):
        return True
    if abs(nx) < 1e-14 and (abs(c / ny) < TOL or abs(c / ny - 1.0) < TOL):
        return True
    return False


def gamma_segments(region, rect):
    """Pieces of the trimming boundary strictly inside the open cell."""
    segs = []
    prims = region.primitives
    x0, x1, y0, y1 = rect

    def predicate(pt, own):
        if not (x0 + TOL < pt[0] < x1 - TOL and y0 + TOL < pt[1] < y1 - TOL):
            return False
        for j, prim in enumerate(prims):
            if j != own and _prim_inside(prim, pt):
                return False
        return True

    for i, prim in enumerate(prims):
        others = [p for j, p in enumerate(prims) if j != i]
        if isinstance(prim, Disk):
            r = prim.radius
            angs = _circle_breaks(prim.center, r, others, rect)
            if not angs:
                angs = [0.0]
            k = len(angs)
            for idx in range(k):
                a = angs[idx]
                b = angs[(idx + 1) % k] + (2 * math.pi if idx + 1 == k else 0.0)
                if (b - a) * r < 1e-13:
                    continue
                mid = clipping.arc_point(prim.center, r, 0.5 * (a + b))
                if predicate(mid, i):
                    segs.append(GammaSeg("arc", center=prim.center, r=r,
                                         a0=a, a1=b))
        else:
            curves = []
            if isinstance(prim, HalfPlane):
                n = prim.normal
                P = (n[0] * prim.offset, n[1] * prim.offset)
                d = (-n[1], n[0])
                curves.append((P, d, -math.inf, math.inf, n))
            else:
                edges = [((prim.x0, prim.y0), (0.0, 1.0), prim.y1 - prim.y0, (-1.0, 0.0)),
                         ((prim.x1, prim.y0), (0.0, 1.0), prim.y1 - prim.y0, (1.0, 0.0)),
                         ((prim.x0, prim.y0), (1.0, 0.0), prim.x1 - prim.x0, (0.0, -1.0)),
                         ((prim.x0, prim.y1), (1.0, 0.0), prim.x1 - prim.x0, (0.0, 1.0))]
                # normals point out of the domain, i.e. into the rectangle
                for P, d, L, n_out in edges:
                    curves.append((P, d, 0.0, L, (-n_out[0], -n_out[1])))
            for P, d, ta, tb, nrm in curves:
                line_n = (-d[1], d[0])
                line_c = line_n[0] * P[0] + line_n[1] * P[1]
                if _segment_lies_on_square_boundary(line_n, line_c):
                    continue
                # clip the parameter window to the cell slab
                lo, hi = ta, tb
                for axis, (v0, v1) in ((0, (x0, x1)), (1, (y0, y1))):
                    if abs(d[axis]) < 1e-15:
                        if not (v0 - TOL <= P[axis] <= v1 + TOL):
                            lo, hi = 1.0, 0.0
                        continue
                    u0 = (v0 - P[axis]) / d[axis]
                    u1 = (v1 - P[axis]) / d[axis]
                    if u0 > u1:
                        u0, u1 = u1, u0
                    lo, hi = max(lo, u0), min(hi, u1)
                if hi - lo < 1e-13:
                    continue
                ts = sorted({lo, hi}
                            | {t for t in _curve_breaks_line(P, d, others)
                               if lo < t < hi})
                for a, b in zip(ts[:-1], ts[1:]):
                    if b - a < 1e-13:
                        continue
                    tm = 0.5 * (a + b)
                    mid = (P[0] + tm * d[0], P[1] + tm * d[1])
                    if predicate(mid, i):
                        segs.append(GammaSeg(
                            "line",
                            p0=(P[0] + a * d[0], P[1] + a * d[1]),
                            p1=(P[0] + b * d[0], P[1] + b * d[1]),
                            normal=nrm))
    return segs


def _gamma_normal_fn(seg):
    if seg.kind == "line":
        n = seg.normal
        return lambda th: np.broadcast_to(np.asarray(n), (th.shape[0], 2))
    return lambda th: np.column_stack([-np.cos(th), -np.sin(th)])


# ---------------------------------------------------------------------------
# classification

@dataclass
class CellGeometry:
    status: str                  # 'interior' | 'cut' | 'exterior'
    param_area: float
    measure: float               # physical |K ∩ Ω|
    h: float                     # physical diameter of the full cell
    pieces: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    approximate: bool = False


@dataclass
class FaceInfo:
    cell: object
    side: str                    # 'left' | 'right' | 'bottom' | 'top'
    fixed: float                 # value of the frozen coordinate
    t0: float                    # face interval in the running coordinate
    t1: float
    spans: list                  # sub-intervals on the Neumann boundary
    h: float                     # physical diameter of the full face
    measure: float               # physical |F ∩ Γ_N|
    cut: bool
    trimmed_dirichlet: bool = False


@dataclass
class Classification:
    space: object
    region: object
    geomap: object
    dirichlet_sides: tuple
    cells: dict
    neumann_faces: list
    dirichlet_faces: list
    flagged: list
    rule_cache: dict = field(default_factory=dict, repr=False)

    @property
    def omega_measure(self):
        return sum(c.measure for c in self.cells.values())

    def faces_of_cell(self, cell):
        return [f for f in self.neumann_faces if f.cell == cell]


@lru_cache(maxsize=64)
def _gauss01_cached(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _gauss01(n):
    return _gauss01_cached(n)


def physical_diameter(geomap, rect):
    x0, x1, y0, y1 = rect
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    pts = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1],
                    [xm, y0], [xm, y1], [x0, ym], [x1, ym]])
    phys = geomap(pts)
    d2 = ((phys[:, None, :] - phys[None, :, :]) ** 2).sum(axis=2)
    return math.sqrt(d2.max())


def _physical_measure(geomap, pieces, rect, interior, order=10):
    if geomap.is_identity:
        if interior:
            return (rect[1] - rect[0]) * (rect[3] - rect[2])
        return sum(piece_area(p) for p in pieces)
    if interior:
        gx, gw = _gauss01(order)
        X, Y = np.meshgrid(rect[0] + (rect[1] - rect[0]) * gx,
                           rect[2] + (rect[3] - rect[2]) * gx, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        w = np.outer(gw, gw).ravel() * (rect[1] - rect[0]) * (rect[3] - rect[2])
    else:
        chunks = [piece_quadrature(p, order) for p in pieces]
        pts = np.vstack([c[0] for c in chunks])
        w = np.concatenate([c[1] for c in chunks])
    if pts.size == 0:
        return 0.0
    J = geomap.jacobian(pts)
    det = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    return float(w @ det)


def _sample_classification(region, rect, n=64):
    """Membership-sampling fallback for degenerate clips."""
    x0, x1, y0, y1 = rect
    xs = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
    ys = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    outside = ~region.inside(pts)
    frac = outside.mean()
    return frac


SIDES = ("left", "right", "bottom", "top")


def _face_spans(region, side, fixed, t0, t1):
    """Sub-intervals of a boundary face outside the trimmed region."""
    spans = [(t0, t1)]
    horizontal = side in ("bottom", "top")

    def pt(t):
        return (t, fixed) if horizontal else (fixed, t)

    for prim in region.primitives:
        P = pt(0.0)
        d = (1.0, 0.0) if horizontal else (0.0, 1.0)
        cuts = []
        if isinstance(prim, Disk):
            cuts = _line_param_circle(P, d, prim.center, prim.radius)
        else:
            for n, c in _prim_boundary_lines(prim):
                cuts.extend(_line_param_line(P, d, n, c))
        new = []
        for a, b in spans:
            ts = sorted({a, b} | {t for t in cuts if a < t < b})
            for u, v in zip(ts[:-1], ts[1:]):
                # closed membership: faces running along the boundary of the
                # trimmed region are not part of the Neumann boundary
                if v - u > 1e-13 and not _prim_inside(prim, pt(0.5 * (u + v)),
                                                      closed=True):
                    new.append((u, v))
        spans = new
        if not spans:
            break
    return spans


def classify_cells(hs, region, geomap, dirichlet_sides=()):
    """Classify every active cell against the trimmed region and collect the
    boundary faces carrying Neumann or Dirichlet data (spec operation)."""
    for side in dirichlet_sides:
        if side not in SIDES:
            raise ValueError("unknown boundary side %r" % (side,))
    cells = {}
    flagged = []
    clipping.degenerate_loops = 0
    for cell in hs.cells():
        rect = hs.cell_rect(cell)
        h = physical_diameter(geomap, rect)
        cell_area = (rect[1] - rect[0]) * (rect[3] - rect[2])
        relations = [(p, _prim_rect_relation(p, rect)) for p in region.primitives]
        if any(rel == "covers" for _, rel in relations):
            cells[cell] = CellGeometry("exterior", 0.0, 0.0, h)
            continue
        overlapping = [p for p, rel in relations if rel == "overlap"]
        if not overlapping:
            pieces = [rect_piece(*rect)]
            measure = _physical_measure(geomap, pieces, rect, True)
            cells[cell] = CellGeometry("interior", cell_area, measure, h, pieces)
            continue
        before = clipping.degenerate_loops
        pieces = clip_cell(region, rect, overlapping)
        area = sum(piece_area(p) for p in pieces)
        bad = (clipping.degenerate_loops > before
               or not -1e-12 * cell_area <= area <= cell_area * (1 + 1e-12))
        if bad:
            frac = _sample_classification(region, rect)
            area = frac * cell_area
            pieces = [rect_piece(*rect)] if frac > 0.5 else []
            flagged.append(cell)
        rel_area = area / cell_area
        if rel_area <= 1e-13:
            cells[cell] = CellGeometry("exterior", 0.0, 0.0, h,
                                       approximate=bad)
            continue
        if rel_area >= 1.0 - 1e-13:
            pieces = [rect_piece(*rect)]
            measure = _physical_measure(geomap, pieces, rect, True)
            cells[cell] = CellGeometry("interior", cell_area, measure, h,
                                       pieces, approximate=bad)
            continue
        gamma = gamma_segments(region, rect)
        measure = _physical_measure(geomap, pieces, rect, False)
        cells[cell] = CellGeometry("cut", area, measure, h, pieces, gamma,
                                   approximate=bad)

    neumann = []
    dirichlet = []
    for cell in hs.cells():
        if cells[cell].status == "exterior":
            continue
        sp = hs.spaces[cell.level]
        n1, n2 = sp.n_cells
        rect = hs.cell_rect(cell)
        for side in SIDES:
            on = {"left": cell.i == 0, "right": cell.i == n1 - 1,
                  "bottom": cell.j == 0, "top": cell.j == n2 - 1}[side]
            if not on:
                continue
            horizontal = side in ("bottom", "top")
            t0, t1 = (rect[0], rect[1]) if horizontal else (rect[2], rect[3])
            fixed = {"left": 0.0, "right": 1.0, "bottom": 0.0, "top": 1.0}[side]
            if horizontal:
                frect = (t0, t1, fixed, fixed)
            else:
                frect = (fixed, fixed, t0, t1)
            hF = physical_diameter(geomap, frect)
            if side in dirichlet_sides:
                spans = _face_spans(region, side, fixed, t0, t1)
                full = spans == [(t0, t1)]
                dirichlet.append(FaceInfo(cell, side, fixed, t0, t1,
                                          [(t0, t1)], hF, 0.0, False,
                                          trimmed_dirichlet=not full))
                continue
            spans = _face_spans(region, side, fixed, t0, t1)
            if not spans:
                continue
            length = sum(b - a for a, b in spans)
            cut = length < (t1 - t0) - 1e-12
            face = FaceInfo(cell, side, fixed, t0, t1, spans, hF, 0.0, cut)
            face.measure = _face_measure(geomap, face)
            neumann.append(face)
    return Classification(hs, region, geomap, tuple(dirichlet_sides), cells,
                          neumann, dirichlet, flagged)


def _face_points(face, ts):
    if face.side in ("bottom", "top"):
        return np.column_stack([ts, np.full_like(ts, face.fixed)])
    return np.column_stack([np.full_like(ts, face.fixed), ts])


def _face_measure(geomap, face, order=8):
    gx, gw = _gauss01(order)
    total = 0.0
    tang = np.array([1.0, 0.0]) if face.side in ("bottom", "top") else np.array([0.0, 1.0])
    for a, b in face.spans:
        ts = a + (b - a) * gx
        pts = _face_points(face, ts)
        J = geomap.jacobian(pts)
        stretch = np.linalg.norm(J @ tang, axis=1)
        total += (b - a) * float(gw @ stretch)
    return total


# ---------------------------------------------------------------------------
# quadrature rules

@dataclass
class QuadRule:
    """Integration points in parametric and physical coordinates; weights
    include the physical measure factor. Boundary rules carry outward unit
    normals."""
    points: np.ndarray
    phys_points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray = None

    @property
    def total(self):
        return float(self.weights.sum())


_EMPTY_RULE = None


def _empty_rule():
    z = np.zeros((0, 2))
    return QuadRule(z, z.copy(), np.zeros(0))


def _abs_det(geomap, pts):
    if geomap.is_identity:
        return np.ones(pts.shape[0])
    J = geomap.jacobian(pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise GeometryError("singular geometric map Jacobian")
    return np.abs(det)


@lru_cache(maxsize=64)
def _tensor_pattern(n):
    gx, gw = _gauss01(n)
    X, Y = np.meshgrid(gx, gx, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    W = np.outer(gw, gw).ravel()
    P.setflags(write=False)
    W.setflags(write=False)
    return P, W


def _tensor_rule_on_rect(rect, n):
    P, W = _tensor_pattern(n)
    x0, x1, y0, y1 = rect
    pts = np.empty_like(P)
    pts[:, 0] = x0 + (x1 - x0) * P[:, 0]
    pts[:, 1] = y0 + (y1 - y0) * P[:, 1]
    return pts, W * ((x1 - x0) * (y1 - y0))


def _split_rect(rect, k):
    """2^k x 2^k dyadic subdivision of a rectangle."""
    x0, x1, y0, y1 = rect
    n = 2 ** k
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    return [(xs[i], xs[i + 1], ys[j], ys[j + 1])
            for i in range(n) for j in range(n)]


def cut_cell_quadrature(classification, cell, order, subdivide=0):
    """Rule on the active part K ∩ Ω of an interior or cut cell, exact to the
    requested polynomial order; interior cells get a tensor Gauss rule with
    (order+1)^2 points, cut cells a scanline rule on the clipped pieces."""
    key = ("cell", cell, order, subdivide)
    hit = classification.rule_cache.get(key)
    if hit is not None:
        return hit
    info = classification.cells[cell]
    if info.status == "exterior":
        return _empty_rule()
    rect = classification.space.cell_rect(cell)
    cell_area = (rect[1] - rect[0]) * (rect[3] - rect[2])
    if info.status == "cut" and info.param_area < 1e-16 * cell_area:
        return _empty_rule()
    n = order + 1
    region = classification.region
    pts_list, w_list = [], []
    for sub in ([rect] if subdivide == 0 else _split_rect(rect, subdivide)):
        if info.status == "interior":
            p, w = _tensor_rule_on_rect(sub, n)
            pts_list.append(p)
            w_list.append(w)
            continue
        if subdivide == 0:
            pieces = info.pieces
        else:
            rel = [(pr, _prim_rect_relation(pr, sub)) for pr in region.primitives]
            if any(r == "covers" for _, r in rel):
                continue
            over = [pr for pr, r in rel if r == "overlap"]
            if not over:
                p, w = _tensor_rule_on_rect(sub, n)
                pts_list.append(p)
                w_list.append(w)
                continue
            pieces = clip_cell(region, sub, over)
        for pc in pieces:
            p, w = piece_quadrature(pc, n)
            if p.size:
                pts_list.append(p)
                w_list.append(w)
    if not pts_list:
        return _empty_rule()
    pts = np.vstack(pts_list)
    w = np.concatenate(w_list)
    geomap = classification.geomap
    w = w * _abs_det(geomap, pts)
    rule = QuadRule(pts, geomap(pts), w)
    classification.rule_cache[key] = rule
    return rule


def _push_normals(geomap, pts, nhat):
    """Outward physical unit normals from parametric normals (Nanson with a
    sign correction for orientation-reversing maps)."""
    if geomap.is_identity:
        return np.array(nhat, dtype=float, copy=True)
    J = geomap.jacobian(pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1]
    Jinv[:, 0, 1] = -J[:, 0, 1]
    Jinv[:, 1, 0] = -J[:, 1, 0]
    Jinv[:, 1, 1] = J[:, 0, 0]
    # rows of Jinv/det are J^{-1}; J^{-T} nhat = (nhat^T J^{-1})^T
    n = np.einsum("pi,pij->pj", nhat, Jinv) * np.sign(det)[:, None]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return n


def trimming_boundary_quadrature(classification, cell, order):
    """Arc-length rule with outward normals on the trimming boundary pieces
    inside a cut cell."""
    key = ("gamma", cell, order)
    hit = classification.rule_cache.get(key)
    if hit is not None:
        return hit
    info = classification.cells[cell]
    geomap = classification.geomap
    gx, gw = _gauss01(order + 1)
    # trig integrands on arcs are never polynomial-exact; use enough nodes
    gxa, gwa = _gauss01(max(order + 1, 10))
    pts_list, w_list, n_list = [], [], []
    for seg in info.gamma:
        if seg.kind == "line":
            dx, dy = seg.p1[0] - seg.p0[0], seg.p1[1] - seg.p0[1]
            L = math.hypot(dx, dy)
            if L < 1e-15:
                continue
            tang = np.array([dx / L, dy / L])
            pts = np.column_stack([seg.p0[0] + gx * dx, seg.p0[1] + gx * dy])
            dparam = gw * L
            nhat = np.broadcast_to(np.asarray(seg.normal), (pts.shape[0], 2))
        else:
            th = seg.a0 + (seg.a1 - seg.a0) * gxa
            pts = np.column_stack([seg.center[0] + seg.r * np.cos(th),
                                   seg.center[1] + seg.r * np.sin(th)])
            dparam = gwa * seg.r * (seg.a1 - seg.a0)
            nhat = np.column_stack([-np.cos(th), -np.sin(th)])
            tang = np.column_stack([-np.sin(th), np.cos(th)])
        J = geomap.jacobian(pts)
        if seg.kind == "line":
            stretch = np.linalg.norm(J @ tang, axis=1)
        else:
            stretch = np.linalg.norm(np.einsum("pij,pj->pi", J, tang), axis=1)
        pts_list.append(pts)
        w_list.append(dparam * stretch)
        n_list.append(_push_normals(geomap, pts, np.ascontiguousarray(nhat)))
    if not pts_list:
        return _empty_rule()
    pts = np.vstack(pts_list)
    rule = QuadRule(pts, geomap(pts), np.concatenate(w_list), np.vstack(n_list))
    classification.rule_cache[key] = rule
    return rule


_SIDE_NORMALS = {"left": (-1.0, 0.0), "right": (1.0, 0.0),
                 "bottom": (0.0, -1.0), "top": (0.0, 1.0)}


def face_quadrature(classification, face, order, full=False):
    """Arc-length rule with outward normals on F ∩ Γ_N (or the full face)."""
    key = ("face", face.cell, face.side, order, full)
    hit = classification.rule_cache.get(key)
    if hit is not None:
        return hit
    geomap = classification.geomap
    gx, gw = _gauss01(order + 1)
    spans = [(face.t0, face.t1)] if full else face.spans
    tang = np.array([1.0, 0.0]) if face.side in ("bottom", "top") else np.array([0.0, 1.0])
    nhat0 = np.asarray(_SIDE_NORMALS[face.side])
    pts_list, w_list, n_list = [], [], []
    for a, b in spans:
        ts = a + (b - a) * gx
        pts = _face_points(face, ts)
        J = geomap.jacobian(pts)
        stretch = np.linalg.norm(J @ tang, axis=1)
        pts_list.append(pts)
        w_list.append(gw * (b - a) * stretch)
        n_list.append(_push_normals(geomap, pts,
                                    np.broadcast_to(nhat0, (pts.shape[0], 2))))
    if not pts_list:
        return _empty_rule()
    pts = np.vstack(pts_list)
    rule = QuadRule(pts, geomap(pts), np.concatenate(w_list), np.vstack(n_list))
    classification.rule_cache[key] = rule
    return rule


# ---------------------------------------------------------------------------
# pullbacks

def pullback_batch(geomap, pts, grads, hessians=None):
    """Physical gradients (and Laplacians, when parametric Hessians are
    given) of basis functions evaluated in parametric coordinates.

    grads: (npts, nf, 2) parametric gradients; hessians: (npts, nf, 3) with
    columns (dxx, dxy, dyy). Returns (phys_grads, laplacians-or-None).
    """
    if geomap.is_identity:
        if hessians is None:
            return grads, None
        return grads, hessians[:, :, 0] + hessians[:, :, 2]
    J = geomap.jacobian(pts)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise GeometryError("singular geometric map Jacobian")
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    phys_grads = np.einsum("pji,pfj->pfi", Jinv, grads)
    if hessians is None:
        return phys_grads, None
    Hhat = np.empty((pts.shape[0], grads.shape[1], 2, 2))
    Hhat[:, :, 0, 0] = hessians[:, :, 0]
    Hhat[:, :, 0, 1] = Hhat[:, :, 1, 0] = hessians[:, :, 1]
    Hhat[:, :, 1, 1] = hessians[:, :, 2]
    HF = geomap.hessians(pts)  # (p, comp, 2, 2)
    M = Hhat - np.einsum("pfc,pcab->pfab", phys_grads, HF)
    lap = np.einsum("pai,pfab,pbi->pf", Jinv, M, Jinv)
    return phys_grads, lap


def map_pullback(geomap, point, basis_eval):
    """Physical gradients and Laplacians of the functions in a basis
    evaluation at one parametric point (spec operation)."""
    pts = np.asarray(point, dtype=float)[None, :]
    grads = basis_eval.gradients[None, :, :]
    hess = None if basis_eval.hessians is None else basis_eval.hessians[None, :, :]
    g, lap = pullback_batch(geomap, pts, grads, hess)
    return g[0], (None if lap is None else lap[0])
