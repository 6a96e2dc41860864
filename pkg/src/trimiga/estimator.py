"""Residual a posteriori error estimator with cut-element scalings.

Per-cell contributions combine the interior residual, the Neumann face
residuals of the faces attached to the cell, and (on cut cells) the residual
on the trimming boundary. Cut cells and cut faces replace the mesh size in
the residual weights by a log-corrected power of the clipped measure, which
is what makes the bound insensitive to how the trimming curve cuts the mesh.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assembly import solution_on_cell
from .geometry import (
    cut_cell_quadrature,
    face_quadrature,
    trimming_boundary_quadrature,
)


def eta_constant(tol=1e-15):
    """Unique positive solution of eta = -log(eta), by bisection of
    g(t) = t + log(t) on the bracket (0.1, 1)."""
    lo, hi = 0.1, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid + math.log(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_ETA = eta_constant()


def cut_scaling(measure, n_dim=2, eta=_ETA):
    """Constant c_S of a cut entity with clipped measure |S|: for n = 2 it is
    max(-log|S|, eta)^(1/2); for n = 3 it would be 1."""
    if n_dim == 3:
        return 1.0
    return math.sqrt(max(-math.log(measure), eta))


@dataclass
class ScalingConstants:
    """Residual weights: delta_K per cell, delta_F per Neumann face (aligned
    with classification.neumann_faces), and the c_S values behind them."""
    eta: float
    delta_cell: dict
    c_cell: dict
    delta_face: list
    c_face: list


def scaling(classification, n_dim=2):
    """Residual scalings of every non-exterior cell and Neumann face: plain
    h for uncut entities, c_S |S|^(1/n) (cells) or c_S |S|^(1/(2(n-1)))
    (faces) for cut ones (spec operation)."""
    delta_cell = {}
    c_cell = {}
    for cell, info in classification.cells.items():
        if info.status == "exterior":
            continue
        if info.status == "interior":
            delta_cell[cell] = info.h
            c_cell[cell] = None
        else:
            if info.measure <= 0.0:
                raise RuntimeError("cut cell %r with zero clipped measure"
                                   % (cell,))
            c = cut_scaling(info.measure, n_dim)
            c_cell[cell] = c
            delta_cell[cell] = c * info.measure ** (1.0 / n_dim)
    delta_face = []
    c_face = []
    for face in classification.neumann_faces:
        if not face.cut:
            delta_face.append(math.sqrt(face.h))
            c_face.append(None)
        else:
            c = cut_scaling(face.measure, n_dim)
            c_face.append(c)
            delta_face.append(c * face.measure ** (1.0 / (2 * (n_dim - 1))))
    return ScalingConstants(_ETA, delta_cell, c_cell, delta_face, c_face)


@dataclass
class EstimatorBreakdown:
    """Per-cell squared contributions of the three residual families and the
    global estimator value."""
    cells: list
    interior2: dict
    face2: dict
    gamma2: dict
    scalings: ScalingConstants

    def cell_total2(self, cell):
        return (self.interior2.get(cell, 0.0) + self.face2.get(cell, 0.0)
                + self.gamma2.get(cell, 0.0))

    @property
    def total(self):
        return math.sqrt(sum(self.cell_total2(c) for c in self.cells))

    def contributions(self):
        """(cell, E_K^2) pairs in deterministic cell order."""
        return [(c, self.cell_total2(c)) for c in self.cells]


def estimate(hs, coeffs, index, classification, f, g_n, order=None,
             corner_cells=()):
    """Assemble the estimator: interior residuals delta_K^2 ||f + lap u_h||^2
    on K cap Omega, Neumann face residuals delta_F^2 ||g_N - dn u_h||^2, and
    h_K-weighted trimming-boundary residuals on cut cells (spec operation)."""
    geomap = classification.geomap
    if order is None:
        order = max(hs.degrees) + 2
    scal = scaling(classification)
    corner_cells = set(corner_cells)
    interior2 = {}
    face2 = {}
    gamma2 = {}
    cells = hs.cells()
    for cell in cells:
        info = classification.cells[cell]
        if info.status == "exterior":
            continue
        rule = cut_cell_quadrature(classification, cell, order,
                                   subdivide=1 if cell in corner_cells else 0)
        if rule.points.shape[0]:
            _, _, laps = solution_on_cell(hs, geomap, index, coeffs, cell,
                                          rule.points, max_deriv=2)
            r = f(rule.phys_points) + laps
            interior2[cell] = scal.delta_cell[cell] ** 2 * float(rule.weights @ r ** 2)
        if info.status == "cut" and info.gamma:
            grule = trimming_boundary_quadrature(classification, cell, order)
            if grule.points.shape[0]:
                _, grads, _ = solution_on_cell(hs, geomap, index, coeffs, cell,
                                               grule.points, max_deriv=1)
                j = g_n(grule.phys_points, grule.normals) \
                    - (grads * grule.normals).sum(axis=1)
                gamma2[cell] = info.h * float(grule.weights @ j ** 2)
    for face, dF in zip(classification.neumann_faces, scal.delta_face):
        rule = face_quadrature(classification, face, order)
        if rule.points.shape[0] == 0:
            continue
        _, grads, _ = solution_on_cell(hs, geomap, index, coeffs, face.cell,
                                       rule.points, max_deriv=1)
        j = g_n(rule.phys_points, rule.normals) - (grads * rule.normals).sum(axis=1)
        face2[face.cell] = face2.get(face.cell, 0.0) \
            + dF ** 2 * float(rule.weights @ j ** 2)
    return EstimatorBreakdown(cells, interior2, face2, gamma2, scal)
