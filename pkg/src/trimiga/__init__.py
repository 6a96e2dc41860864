"""Adaptive isogeometric Poisson solver on trimmed hierarchical B-spline
geometries, with a residual a posteriori error estimator whose cut-element
scalings make it robust to arbitrarily small trimmed cell overlaps."""

__version__ = "0.1.0"
