"""
lensrig: geodesic scattering and lens data on surfaces with boundary.

Modules
-------
geometry  metrics (conformal planar, surfaces of revolution), curvature
domain    boundary curves, convexity classification, scenes
flow      adaptive geodesic tracing, scattering tables, Jacobi fields
lens      scattering and lens comparison of scene pairs
pgeo      p-geodesics, piecewise energy, curve shortening
scenes    JSON scene specs, built-in registry, closed-form oracles
cli       command-line front end (``python -m lensrig``)
"""

from .domain import S_MINUS, S_PLUS, S_ZERO, Scene
from .flow import (
    IntegratorCfg,
    ScatterGrid,
    certify_no_conjugate_points,
    exp_points,
    jacobi,
    scattering_map,
    self_intersections,
    trace,
    trace_batch,
)
from .geometry import ChartPoint, DomainError, KinkError, TangentVec, get_metric, metric_names
from .lens import (
    BoundaryIsometry,
    LensCfg,
    compare,
    excess,
    first_variation_check,
    pair_excess,
    tangent_limit_excess,
)
from .pgeo import (
    PGeoCfg,
    PGeodesicPath,
    PiecewiseKnots,
    local_pgeodesic,
    piecewise_energy,
    shorten,
    uniqueness_radius,
)
from .scenes import load_pair, load_scene, pair_names, registry_names, registry_truths

__version__ = "0.1.0"

__all__ = [
    "S_MINUS", "S_PLUS", "S_ZERO", "Scene",
    "IntegratorCfg", "ScatterGrid", "certify_no_conjugate_points", "exp_points", "jacobi", "scattering_map",
    "self_intersections", "trace", "trace_batch",
    "ChartPoint", "DomainError", "KinkError", "TangentVec", "get_metric", "metric_names",
    "BoundaryIsometry", "LensCfg", "compare", "excess", "first_variation_check", "pair_excess", "tangent_limit_excess",
    "PGeoCfg", "PGeodesicPath", "PiecewiseKnots", "local_pgeodesic", "piecewise_energy", "shorten",
    "uniqueness_radius",
    "load_pair", "load_scene", "pair_names", "registry_names", "registry_truths",
]
