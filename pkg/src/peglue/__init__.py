"""Numerical toolkit for boundary-connected-sum gluing of
Poincare-Einstein metrics."""

from .grid import (
    Grid,
    GridError,
    ScalarField,
    SymTensor2Field,
    load_field,
    make_boundary_grid,
    make_grid,
    save_field,
)
from .tensor_calculus import (
    BoundaryMetric,
    CCMetric,
    MarchingError,
    MetricError,
    boundary_metric,
    einstein_deviation,
    normal_form,
    ricci_cc,
    scalar_curvature,
)
from .gauge import GaugeContext, bianchi, gauged_residual, linearized
from .indicial import IndicialSpectrum, fredholm_window, indicial_roots
from .glue import GluedAtlas, discrepancy, glue_boundary, glue_metrics, residual_study
from .weights import WeightSpec, defining_function, neck_weight, weighted_norm
from .solve import LinearSystem, SolveReport, assemble, fixed_point, kernel_probe, linear_solve

__version__ = "0.1.0"

__all__ = [
    "Grid", "GridError", "ScalarField", "SymTensor2Field",
    "load_field", "make_boundary_grid", "make_grid", "save_field",
    "BoundaryMetric", "CCMetric", "MarchingError", "MetricError",
    "boundary_metric", "einstein_deviation", "normal_form", "ricci_cc",
    "scalar_curvature",
    "GaugeContext", "bianchi", "gauged_residual", "linearized",
    "IndicialSpectrum", "fredholm_window", "indicial_roots",
    "GluedAtlas", "discrepancy", "glue_boundary", "glue_metrics",
    "residual_study",
    "WeightSpec", "defining_function", "neck_weight", "weighted_norm",
    "LinearSystem", "SolveReport", "assemble", "fixed_point",
    "kernel_probe", "linear_solve",
    "__version__",
]
