"""Monte Carlo effective degrees of freedom for linear and non-linear fitters."""

from __future__ import annotations

from .engine import DataModel, DfEstimate, ReplicateDraw, draw_replicate, estimate_df, estimate_df_both
from .fitters import (OLS, AxisSubset, BestSubset, BestSubsetPath, Constant, FitResult, Fitter,
                      ForwardStepwise, ForwardStepwisePath, PointSet, Ridge)
from .linalg import DesignMatrix, Subspace, least_squares, numerical_rank, project_subspace

__version__ = "0.1.0"

__all__ = [
    "DataModel", "DfEstimate", "ReplicateDraw", "draw_replicate", "estimate_df", "estimate_df_both",
    "OLS", "AxisSubset", "BestSubset", "BestSubsetPath", "Constant", "FitResult", "Fitter",
    "ForwardStepwise", "ForwardStepwisePath", "PointSet", "Ridge",
    "DesignMatrix", "Subspace", "least_squares", "numerical_rank", "project_subspace",
]
