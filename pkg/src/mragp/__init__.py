"""Scalable Bayesian spatiotemporal Gaussian-process inference.

Multi-resolution basis approximation of the latent field, importance
sampling over covariance hyperparameters, and exact dense references for
validation at small scale.
"""

from ._core import BACKEND
from .geo import EARTH_RADIUS_KM, PointSet, SpatioTemporalPoint, haversine_km, temporal_gap
from .kernels import NUGGET, HyperParams, PriorSpec, cov_matrix, log_hyper_prior, matern15, temporal_corr
from .partition import PartitionConfig, RegionTree, build_tree, place_knots
from .sparse import SparseMatrix, SparseSymMatrix, amd_order, analyze, factorize
from .basis import (
    BasisLayout,
    BasisSystem,
    BoundPoints,
    GammaBlocks,
    assemble_H,
    basis_matrix,
    build_full_conditional,
    build_gamma_and_bases,
    evaluate_basis_row,
)
from .inference import (
    ISResult,
    MarginalSummary,
    ModeResult,
    Posterior,
    PredictionResult,
    Proposal,
    build_proposal,
    find_mode,
    importance_sample,
    marginal_summaries,
    predict,
    run_pipeline,
    skew_normal_from_moments,
    skew_normal_moments,
    summarize_atoms,
    summarize_mixture,
)
from .dense import DenseGP, dense_evidence, dense_predict, simulate
from .report import Metrics, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EARTH_RADIUS_KM",
    "NUGGET",
    "BasisLayout",
    "BasisSystem",
    "BoundPoints",
    "DenseGP",
    "GammaBlocks",
    "HyperParams",
    "ISResult",
    "MarginalSummary",
    "Metrics",
    "ModeResult",
    "PartitionConfig",
    "PointSet",
    "Posterior",
    "PredictionResult",
    "PriorSpec",
    "Proposal",
    "RegionTree",
    "SparseMatrix",
    "SparseSymMatrix",
    "SpatioTemporalPoint",
    "amd_order",
    "analyze",
    "assemble_H",
    "basis_matrix",
    "build_full_conditional",
    "build_gamma_and_bases",
    "build_proposal",
    "build_tree",
    "compute_metrics",
    "cov_matrix",
    "dense_evidence",
    "dense_predict",
    "evaluate_basis_row",
    "factorize",
    "find_mode",
    "haversine_km",
    "importance_sample",
    "log_hyper_prior",
    "marginal_summaries",
    "matern15",
    "place_knots",
    "predict",
    "run_pipeline",
    "simulate",
    "skew_normal_from_moments",
    "skew_normal_moments",
    "summarize_atoms",
    "summarize_mixture",
    "temporal_corr",
    "temporal_gap",
]
