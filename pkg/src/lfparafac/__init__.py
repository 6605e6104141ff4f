"""Latent functional PARAFAC decomposition."""
from .covariance import CovarianceField, assemble
from .cpd_baseline import CPD, cpd_als
from .data_model import Dataset, LongitudinalSample, load_csv, sparsify, write_csv
from .exceptions import (
    ConfigError,
    DataFormatError,
    DegenerateComponentError,
    InsufficientDataError,
    LFParafacError,
    NumericalError,
    RankDeficiencyError,
    SmoothingError,
)
from .inference import predict_scores, psi_star, reconstruct
from .lf_parafac import FitReport, LFParafac, LfParafacModel, fit_lf_parafac
from .model_selection import log_likelihood, select_rank_aic, select_rank_lcv
from .simulation import SimConfig, generate, max_principal_angle, rmse, run_benchmark
from .tensor_core import DenseTensor, FactorSet, cp_reconstruct, khatri_rao, matricize, vectorize

__version__ = "0.1.0"

__all__ = [
    "CPD",
    "ConfigError",
    "CovarianceField",
    "DataFormatError",
    "Dataset",
    "DegenerateComponentError",
    "DenseTensor",
    "FactorSet",
    "FitReport",
    "InsufficientDataError",
    "LFParafac",
    "LFParafacError",
    "LfParafacModel",
    "LongitudinalSample",
    "NumericalError",
    "RankDeficiencyError",
    "SimConfig",
    "SmoothingError",
    "assemble",
    "cp_reconstruct",
    "cpd_als",
    "fit_lf_parafac",
    "generate",
    "khatri_rao",
    "load_csv",
    "log_likelihood",
    "matricize",
    "max_principal_angle",
    "predict_scores",
    "psi_star",
    "reconstruct",
    "rmse",
    "run_benchmark",
    "select_rank_aic",
    "select_rank_lcv",
    "sparsify",
    "vectorize",
    "write_csv",
]
