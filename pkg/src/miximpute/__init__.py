"""Bayesian multiple imputation with sparse conditional Gaussian mixtures,
Polya-Gamma Gibbs sampling, a latent-Gaussian layer for binary/count
outcomes, and loss-based bootstrap inference on the imputed data."""

from .cgmm import ComponentParams, MixingParams, ModelParams, PriorConfig
from .data_model import CsvSchema, Dataset, ImputationDraws, VariableKind
from .errors import MiximputeError, NumericalError, ValidationError
from .gibbs import ChainConfig, ChainState, run_chain
from .ilb import (
    IlbResult,
    MeanLoss,
    PriorWeight,
    QuadraticRegressionLoss,
    QuantileLoss,
    ilb_run,
    summarize,
)
from .rng import RngStream
from .simbench import ScenarioSpec, SimConfig, run_replications

__version__ = "0.1.0"
