"""Tensor-framed option pricing: autodiff core, Black-Scholes, deep models, training and evaluation."""
from .autodiff import Adam, Tensor, backward, no_grad
from .blackscholes import BsInputs, GreeksVector, bs_greeks, bs_price, implied_vol
from .errors import OptensorError
from .evaluation import EvalReport, compute_metrics, evaluate, evaluate_bs, evaluate_naive
from .kernels import BACKEND
from .market_data import (
    FeatureTensorSet, NormStats, OptionRecord, SyntheticConfig, build_windows, filter_min_lifetime,
    fit_normalization, generate_synthetic, load_csv, split_by_option, write_csv,
)
from .models import MODEL_KINDS, ModelConfig, bs_baseline_predict, build_model
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
