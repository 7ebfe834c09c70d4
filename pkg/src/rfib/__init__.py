"""Renyi fair information bottleneck: fair, compact representations of tabular data."""

from .divergences import (
    DiagGaussian,
    SphericalPrior,
    kl_div,
    max_valid_variance,
    renyi_div,
    renyi_div_grad,
    renyi_div_oracle,
)
from .loss import LossBreakdown, RfibConfig, cfb_loss, ib_loss, rfib_loss
from .metrics import BaselineSummary, MetricsReport, accuracy_metrics, cai, dp_gap, eqodds_gap, ita
from .model import ModelParams, NoiseSource, backward, decode_y, decode_ys, embed_mean, encode
from .datasets import Dataset, SyntheticSpec, generate, load_csv, missing_subgroup_split
from .trainer import SweepGrid, TrainSettings, evaluate, fit_downstream, sweep, train

__version__ = "0.1.0"
