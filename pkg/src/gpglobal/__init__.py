"""Deterministic global optimization of trained Gaussian process surrogates.

Reduced-space branch-and-bound with McCormick relaxations propagated through
the GP posterior, tight envelopes for the covariance functions and the
Bayesian-optimization acquisition functions, and a full-space formulation
for comparison.
"""

from .interval import Interval
from .mccormick import Relaxation
from .envelopes import AcquisitionSpec
from .gp import GPModel, build_model, load_model, predict_mean, predict_variance, save_model
from .train import PriorSpec, lhs_sample, map_train
from .problem import (Problem, build_acquisition, build_chance_constrained,
                      build_fs_mean, build_rs_mean)
from .bnb import BnBResult, Settings, solve

__all__ = [
    "AcquisitionSpec", "BnBResult", "GPModel", "Interval", "PriorSpec",
    "Problem", "Relaxation", "Settings", "build_acquisition", "build_model",
    "build_chance_constrained", "build_fs_mean", "build_rs_mean",
    "lhs_sample", "load_model", "map_train", "predict_mean",
    "predict_variance", "save_model", "solve",
]
