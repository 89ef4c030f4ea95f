"""Simulation and approximate Bayesian inference for adaptive trait evolution.

Six models couple a response trait following an Ornstein-Uhlenbeck process
to an optimum driven by predictor traits (Brownian motion or OU) and to a
rate of evolution that is constant, Brownian or Cox-Ingersoll-Ross.
"""

from .models import ModelKind, ModelParams, RegressionParams, SimSettings, TraitDataset
from .phylo import PhyloTree, parse_newick, preorder, to_newick
from .rng import RngStream, rng_stream

__all__ = ["ModelKind", "ModelParams", "PhyloTree", "RegressionParams", "RngStream",
           "SimSettings", "TraitDataset", "parse_newick", "preorder", "rng_stream", "to_newick"]
__version__ = "0.1.0"
