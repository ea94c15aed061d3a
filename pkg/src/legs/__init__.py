"""Learnable geometric scattering on graphs.

Diffusion wavelets built from a lazy random walk, a learnable selection of
diffusion scales, scattering moments, task heads with explicit gradients, a
training and cross-validation harness, and an executable property suite.
"""
from .graph import Graph, build_graph, diffusion_cascade
from .filter_bank import ScaleSequence, dyadic_scales, frame_lower_constant
from .learnable import SelectionParams, init_theta, legs_apply, selection_matrix
from .scattering import ScatteringConfig, transform, transform_batch
from .model import LegsModel
from .trainer import TrainConfig, crossval, train

__version__ = "0.1.0"

__all__ = [
    "Graph", "build_graph", "diffusion_cascade",
    "ScaleSequence", "dyadic_scales", "frame_lower_constant",
    "SelectionParams", "init_theta", "legs_apply", "selection_matrix",
    "ScatteringConfig", "transform", "transform_batch",
    "LegsModel", "TrainConfig", "crossval", "train",
]
