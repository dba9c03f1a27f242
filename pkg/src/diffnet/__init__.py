"""Decentralized diffusion SGD and saddle-point escape-time experiments."""

from .engine import DiffusionSystem, DivergenceError, NetworkState, StepConfig, diffusion_step
from .landscape import NNSaddleLoss, Quadratic, StochasticOracle
from .stationarity import ClassifierParams, Region, classify, measure_escape
from .topology import (
    CombinationPolicy,
    Graph,
    NoiseProfile,
    asymmetric_mh_policy,
    build_graph,
    perron_vector,
    uniform_policy,
)

__version__ = "0.1.0"

__all__ = [
    "DiffusionSystem",
    "DivergenceError",
    "NetworkState",
    "StepConfig",
    "diffusion_step",
    "NNSaddleLoss",
    "Quadratic",
    "StochasticOracle",
    "ClassifierParams",
    "Region",
    "classify",
    "measure_escape",
    "CombinationPolicy",
    "Graph",
    "NoiseProfile",
    "asymmetric_mh_policy",
    "build_graph",
    "perron_vector",
    "uniform_policy",
]
