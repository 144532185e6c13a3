"""Deterministic clustering and broadcast in SINR wireless networks, simulated round by round."""
from .errors import (ConfigurationError, ConstructionError, ContractViolation, HorizonReached,
                     ParameterError, SinrNetError, Unverifiable)
from .geometry import ClusterAssignment, Point, chi, d_gamma_r, density, validate_r_clustering
from .sinr_phy import Network, SinrParams, communication_graph, resolve_round, sinr

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment", "ConfigurationError", "ConstructionError", "ContractViolation",
    "HorizonReached", "Network", "ParameterError", "Point", "SinrNetError", "SinrParams",
    "Unverifiable", "chi", "communication_graph", "d_gamma_r", "density", "resolve_round",
    "sinr", "validate_r_clustering",
]
