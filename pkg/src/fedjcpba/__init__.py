"""Latency-aware federated fine-tuning: joint pruning-rate and bandwidth allocation."""

from fedjcpba.errors import (
    FedJCPBAError,
    Infeasible,
    InfeasibleBox,
    InfeasibleC5,
    InfeasibleMemory,
)

__version__ = "0.1.0"

__all__ = [
    "FedJCPBAError",
    "Infeasible",
    "InfeasibleBox",
    "InfeasibleC5",
    "InfeasibleMemory",
    "__version__",
]
