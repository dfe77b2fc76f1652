"""Hybrid quantum-classical Rainbow DQN for human resource allocation."""

from .circuit import CircuitSpec, Topology
from .env import HrapConfig, HrapInstance, generate_instance
from .network import NetworkConfig, QNetwork
from .agent import Agent, AgentConfig

__all__ = [
    "Agent",
    "AgentConfig",
    "CircuitSpec",
    "HrapConfig",
    "HrapInstance",
    "NetworkConfig",
    "QNetwork",
    "Topology",
    "generate_instance",
]
__version__ = "0.1.0"
