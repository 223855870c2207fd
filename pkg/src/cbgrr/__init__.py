"""Coordinated broadcast-based group request-reply: protocol core, simulator and tools."""
from .events import MemberState, RoundKind
from .node import Config, Node, ProtocolError
from .sim import SimConfig, Simulator

__all__ = ["Config", "MemberState", "Node", "ProtocolError", "RoundKind", "SimConfig", "Simulator"]
__version__ = "0.1.0"
