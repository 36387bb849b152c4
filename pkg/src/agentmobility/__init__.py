"""Agent mobility protocol engine: multi-step migration of agents between platforms."""

from .acl import AclMessage, AgentIdentifier, Content, ContentKind, Performative, decode_message, encode_message, make_reply
from .amm import AgentMobilityManager, EventLog, MigrationResult, SessionStatus
from .host import AgentHost, Lifecycle, ToyProgram
from .node import ControlClient, NodeConfig, PlatformNode, start_node
from .push_transfer import AgentPackage, CodeCache, PushTransfer
from .registry import MigrationStep, ProtocolRegistry
from .transport import FaultSpec, MemoryBus, TcpTransport

__version__ = "0.1.0"

__all__ = [
    "AclMessage", "AgentHost", "AgentIdentifier", "AgentMobilityManager", "AgentPackage",
    "CodeCache", "Content", "ContentKind", "ControlClient", "EventLog", "FaultSpec",
    "Lifecycle", "MemoryBus", "MigrationResult", "MigrationStep", "NodeConfig",
    "Performative", "PlatformNode", "ProtocolRegistry", "PushTransfer", "SessionStatus",
    "TcpTransport", "ToyProgram", "decode_message", "encode_message", "make_reply", "start_node",
]
