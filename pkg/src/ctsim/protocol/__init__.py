"""Contact tracing endpoints, transport and the simulator-facing deployment."""

from .bus import MessageBus, deliver
from .deployment import Deployment, ProtocolConfig
from .endpoints import ContactLog, CtsNetwork, FacilityEndpoint, FeTree, Notice, leaf_index, sensing_gate
from .messages import (
    CtsMessage,
    DataQuery,
    DataResponse,
    EndpointId,
    EndpointKind,
    EndpointWeight,
    ExposureNotification,
    InteractionModel,
    MessageKind,
    ProximityReport,
    StatusUpdate,
    TouchReport,
    UeOeModel,
    UeUeModel,
)

__all__ = [
    "ContactLog", "CtsMessage", "CtsNetwork", "DataQuery", "DataResponse", "Deployment",
    "EndpointId", "EndpointKind", "EndpointWeight", "ExposureNotification", "FacilityEndpoint",
    "FeTree", "InteractionModel", "MessageBus", "MessageKind", "Notice", "ProtocolConfig",
    "ProximityReport", "StatusUpdate", "TouchReport", "UeOeModel", "UeUeModel", "deliver",
    "leaf_index", "sensing_gate",
]
