"""Endpoint identities, interaction models and the messages they exchange."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

from ..core import HealthState, TraceEvent


class EndpointKind(enum.Enum):
    UE = "UE"  # user endpoint, carried by a person
    FE = "FE"  # facility endpoint, e.g. a health authority server
    OE = "OE"  # object endpoint, attached to a surface


@dataclass(frozen=True, order=True)
class EndpointId:
    kind: EndpointKind
    id: int

    def __str__(self):
        return f"{self.kind.value}:{self.id}"

    @classmethod
    def ue(cls, id: int) -> "EndpointId":
        return cls(EndpointKind.UE, id)

    @classmethod
    def fe(cls, id: int) -> "EndpointId":
        return cls(EndpointKind.FE, id)

    @classmethod
    def oe(cls, id: int) -> "EndpointId":
        return cls(EndpointKind.OE, id)


class UeUeModel(enum.Enum):
    CENTRALIZED = "centralized"
    USER_CENTERED = "user_centered"
    DISTRIBUTED = "distributed"


class UeOeModel(enum.Enum):
    INDIRECT = "indirect"
    DIRECT = "direct"


@dataclass(frozen=True)
class InteractionModel:
    ue_ue: UeUeModel = UeUeModel.CENTRALIZED
    ue_oe: UeOeModel = UeOeModel.DIRECT


class EndpointWeight(enum.Enum):
    LIGHTWEIGHT = "lightweight"
    HEAVYWEIGHT = "heavyweight"


@dataclass(frozen=True)
class ProximityReport:
    event: TraceEvent


@dataclass(frozen=True)
class TouchReport:
    event: TraceEvent


@dataclass(frozen=True)
class StatusUpdate:
    subject: int
    state: HealthState
    tick: int


@dataclass(frozen=True)
class ExposureNotification:
    subject: int
    exposure_tick: int


@dataclass(frozen=True)
class DataQuery:
    subject: Optional[int]
    window: tuple[int, int]


@dataclass(frozen=True)
class DataResponse:
    events: tuple[TraceEvent, ...] = ()
    statuses: tuple[StatusUpdate, ...] = ()


Body = Union[ProximityReport, TouchReport, StatusUpdate, ExposureNotification, DataQuery, DataResponse]


class MessageKind(enum.Enum):
    PROXIMITY_REPORT = "proximity_report"
    TOUCH_REPORT = "touch_report"
    STATUS_UPDATE = "status_update"
    EXPOSURE_NOTIFICATION = "exposure_notification"
    DATA_QUERY = "data_query"
    DATA_RESPONSE = "data_response"


_KIND = {
    ProximityReport: MessageKind.PROXIMITY_REPORT,
    TouchReport: MessageKind.TOUCH_REPORT,
    StatusUpdate: MessageKind.STATUS_UPDATE,
    ExposureNotification: MessageKind.EXPOSURE_NOTIFICATION,
    DataQuery: MessageKind.DATA_QUERY,
    DataResponse: MessageKind.DATA_RESPONSE,
}


@dataclass(frozen=True)
class CtsMessage:
    src: EndpointId
    dst: EndpointId
    sent_at: int
    body: Body

    @property
    def kind(self) -> MessageKind:
        return _KIND[type(self.body)]

    @property
    def link(self) -> tuple[EndpointId, EndpointId]:
        return self.src, self.dst
