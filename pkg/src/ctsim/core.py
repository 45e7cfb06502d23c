"""Shared domain types, spatial primitives and seeded random streams.

Every tick is one simulated second; positions live in the closed unit
square.  Identifiers are opaque integers handed out at spawn time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"position ({self.x}, {self.y}) outside the unit square")


class HealthState(enum.IntEnum):
    """Epidemiological state of one person.

    Integer codes are what the vectorised population arrays store.
    """

    SUSCEPTIBLE = 0
    INFECTIOUS = 1
    RECOVERED = 2
    DEAD = 3

    @property
    def absorbing(self) -> bool:
        return self in (HealthState.RECOVERED, HealthState.DEAD)

    def can_become(self, other: "HealthState") -> bool:
        if other == self:
            return True
        if self == HealthState.SUSCEPTIBLE:
            return other == HealthState.INFECTIOUS
        if self == HealthState.INFECTIOUS:
            return other.absorbing
        return False


class TransmissionMode(enum.Enum):
    PERSON_TO_PERSON = "person_to_person"
    OBJECT_TO_PERSON = "object_to_person"


class SensorType(enum.Enum):
    """Sensing families, grouped by the transmission path they cover."""

    LOCATION = "location"
    COMPUTER_VISION = "computer_vision"
    TOUCH = "touch"
    PROXIMITY = "proximity"

    @property
    def transmission_mode(self) -> TransmissionMode:
        if self in (SensorType.LOCATION, SensorType.COMPUTER_VISION):
            return TransmissionMode.PERSON_TO_PERSON
        return TransmissionMode.OBJECT_TO_PERSON


# Example devices per sensor family, for labelling and docs only.
SENSOR_DEVICES = {
    SensorType.LOCATION: ("gps", "mobile", "ultrasonic", "bluetooth", "magnetometer"),
    SensorType.COMPUTER_VISION: ("camera", "qr_code"),
    SensorType.TOUCH: ("inductive", "capacitive", "rfid"),
    SensorType.PROXIMITY: ("ultrasonic", "bluetooth", "rfid"),
}


class SensingModeKind(enum.Enum):
    PASSIVE = "passive"
    PROACTIVE = "proactive"
    HYBRID = "hybrid"


class EventKind(enum.Enum):
    PROXIMITY = "proximity"
    TOUCH = "touch"
    STATUS_UPDATE = "status_update"


@dataclass(frozen=True)
class SensingMode:
    """How tracing events get captured.

    ``proactive_participation`` is the chance that a user-controlled capture
    actually happens.  In hybrid mode ``proactive_kinds`` lists the event
    kinds that need the user's involvement; everything else is passive.
    """

    kind: SensingModeKind = SensingModeKind.PASSIVE
    proactive_participation: float = 1.0
    proactive_kinds: frozenset = frozenset({EventKind.TOUCH})

    def __post_init__(self):
        if not 0.0 <= self.proactive_participation <= 1.0:
            raise ValueError("proactive_participation must lie in [0, 1]")

    def capture_probability(self, kind: EventKind) -> float:
        if self.kind == SensingModeKind.PASSIVE:
            return 1.0
        if self.kind == SensingModeKind.PROACTIVE:
            return self.proactive_participation
        if kind in self.proactive_kinds:
            return self.proactive_participation
        return 1.0


@dataclass(frozen=True)
class TraceEvent:
    """One sensing record: who, where, when, and optionally which state."""

    subject_id: int
    location: Position
    timestamp: int
    kind: EventKind
    peer_id: Optional[int] = None
    state: Optional[HealthState] = None

    def __post_init__(self):
        if self.kind in (EventKind.PROXIMITY, EventKind.TOUCH) and self.peer_id is None:
            raise ValueError(f"{self.kind.value} event needs a peer_id")
        if self.kind == EventKind.STATUS_UPDATE and self.state is None:
            raise ValueError("status update needs a state")

    def involves(self, endpoint_id: int) -> bool:
        return self.subject_id == endpoint_id or self.peer_id == endpoint_id

    def other(self, endpoint_id: int) -> Optional[int]:
        if self.subject_id == endpoint_id:
            return self.peer_id
        if self.peer_id == endpoint_id:
            return self.subject_id
        return None


@dataclass
class Agent:
    """A single simulated person.

    The simulator keeps its population in column arrays for speed; this is
    the per-person record used at API boundaries (see ``Population.agent``).
    """

    id: int
    pos: Position
    heading: float
    speed: float
    state: HealthState = HealthState.SUSCEPTIBLE
    infected_at: Optional[int] = None
    resolution_at: Optional[int] = None
    hospitalized: bool = False
    lockdown_compliant: bool = False
    notified_until: Optional[int] = None

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        infected = self.state != HealthState.SUSCEPTIBLE
        if infected != (self.infected_at is not None):
            raise ValueError("infected_at must be set exactly when the agent has been infected")
        if (
            self.infected_at is not None
            and self.resolution_at is not None
            and self.resolution_at <= self.infected_at
        ):
            raise ValueError("resolution_at must come after infected_at")

    @property
    def alive(self) -> bool:
        return self.state != HealthState.DEAD

    def is_notified(self, tick: int) -> bool:
        return self.notified_until is not None and tick <= self.notified_until


def distance(a: Position, b: Position) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for ``seed``.

    Extra integers select an independent sub-stream, so e.g. movement and
    infection draws do not shift when another consumer is added::

        seeded_rng(7, 0)   # stream 0 of seed 7
        seeded_rng(7, 1)   # independent of stream 0
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream))
    return np.random.Generator(np.random.PCG64(ss))


def agent_streams(seed: int, n: int) -> list[np.random.Generator]:
    """One independent generator per agent, stable under reordering of agents."""
    root = np.random.SeedSequence(entropy=seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(n)]
