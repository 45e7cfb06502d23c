"""Event-by-event contact tracing network.

This is the readable, per-message model of UEs, OEs and a tree of FEs.
It handles one contact at a time and is what the interaction-model
contracts are checked against; :mod:`ctsim.protocol.deployment` is the
vectorised engine the simulator drives at full population size.
"""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import EventKind, HealthState, SensingMode, TraceEvent
from .bus import MessageBus
from .messages import (
    CtsMessage,
    DataQuery,
    DataResponse,
    EndpointId,
    EndpointKind,
    EndpointWeight,
    ExposureNotification,
    InteractionModel,
    ProximityReport,
    StatusUpdate,
    TouchReport,
    UeOeModel,
    UeUeModel,
)

_MASK64 = (1 << 64) - 1


def _mix64(v: int) -> int:
    # splitmix64 finaliser
    v = (v + 0x9E3779B97F4A7C15) & _MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _MASK64
    return v ^ (v >> 31)


def leaf_index(endpoint_id: int, n_leaves: int) -> int:
    """Static hash partition of endpoint ids over ``n_leaves`` leaf FEs."""
    return _mix64(endpoint_id & _MASK64) % n_leaves


def leaf_indices(ids: np.ndarray, n_leaves: int) -> np.ndarray:
    """Vectorised :func:`leaf_index`."""
    v = ids.astype(np.uint64)
    with np.errstate(over="ignore"):
        v = v + np.uint64(0x9E3779B97F4A7C15)
        v = (v ^ (v >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        v = (v ^ (v >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        v = v ^ (v >> np.uint64(31))
    return (v % np.uint64(n_leaves)).astype(np.int64)


def sensing_gate(event: TraceEvent, mode: SensingMode, rng: np.random.Generator) -> bool:
    """Whether a sensed event is actually captured under ``mode``."""
    p = mode.capture_probability(event.kind)
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    return bool(rng.random() < p)


def _event_key(e: TraceEvent):
    return (frozenset((e.subject_id, e.peer_id)), e.timestamp, e.kind)


@dataclass
class ContactLog:
    """Time-ordered store of trace events with a retention horizon."""

    owner: EndpointId
    retention: int
    entries: list[TraceEvent] = field(default_factory=list)
    _keys: set = field(default_factory=set, repr=False)

    def add(self, event: TraceEvent, now: Optional[int] = None) -> bool:
        now = event.timestamp if now is None else now
        self.prune(now)
        key = _event_key(event)
        if key in self._keys or event.timestamp < now - self.retention:
            return False
        bisect.insort(self.entries, event, key=lambda e: e.timestamp)
        self._keys.add(key)
        return True

    def prune(self, now: int) -> None:
        cutoff = now - self.retention
        k = bisect.bisect_left(self.entries, cutoff, key=lambda e: e.timestamp)
        for e in self.entries[:k]:
            self._keys.discard(_event_key(e))
        del self.entries[:k]

    def window(self, start: int, end: int) -> list[TraceEvent]:
        lo = bisect.bisect_left(self.entries, start, key=lambda e: e.timestamp)
        hi = bisect.bisect_right(self.entries, end, key=lambda e: e.timestamp)
        return self.entries[lo:hi]

    def involving(self, subject: int, start: int, end: int) -> list[TraceEvent]:
        return [e for e in self.window(start, end) if e.involves(subject)]

    def __len__(self):
        return len(self.entries)


@dataclass
class FacilityEndpoint:
    eid: EndpointId
    store: ContactLog
    parent: Optional[EndpointId] = None


@dataclass
class FeTree:
    """A virtual FE: one root with leaf FEs, each member pinned to a leaf."""

    root: FacilityEndpoint
    leaves: list[FacilityEndpoint]
    assignment: dict[EndpointId, EndpointId] = field(default_factory=dict)
    query_messages: int = 0

    @classmethod
    def build(cls, n_leaves: int, retention: int) -> "FeTree":
        if n_leaves < 1:
            raise ValueError("need at least one leaf FE")
        root_id = EndpointId.fe(0)
        root = FacilityEndpoint(root_id, ContactLog(root_id, retention))
        leaves = []
        for k in range(1, n_leaves + 1):
            eid = EndpointId.fe(k)
            leaves.append(FacilityEndpoint(eid, ContactLog(eid, retention), parent=root_id))
        return cls(root, leaves)

    def assign(self, member: EndpointId) -> EndpointId:
        if member not in self.assignment:
            leaf = self.leaves[leaf_index(member.id, len(self.leaves))]
            self.assignment[member] = leaf.eid
        return self.assignment[member]

    def leaf(self, eid: EndpointId) -> FacilityEndpoint:
        return self.leaves[eid.id - 1]

    def leaf_for(self, member: EndpointId) -> FacilityEndpoint:
        return self.leaf(self.assign(member))

    def query(self, subject: int, start: int, end: int, origin: Optional[EndpointId] = None) -> list[TraceEvent]:
        """Events involving ``subject`` across the whole tree.

        The origin leaf answers from its own store and asks the root, which
        fans the query out to every sibling; each hop is one query and one
        response.
        """
        found = {}
        for leaf in self.leaves:
            if origin is not None and leaf.eid != origin:
                self.query_messages += 2
            for e in leaf.store.involving(subject, start, end):
                found.setdefault(_event_key(e), e)
        if origin is not None and len(self.leaves) > 1:
            self.query_messages += 2  # origin <-> root
        return sorted(found.values(), key=lambda e: (e.timestamp, e.subject_id, e.peer_id))


@dataclass
class Notice:
    """An exposure a UE (or OE) has learned about."""

    recipient: int
    subject: int
    exposure_tick: int
    tick: int


class CtsNetwork:
    """UEs, OEs and a virtual FE wired together under one interaction model."""

    def __init__(self, model: InteractionModel = InteractionModel(), n_leaves: int = 1,
                 lookback: int = 300, retention: Optional[int] = None, latency: int = 0,
                 sensing: SensingMode = SensingMode(), fe_upload: bool = False,
                 oe_forward: bool = False, seed: int = 0):
        self.model = model
        self.lookback = lookback
        self.retention = lookback if retention is None else retention
        if self.retention < lookback:
            raise ValueError("retention must cover the lookback window")
        self.tree = FeTree.build(n_leaves, self.retention)
        self.bus = MessageBus(latency)
        self.sensing = sensing
        self.fe_upload = fe_upload
        self.oe_forward = oe_forward
        self.rng = np.random.default_rng(seed)
        self.ue_logs: dict[int, ContactLog] = {}
        self.oe_logs: dict[int, Optional[ContactLog]] = {}
        self.oe_weight: dict[int, EndpointWeight] = {}
        # subject -> [diagnosis tick, clear tick or None]
        self.diagnosed: dict[int, list] = {}
        self.notified_pairs: set[tuple[int, int]] = set()
        self.notices: list[Notice] = []
        self.stats = Counter()

    # -- membership -------------------------------------------------------

    def add_ue(self, ue_id: int) -> EndpointId:
        eid = EndpointId.ue(ue_id)
        self.ue_logs.setdefault(ue_id, ContactLog(eid, self.retention))
        self.tree.assign(eid)
        return eid

    def add_oe(self, oe_id: int, weight: EndpointWeight = EndpointWeight.HEAVYWEIGHT) -> EndpointId:
        eid = EndpointId.oe(oe_id)
        self.oe_weight[oe_id] = weight
        self.oe_logs[oe_id] = ContactLog(eid, self.retention) if weight == EndpointWeight.HEAVYWEIGHT else None
        self.tree.assign(eid)
        return eid

    def _ue_log(self, eid: EndpointId) -> ContactLog:
        if eid.id not in self.ue_logs:
            self.add_ue(eid.id)
        return self.ue_logs[eid.id]

    def _send(self, src, dst, tick, body) -> CtsMessage:
        msg = CtsMessage(src, dst, tick, body)
        self.bus.send(msg)
        return msg

    # -- sensing ----------------------------------------------------------

    def on_proximity(self, ue_a: EndpointId, ue_b: EndpointId, event: TraceEvent,
                     model: Optional[InteractionModel] = None) -> list[CtsMessage]:
        if ue_a.kind != EndpointKind.UE or ue_b.kind != EndpointKind.UE:
            raise ValueError("proximity contacts are between two UEs")
        if event.kind != EventKind.PROXIMITY:
            raise ValueError("on_proximity needs a proximity event")
        ue_ue = (model or self.model).ue_ue
        tick = event.timestamp
        out = []
        for me, other in ((ue_a, ue_b), (ue_b, ue_a)):
            if not sensing_gate(event, self.sensing, self.rng):
                continue
            if ue_ue == UeUeModel.CENTRALIZED:
                out.append(self._send(me, self.tree.assign(me), tick, ProximityReport(event)))
            elif ue_ue == UeUeModel.USER_CENTERED:
                self._ue_log(me).add(event)
            else:
                self._ue_log(me).add(event)
                out.append(self._send(me, other, tick, ProximityReport(event)))
                if self.fe_upload:
                    out.append(self._send(me, self.tree.assign(me), tick, ProximityReport(event)))
        if ue_ue == UeUeModel.DISTRIBUTED:
            # a flagged UE warns fresh contacts itself
            for me, other in ((ue_a, ue_b), (ue_b, ue_a)):
                if me.id in self.diagnosed and tick in self._window(me.id, tick):
                    out.extend(self._notify(me, other, me.id, tick, tick))
        return out

    def on_touch(self, ue: EndpointId, oe: EndpointId, event: TraceEvent,
                 model: Optional[InteractionModel] = None) -> list[CtsMessage]:
        if ue.kind != EndpointKind.UE or oe.kind != EndpointKind.OE:
            raise ValueError("touch contacts are between a UE and an OE")
        if event.kind != EventKind.TOUCH:
            raise ValueError("on_touch needs a touch event")
        if oe.id not in self.oe_weight:
            self.add_oe(oe.id)
        ue_oe = (model or self.model).ue_oe
        tick = event.timestamp
        out = []
        if not sensing_gate(event, self.sensing, self.rng):
            return out
        self._ue_log(ue).add(event)
        if ue_oe == UeOeModel.INDIRECT:
            if self.fe_upload:
                out.append(self._send(ue, self.tree.assign(ue), tick, TouchReport(event)))
            return out
        oe_log = self.oe_logs[oe.id]
        if oe_log is None:
            out.append(self._send(oe, self.tree.assign(oe), tick, TouchReport(event)))
        else:
            oe_log.add(event)
            if self.oe_forward:
                out.append(self._send(oe, self.tree.assign(oe), tick, TouchReport(event)))
        return out

    # -- diagnosis and notification -----------------------------------------

    def _window(self, subject: int, now: int) -> range:
        td, tc = self.diagnosed[subject]
        end = now if tc is None else min(now, tc)
        return range(td - self.lookback, end + 1)

    def _notify(self, src: EndpointId, dst: EndpointId, subject: int, exposure_tick: int,
                tick: int) -> list[CtsMessage]:
        if dst.id == subject or (subject, dst.id) in self.notified_pairs:
            return []
        self.notified_pairs.add((subject, dst.id))
        return [self._send(src, dst, tick, ExposureNotification(subject, exposure_tick))]

    def _peer_endpoint(self, e: TraceEvent, subject: int) -> EndpointId:
        other = e.other(subject)
        if e.kind == EventKind.TOUCH and other in self.oe_weight:
            return EndpointId.oe(other)
        return EndpointId.ue(other)

    def _notify_from(self, events, subject: int, tick: int, src_for) -> list[CtsMessage]:
        latest: dict[EndpointId, int] = {}
        for e in events:
            peer = self._peer_endpoint(e, subject)
            latest[peer] = max(latest.get(peer, e.timestamp), e.timestamp)
        out = []
        for peer in sorted(latest):
            out.extend(self._notify(src_for(peer), peer, subject, latest[peer], tick))
        return out

    def report_diagnosis(self, subject: EndpointId, tick: int,
                         model: Optional[InteractionModel] = None,
                         lookback: Optional[int] = None) -> list[CtsMessage]:
        """Flag ``subject`` as infectious and push notifications where the model pushes.

        Returns the exposure notifications sent (none for the user-centred
        model, whose peers pull instead, see :meth:`poll`).
        """
        if lookback is not None:
            self.lookback = lookback
        ue_ue = (model or self.model).ue_ue
        self.diagnosed[subject.id] = [tick, None]
        start = tick - self.lookback
        if ue_ue == UeUeModel.DISTRIBUTED:
            events = self._ue_log(subject).involving(subject.id, start, tick)
            return self._notify_from(events, subject.id, tick, lambda peer: subject)
        leaf = self.tree.assign(subject)
        self.stats["status_update"] += 1
        if ue_ue == UeUeModel.USER_CENTERED:
            return []
        before = self.tree.query_messages
        events = self.tree.query(subject.id, start, tick, origin=leaf)
        self.stats["fe_query"] += self.tree.query_messages - before
        return self._notify_from(events, subject.id, tick, lambda peer: self.tree.assign(peer))

    def report_resolution(self, subject: EndpointId, state: HealthState, tick: int) -> None:
        if subject.id in self.diagnosed and self.diagnosed[subject.id][1] is None:
            self.diagnosed[subject.id][1] = tick
        if self.model.ue_ue != UeUeModel.DISTRIBUTED:
            self.stats["status_update"] += 1

    def poll(self, ue: EndpointId, tick: int) -> list[int]:
        """User-centred pull: ask the FE for diagnoses, match them locally.

        Returns the subjects this UE newly learned it was exposed to.
        """
        leaf = self.tree.assign(ue)
        self._send(ue, leaf, tick, DataQuery(None, (tick - self.lookback, tick)))
        statuses = tuple(StatusUpdate(s, HealthState.INFECTIOUS, td)
                         for s, (td, _) in sorted(self.diagnosed.items()))
        self._send(leaf, ue, tick, DataResponse((), statuses))
        log = self._ue_log(ue)
        learned = []
        for st in statuses:
            window = self._window(st.subject, tick)
            hits = [e.timestamp for e in log.involving(st.subject, window.start, window.stop - 1)]
            if hits and (st.subject, ue.id) not in self.notified_pairs and ue.id != st.subject:
                self.notified_pairs.add((st.subject, ue.id))
                self.notices.append(Notice(ue.id, st.subject, max(hits), tick))
                learned.append(st.subject)
        return learned

    # -- transport ------------------------------------------------------------

    def advance(self, tick: int) -> list[Notice]:
        """Deliver everything due by ``tick``; returns notices received."""
        got = []
        while True:
            msgs = self.bus.due(tick)
            if not msgs:
                return got
            for msg in msgs:
                got.extend(self._receive(msg, tick))

    def _receive(self, msg: CtsMessage, tick: int) -> list[Notice]:
        body = msg.body
        if msg.dst.kind == EndpointKind.FE and isinstance(body, (ProximityReport, TouchReport)):
            e = body.event
            self.tree.leaf(msg.dst).store.add(e, now=tick)
            for subject in (e.subject_id, e.peer_id):
                if subject in self.diagnosed and e.timestamp in self._window(subject, tick):
                    peer = self._peer_endpoint(e, subject)
                    self._notify(self.tree.assign(peer), peer, subject, e.timestamp, tick)
            return []
        if msg.dst.kind == EndpointKind.UE and isinstance(body, ProximityReport):
            self._ue_log(msg.dst).add(body.event, now=tick)
            return []
        if isinstance(body, ExposureNotification):
            note = Notice(msg.dst.id, body.subject, body.exposure_tick, tick)
            self.notices.append(note)
            return [note]
        return []

    # -- inspection -----------------------------------------------------------

    def known_exposed(self) -> set[int]:
        """Endpoints that hold an exposure flag (pushed or pulled)."""
        return {n.recipient for n in self.notices}

    def message_counts(self) -> Counter:
        return Counter({k.value: v for k, v in self.bus.sent.items()})
