"""Lossless, fixed-latency message transport."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable

from .messages import CtsMessage


def deliver(messages: Iterable[CtsMessage], latency: int) -> dict[int, list[CtsMessage]]:
    """Delivery schedule: tick -> messages arriving that tick.

    Every message lands exactly once, ``latency`` ticks after it was sent.
    Within a tick, messages keep their send order, so per-link FIFO holds.
    """
    if latency < 0:
        raise ValueError("latency must be non-negative")
    schedule: dict[int, list[CtsMessage]] = defaultdict(list)
    for msg in sorted(messages, key=lambda m: m.sent_at):
        schedule[msg.sent_at + latency].append(msg)
    return dict(schedule)


class MessageBus:
    """Per-tick queue on top of :func:`deliver` semantics."""

    def __init__(self, latency: int = 1):
        if latency < 0:
            raise ValueError("latency must be non-negative")
        self.latency = latency
        self._queue: dict[int, list[CtsMessage]] = defaultdict(list)
        self.sent = Counter()
        self.delivered = Counter()

    def send(self, msg: CtsMessage) -> None:
        self._queue[msg.sent_at + self.latency].append(msg)
        self.sent[msg.kind] += 1

    def send_all(self, msgs: Iterable[CtsMessage]) -> None:
        for m in msgs:
            self.send(m)

    def due(self, tick: int) -> list[CtsMessage]:
        """Pop everything due at or before ``tick``, oldest first."""
        ready = sorted(t for t in self._queue if t <= tick)
        out = []
        for t in ready:
            out.extend(self._queue.pop(t))
        for m in out:
            self.delivered[m.kind] += 1
        return out

    @property
    def pending(self) -> int:
        return sum(len(v) for v in self._queue.values())
