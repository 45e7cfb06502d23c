"""Population-scale contact tracing driven by the simulator.

Semantics follow :class:`ctsim.protocol.endpoints.CtsNetwork`, but every
tick is processed as a batch of arrays: contacts become table rows,
messages become counters, and only exposure notifications are tracked
individually.  Rows here are population row indices, not endpoint ids.

Per tick, in order: sensing and storage of the tick's contacts (with live
checks against already-flagged subjects), diagnoses, resolutions, polls
(user-centred model), then delivery of notifications that are due.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import EventKind, SensingMode, seeded_rng
from ..sim import NONE, Population, SimParams, STREAM_PROTOCOL, D, I
from .endpoints import leaf_indices
from .messages import InteractionModel, MessageKind, UeUeModel

_FAR = np.iinfo(np.int64).max


@dataclass(frozen=True)
class ProtocolConfig:
    model: InteractionModel = InteractionModel()
    lookback: int = 300
    latency: int = 1
    detection_delay: int = 0
    n_leaves: int = 4
    sensing: SensingMode = SensingMode()
    fe_upload: bool = False
    poll_period: int = 1
    retention: Optional[int] = None

    def validate(self) -> None:
        if self.lookback < 0 or self.latency < 0 or self.detection_delay < 0:
            raise ValueError("lookback, latency and detection_delay must be non-negative")
        if self.n_leaves < 1 or self.poll_period < 1:
            raise ValueError("n_leaves and poll_period must be at least 1")
        if self.retention is not None and self.retention < self.lookback:
            raise ValueError("retention must cover the lookback window")

    @property
    def effective_retention(self) -> int:
        if self.retention is not None:
            return self.retention
        return self.lookback + 2 * self.latency + self.poll_period


class _Table:
    """Contact rows keyed by the party a diagnosis query looks up.

    Fresh rows sit in per-tick chunks; every ``block`` ticks they are merged
    into a block sorted by key so lookups are binary searches.  Rows older
    than the retention horizon are never returned and are dropped block by
    block.
    """

    def __init__(self, retention: int, block: int = 32):
        self.retention = retention
        self.block = block
        self._recent: list[tuple[int, np.ndarray, np.ndarray]] = []
        self._blocks: list[tuple[int, int, np.ndarray, np.ndarray, np.ndarray]] = []
        self._now = 0

    def add(self, tick: int, key: np.ndarray, other: np.ndarray) -> None:
        if key.size:
            self._recent.append((tick, key, other))

    def prune(self, now: int) -> None:
        self._now = now
        cutoff = now - self.retention
        self._blocks = [b for b in self._blocks if b[1] >= cutoff]
        self._recent = [c for c in self._recent if c[0] >= cutoff]
        if self._recent and now - self._recent[0][0] >= self.block:
            ticks = np.concatenate([np.full(k.size, t, dtype=np.int64) for t, k, _ in self._recent])
            key = np.concatenate([k for _, k, _ in self._recent])
            other = np.concatenate([o for _, _, o in self._recent])
            order = np.argsort(key, kind="stable")
            self._blocks.append((int(ticks.min()), int(ticks.max()), key[order], other[order], ticks[order]))
            self._recent = []

    def lookup(self, keys: np.ndarray, start: int, end: int):
        """(tick, key, other) of rows with key in ``keys`` and tick in [start, end]."""
        keys = np.unique(keys)
        start = max(start, self._now - self.retention)
        parts = []
        for t0, t1, key, other, ticks in self._blocks:
            if t1 < start or t0 > end:
                continue
            lo = np.searchsorted(key, keys, "left")
            cnt = np.searchsorted(key, keys, "right") - lo
            total = int(cnt.sum())
            if total == 0:
                continue
            idx = np.repeat(lo - (np.cumsum(cnt) - cnt), cnt) + np.arange(total)
            parts.append((ticks[idx], key[idx], other[idx]))
        for t, key, other in self._recent:
            if start <= t <= end:
                hit = np.isin(key, keys)
                if hit.any():
                    parts.append((np.full(int(hit.sum()), t, dtype=np.int64), key[hit], other[hit]))
        if not parts:
            e = np.empty(0, dtype=np.int64)
            return e, e, e
        t = np.concatenate([p[0] for p in parts])
        k = np.concatenate([p[1] for p in parts])
        o = np.concatenate([p[2] for p in parts])
        keep = (t >= start) & (t <= end)
        return t[keep], k[keep], o[keep]

    def __len__(self):
        return sum(k.size for _, k, _ in self._recent) + sum(b[2].size for b in self._blocks)


class _PairSet:
    """Set of (subject, peer) row pairs; a bitmap when the population is small."""

    def __init__(self, n: int):
        self.n = n
        self._bits = np.zeros((n, n), dtype=bool) if n <= 8000 else None
        self._set: set[int] = set()

    def add_new(self, subj: np.ndarray, peer: np.ndarray) -> np.ndarray:
        """Insert pairs (unique within the call); return mask of the ones not seen before."""
        if self._bits is not None:
            fresh = ~self._bits[subj, peer]
            self._bits[subj[fresh], peer[fresh]] = True
            return fresh
        code = (subj.astype(np.int64) * self.n + peer).tolist()
        fresh = np.fromiter((c not in self._set for c in code), dtype=bool, count=len(code))
        self._set.update(code)
        return fresh


@dataclass
class NotificationAudit:
    """Every exposure notification emitted during a run."""

    subject: list = field(default_factory=list)
    peer: list = field(default_factory=list)
    exposure_tick: list = field(default_factory=list)
    emitted_at: list = field(default_factory=list)

    def extend(self, subject, peer, exposure_tick, emitted_at) -> None:
        self.subject.append(np.asarray(subject))
        self.peer.append(np.asarray(peer))
        self.exposure_tick.append(np.asarray(exposure_tick))
        self.emitted_at.append(np.full(np.asarray(subject).size, emitted_at, dtype=np.int64))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("subject", "peer", "exposure_tick", "emitted_at"):
            parts = getattr(self, name)
            out[name] = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        return out


class Deployment:
    """A full UE/FE deployment attached to one simulation run."""

    def __init__(self, config: ProtocolConfig = ProtocolConfig()):
        config.validate()
        self.config = config
        self.ue_ue = config.model.ue_ue
        self.messages = Counter()
        self.audit = NotificationAudit()
        self.delays: list[np.ndarray] = []
        self.delivered = 0
        self.local_notices = 0

    # -- wiring -------------------------------------------------------------

    def attach(self, pop: Population, params: SimParams) -> None:
        n = pop.n
        self.n = n
        self.ids = pop.ids
        self.params = params
        self.leaf = leaf_indices(pop.ids, self.config.n_leaves)
        self.rng = seeded_rng(params.seed, STREAM_PROTOCOL)
        retention = self.config.effective_retention
        self.fe_store = _Table(retention)
        self.ue_store = _Table(retention)
        # when the deciding party learned of each diagnosis / resolution
        self.diag_tick = np.full(n, NONE, dtype=np.int64)
        self.flag_known = np.full(n, _FAR, dtype=np.int64)
        self.clear_known = np.full(n, _FAR, dtype=np.int64)
        self.clear_tick = np.full(n, _FAR, dtype=np.int64)
        self.seen = _PairSet(n)
        self._fe_inbox: dict[int, list] = defaultdict(list)   # arrival tick -> (contact tick, owner, peer)
        self._status_inbox: dict[int, list] = defaultdict(list)  # arrival tick -> (kind, rows, tick)
        self._outbox: dict[int, list] = defaultdict(list)     # delivery tick -> (peer, exposure tick)
        self._pending_pull: list = []                          # (peer, exposure tick) awaiting a poll

    # -- helpers -----------------------------------------------------------------

    def _capture(self, m: int, kind: EventKind = EventKind.PROXIMITY) -> np.ndarray:
        p = self.config.sensing.capture_probability(kind)
        if p >= 1.0:
            return np.ones(m, dtype=bool)
        if p <= 0.0:
            return np.zeros(m, dtype=bool)
        return self.rng.random(m) < p

    def _flag_window(self, subj: np.ndarray, contact: np.ndarray, now: int,
                     decided: int | None = None) -> np.ndarray:
        """Row contacts inside the subject's notification window.

        The flag must be known at ``now``.  The window closes at the
        subject's clearance tick once that status has reached whoever
        decides, at ``decided`` (default ``now``).
        """
        decided = now if decided is None else decided
        known = self.flag_known[subj] <= now
        start = self.diag_tick[subj] - self.config.lookback
        end = np.where(self.clear_known[subj] <= decided, self.clear_tick[subj], now)
        return known & (contact >= start) & (contact <= end)

    def _emit(self, subj: np.ndarray, peer: np.ndarray, contact: np.ndarray, tick: int, push: bool) -> None:
        """Deduplicate per (subject, peer) and schedule notifications."""
        if subj.size == 0:
            return
        keep = subj != peer
        subj, peer, contact = subj[keep], peer[keep], contact[keep]
        code = subj.astype(np.int64) * self.n + peer
        # latest contact per pair
        order = np.lexsort((-contact, code))
        code, subj, peer, contact = code[order], subj[order], peer[order], contact[order]
        first = np.ones(code.size, dtype=bool)
        first[1:] = code[1:] != code[:-1]
        code, subj, peer, contact = code[first], subj[first], peer[first], contact[first]
        fresh = self.seen.add_new(subj, peer)
        if not fresh.any():
            return
        subj, peer, contact = subj[fresh], peer[fresh], contact[fresh]
        self.audit.extend(subj, peer, contact, tick)
        if push:
            self.messages[MessageKind.EXPOSURE_NOTIFICATION] += subj.size
            self._outbox[tick + self.config.latency].append((peer, contact))
        else:
            self._pending_pull.append((peer, contact))

    # -- per tick --------------------------------------------------------------

    def on_tick(self, tick: int, pop: Population, pair_i: np.ndarray, pair_j: np.ndarray) -> np.ndarray:
        cfg = self.config
        lat = cfg.latency
        m = pair_i.size
        cap_i = self._capture(m)
        cap_j = self._capture(m)
        owners = np.concatenate([pair_i[cap_i], pair_j[cap_j]])
        peers = np.concatenate([pair_j[cap_i], pair_i[cap_j]])
        n_captured = owners.size

        uploads = self.ue_ue == UeUeModel.CENTRALIZED or (self.ue_ue == UeUeModel.DISTRIBUTED and cfg.fe_upload)
        if self.ue_ue == UeUeModel.DISTRIBUTED:
            self.messages[MessageKind.PROXIMITY_REPORT] += n_captured  # UE<->UE exchange
            either = cap_i | cap_j
            a, b = pair_i[either], pair_j[either]
            log_owner = np.concatenate([a, b])
            log_peer = np.concatenate([b, a])
            self.ue_store.add(tick, log_owner, log_peer)
            # a flagged UE warns fresh contacts itself
            hot = self._flag_window(log_owner, np.full(log_owner.size, tick), tick)
            self._emit(log_owner[hot], log_peer[hot], np.full(int(hot.sum()), tick), tick, push=True)
        elif self.ue_ue == UeUeModel.USER_CENTERED:
            # keyed by the logged peer: a diagnosis looks up who logged the subject
            self.ue_store.add(tick, peers, owners)
            # matched against the status list the FE returns to the next poll
            hot = self._flag_window(peers, np.full(peers.size, tick), tick, decided=tick + lat)
            self._emit(peers[hot], owners[hot], np.full(int(hot.sum()), tick), tick, push=False)
        if uploads:
            self.messages[MessageKind.PROXIMITY_REPORT] += n_captured
            self._fe_inbox[tick + lat].append((tick, owners, peers))

        self._fe_arrivals(tick)
        self._diagnoses(tick, pop)
        self._resolutions(tick, pop)
        self._poll(tick, pop)

        self.fe_store.prune(tick)
        self.ue_store.prune(tick)
        return self._deliver(tick)

    def _fe_arrivals(self, tick: int) -> None:
        for contact, owner, peer in self._fe_inbox.pop(tick, []):
            # both orientations, so "events involving s" is a key lookup
            self.fe_store.add(contact, np.concatenate([owner, peer]), np.concatenate([peer, owner]))
            if self.ue_ue != UeUeModel.CENTRALIZED:
                continue
            c = np.full(owner.size, contact)
            for subj, other in ((owner, peer), (peer, owner)):
                hot = self._flag_window(subj, c, tick)
                self._emit(subj[hot], other[hot], c[hot], tick, push=True)

    def _status(self, tick: int, rows: np.ndarray, infectious: bool) -> None:
        """Record a status change at whoever decides on notifications."""
        cfg = self.config
        if rows.size == 0:
            return
        if self.ue_ue == UeUeModel.DISTRIBUTED:
            known = tick
        else:
            self.messages[MessageKind.STATUS_UPDATE] += rows.size
            known = tick + cfg.latency
        if infectious:
            self.diag_tick[rows] = tick
            self.flag_known[rows] = known
        else:
            self.clear_tick[rows] = np.minimum(self.clear_tick[rows], tick)
            self.clear_known[rows] = np.minimum(self.clear_known[rows], known)

    def _diagnoses(self, tick: int, pop: Population) -> None:
        cfg = self.config
        due = np.flatnonzero((pop.infected_at != NONE) & (pop.infected_at + cfg.detection_delay == tick)
                             & (self.diag_tick == NONE))
        self._status(tick, due, infectious=True)
        # diagnosed after the infection already ended: window closes at diagnosis
        late = due[pop.state[due] != I]
        self.clear_tick[late] = tick
        self.clear_known[late] = self.flag_known[late]
        # flags that become known to the deciding party this tick trigger a lookback query
        newly = np.flatnonzero(self.flag_known == tick)
        if newly.size == 0:
            return
        start = int(self.diag_tick[newly].min()) - cfg.lookback
        if self.ue_ue == UeUeModel.CENTRALIZED:
            if cfg.n_leaves > 1:
                # origin leaf -> root -> every sibling, and the responses back
                fanout = np.unique(self.leaf[newly]).size * cfg.n_leaves
                self.messages[MessageKind.DATA_QUERY] += fanout
                self.messages[MessageKind.DATA_RESPONSE] += fanout
            store = self.fe_store
        else:
            store = self.ue_store
        c, s, o = store.lookup(newly, start, tick)
        ok = self._flag_window(s, c, tick)
        self._emit(s[ok], o[ok], c[ok], tick, push=self.ue_ue != UeUeModel.USER_CENTERED)

    def _resolutions(self, tick: int, pop: Population) -> None:
        done = np.flatnonzero((pop.resolution_at == tick) & (pop.state != I) & (self.diag_tick != NONE))
        self._status(tick, done, infectious=False)

    def _poll(self, tick: int, pop: Population) -> None:
        if self.ue_ue != UeUeModel.USER_CENTERED or tick % self.config.poll_period:
            return
        polling = int(np.count_nonzero(pop.state != D))
        self.messages[MessageKind.DATA_QUERY] += polling
        self.messages[MessageKind.DATA_RESPONSE] += polling
        if self._pending_pull:
            arrival = tick + 2 * self.config.latency
            self._outbox[arrival].extend(self._pending_pull)
            self.local_notices += sum(p.size for p, _ in self._pending_pull)
            self._pending_pull = []

    def _deliver(self, tick: int) -> np.ndarray:
        batch = self._outbox.pop(tick, [])
        if not batch:
            return np.empty(0, dtype=np.int64)
        peers = np.concatenate([p for p, _ in batch])
        contact = np.concatenate([c for _, c in batch])
        self.delivered += peers.size
        self.delays.append(tick - contact)
        return np.unique(peers)

    def finish(self, tick: int, pop: Population) -> None:
        self.final_tick = tick

    # -- reporting -------------------------------------------------------------

    def stats(self) -> dict:
        delays = np.concatenate(self.delays) if self.delays else np.empty(0)
        audit = self.audit.arrays()
        return {
            "model": self.config.model.ue_ue.value,
            "ue_oe_model": self.config.model.ue_oe.value,
            "messages": {k.value: int(self.messages.get(k, 0)) for k in MessageKind},
            "notifications_emitted": int(audit["subject"].size),
            "notifications_delivered": int(self.delivered),
            "distinct_notified": int(np.unique(audit["peer"]).size),
            "median_exposure_to_notification": float(np.median(delays)) if delays.size else None,
        }

    def exposure_pairs(self) -> set[tuple[int, int]]:
        """(subject id, peer id) for every exposure flag handed out."""
        a = self.audit.arrays()
        return set(zip(self.ids[a["subject"]].tolist(), self.ids[a["peer"]].tolist()))
