"""Discrete-time agent-based epidemic on the unit square.

The population is stored column-wise in :class:`Population` so a tick over
5000 people is a handful of numpy operations.  One tick runs, in order:
seeding of the first case (once), movement, infection, resolution,
the lockdown check and finally the optional contact-tracing hook.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Protocol

import numpy as np

from .core import TWO_PI, Agent, EventKind, HealthState, Position, TraceEvent, seeded_rng
from .grid import pairs_within

S = int(HealthState.SUSCEPTIBLE)
I = int(HealthState.INFECTIOUS)
R = int(HealthState.RECOVERED)
D = int(HealthState.DEAD)

NONE = -1  # sentinel for unset tick columns

# Per-tick infection probability listed in the parameter table; the
# scenario narrative uses 5 %, which is the default below.
TABLE_INFECTION_PROB = 0.03

# Sub-stream numbers passed to seeded_rng.
STREAM_SPAWN, STREAM_MOVE, STREAM_INFECT, STREAM_RESOLVE, STREAM_SEED_CASE, STREAM_PROTOCOL = range(6)


@dataclass(frozen=True)
class Lockdown:
    trigger_fraction: float = 0.10
    compliance: float = 0.92


@dataclass(frozen=True)
class SimParams:
    n: int = 5000
    avg_speed: float = 0.0042
    infection_range: float = 0.01
    infection_prob: float = 0.05
    mortality_rate: float = 0.034
    beds_per_1000: float = 4.7
    first_case_tick: int = 53
    recovery_min: int = 200
    recovery_max: int = 450
    lockdown: Optional[Lockdown] = None
    notified_speed_factor: float = 1.0
    notified_prob_factor: float = 1.0
    notified_duration: int = 500
    horizon: int = 10000
    seed: int = 1
    heading_jitter: float = 0.3

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        for name in ("infection_prob", "mortality_rate", "notified_speed_factor", "notified_prob_factor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")
        if self.lockdown is not None:
            for name in ("trigger_fraction", "compliance"):
                v = getattr(self.lockdown, name)
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"lockdown.{name} = {v} outside [0, 1]")
        if self.avg_speed < 0 or self.infection_range < 0 or self.beds_per_1000 < 0:
            raise ValueError("speed, range and bed density must be non-negative")
        if not 1 <= self.recovery_min <= self.recovery_max:
            raise ValueError("need 1 <= recovery_min <= recovery_max")
        if self.first_case_tick < 0 or self.notified_duration < 0 or self.heading_jitter < 0:
            raise ValueError("ticks, durations and jitter must be non-negative")
        if self.horizon < self.first_case_tick:
            raise ValueError(f"horizon {self.horizon} is before first_case_tick {self.first_case_tick}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def hospital_capacity(self) -> int:
        return hospital_capacity(self.n, self.beds_per_1000)


def hospital_capacity(n: int, beds_per_1000: float) -> int:
    # epsilon keeps e.g. 1000 * 4.7 / 1000 from flooring to 3
    return int(math.floor(n * beds_per_1000 / 1000.0 + 1e-9))


@dataclass(frozen=True)
class TickReport:
    tick: int
    susceptible: int
    infectious: int
    recovered: int
    dead: int
    hospitalized: int
    lockdown_active: bool
    notifications_active: int

    @property
    def total(self) -> int:
        return self.susceptible + self.infectious + self.recovered + self.dead


CURVE_COLUMNS = tuple(f.name for f in fields(TickReport))


@dataclass
class Population:
    """Column store for all agents; row ``k`` is one person."""

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    state: np.ndarray
    infected_at: np.ndarray
    resolution_at: np.ndarray
    hospitalized: np.ndarray
    compliant: np.ndarray
    notified_until: np.ndarray

    @property
    def n(self) -> int:
        return self.ids.size

    def alive(self) -> np.ndarray:
        return self.state != D

    def notified(self, tick: int) -> np.ndarray:
        return self.notified_until >= tick

    def counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=4)

    def index_of(self, agent_id: int) -> int:
        hit = np.flatnonzero(self.ids == agent_id)
        if hit.size == 0:
            raise KeyError(agent_id)
        return int(hit[0])

    def agent(self, k: int) -> Agent:
        def opt(v):
            return None if v == NONE else int(v)

        return Agent(
            id=int(self.ids[k]),
            pos=Position(float(self.x[k]), float(self.y[k])),
            heading=float(self.heading[k]),
            speed=float(self.speed[k]),
            state=HealthState(int(self.state[k])),
            infected_at=opt(self.infected_at[k]),
            resolution_at=opt(self.resolution_at[k]),
            hospitalized=bool(self.hospitalized[k]),
            lockdown_compliant=bool(self.compliant[k]),
            notified_until=opt(self.notified_until[k]),
        )

    def agents(self) -> list[Agent]:
        return [self.agent(k) for k in range(self.n)]

    def set_agent(self, k: int, a: Agent) -> None:
        def raw(v):
            return NONE if v is None else v

        self.ids[k] = a.id
        self.x[k] = a.pos.x
        self.y[k] = a.pos.y
        self.heading[k] = a.heading
        self.speed[k] = a.speed
        self.state[k] = int(a.state)
        self.infected_at[k] = raw(a.infected_at)
        self.resolution_at[k] = raw(a.resolution_at)
        self.hospitalized[k] = a.hospitalized
        self.compliant[k] = a.lockdown_compliant
        self.notified_until[k] = raw(a.notified_until)

    @classmethod
    def from_agents(cls, agents: list[Agent]) -> "Population":
        n = len(agents)
        pop = cls(
            ids=np.zeros(n, dtype=np.int64),
            x=np.zeros(n),
            y=np.zeros(n),
            heading=np.zeros(n),
            speed=np.zeros(n),
            state=np.zeros(n, dtype=np.int8),
            infected_at=np.full(n, NONE, dtype=np.int64),
            resolution_at=np.full(n, NONE, dtype=np.int64),
            hospitalized=np.zeros(n, dtype=bool),
            compliant=np.zeros(n, dtype=bool),
            notified_until=np.full(n, NONE, dtype=np.int64),
        )
        for k, a in enumerate(agents):
            pop.set_agent(k, a)
        return pop


@dataclass
class EventLog:
    """Proximity events kept as parallel arrays, one chunk per tick."""

    _chunks: list = field(default_factory=list)

    def append(self, tick: int, subject: np.ndarray, peer: np.ndarray, x: np.ndarray, y: np.ndarray) -> None:
        if subject.size:
            self._chunks.append((np.full(subject.size, tick, dtype=np.int64), subject, peer, x, y))

    def arrays(self) -> dict[str, np.ndarray]:
        names = ("tick", "subject_id", "peer_id", "x", "y")
        if not self._chunks:
            return {k: np.empty(0, dtype=float if k in "xy" else np.int64) for k in names}
        return {k: np.concatenate([c[m] for c in self._chunks]) for m, k in enumerate(names)}

    def __len__(self) -> int:
        return sum(c[0].size for c in self._chunks)

    def __iter__(self):
        for t, s, p, x, y in self._chunks:
            for k in range(t.size):
                yield TraceEvent(
                    subject_id=int(s[k]),
                    peer_id=int(p[k]),
                    location=Position(float(x[k]), float(y[k])),
                    timestamp=int(t[k]),
                    kind=EventKind.PROXIMITY,
                )


class TracingHook(Protocol):
    """What :func:`run` expects from a contact-tracing deployment."""

    def attach(self, pop: Population, params: SimParams) -> None: ...

    def on_tick(self, tick: int, pop: Population, pair_i: np.ndarray, pair_j: np.ndarray) -> np.ndarray:
        """Process one tick; return population rows notified this tick."""
        ...

    def finish(self, tick: int, pop: Population) -> None: ...


def _unique_ids(rng: np.random.Generator, n: int) -> np.ndarray:
    ids = np.unique(rng.integers(1, 2**63 - 1, size=n, dtype=np.int64))
    while ids.size < n:
        extra = rng.integers(1, 2**63 - 1, size=n - ids.size, dtype=np.int64)
        ids = np.unique(np.concatenate([ids, extra]))
    return rng.permutation(ids)


def spawn_population(params: SimParams, rng: np.random.Generator) -> Population:
    n = params.n
    ids = _unique_ids(rng, n)
    x = rng.random(n)
    y = rng.random(n)
    heading = rng.uniform(0.0, TWO_PI, size=n)
    compliant = np.zeros(n, dtype=bool)
    if params.lockdown is not None:
        k = int(math.floor(params.lockdown.compliance * n + 1e-9))
        compliant[rng.choice(n, size=k, replace=False)] = True
    return Population(
        ids=ids,
        x=x,
        y=y,
        heading=heading,
        speed=np.full(n, params.avg_speed),
        state=np.zeros(n, dtype=np.int8),
        infected_at=np.full(n, NONE, dtype=np.int64),
        resolution_at=np.full(n, NONE, dtype=np.int64),
        hospitalized=np.zeros(n, dtype=bool),
        compliant=compliant,
        notified_until=np.full(n, NONE, dtype=np.int64),
    )


def _reflect(pos: np.ndarray, heading: np.ndarray, mirror) -> None:
    low = pos < 0.0
    high = pos > 1.0
    pos[low] = -pos[low]
    pos[high] = 2.0 - pos[high]
    flip = low | high
    heading[flip] = mirror(heading[flip])
    np.clip(pos, 0.0, 1.0, out=pos)


def step_movement(pop: Population, params: SimParams, rng: np.random.Generator,
                  tick: int = 0, lockdown_active: bool = False) -> None:
    """Advance everyone who may move by one tick, in place.

    The heading jitter is drawn for every agent every tick so the stream
    position never depends on who happens to be moving.
    """
    jitter = rng.uniform(-params.heading_jitter, params.heading_jitter, size=pop.n)
    moving = pop.state != D
    if lockdown_active:
        moving &= ~pop.compliant
    idx = np.flatnonzero(moving)
    if idx.size == 0:
        return
    heading = np.mod(pop.heading[idx] + jitter[idx], TWO_PI)
    speed = pop.speed[idx] * np.where(pop.notified_until[idx] >= tick, params.notified_speed_factor, 1.0)
    x = pop.x[idx] + speed * np.cos(heading)
    y = pop.y[idx] + speed * np.sin(heading)
    _reflect(x, heading, lambda h: np.mod(math.pi - h, TWO_PI))
    _reflect(y, heading, lambda h: np.mod(-h, TWO_PI))
    pop.x[idx] = x
    pop.y[idx] = y
    pop.heading[idx] = heading


def in_range_pairs(pop: Population, params: SimParams) -> tuple[np.ndarray, np.ndarray]:
    """Row pairs of living agents within infection range."""
    return pairs_within(pop.x, pop.y, params.infection_range, active=pop.state != D)


def step_infection(pop: Population, params: SimParams, tick: int, rng: np.random.Generator,
                   pairs: tuple[np.ndarray, np.ndarray] | None = None,
                   log: EventLog | None = None) -> np.ndarray:
    """Transmit along susceptible/infectious pairs in range.

    Every such pair costs one uniform draw, in canonical pair order, and is
    logged as a proximity event (subject = infectious side) whether or not
    transmission happens.  Returns the rows newly infected this tick.
    """
    i, j = in_range_pairs(pop, params) if pairs is None else pairs
    si, sj = pop.state[i], pop.state[j]
    fwd = (si == I) & (sj == S)
    rev = (si == S) & (sj == I)
    mixed = fwd | rev
    inf = np.where(fwd, i, j)[mixed]
    sus = np.where(fwd, j, i)[mixed]
    if log is not None:
        log.append(tick, pop.ids[inf], pop.ids[sus], pop.x[inf], pop.y[inf])
    if sus.size == 0:
        return sus
    p = params.infection_prob * np.where(pop.notified_until[sus] >= tick, params.notified_prob_factor, 1.0)
    hit = rng.random(sus.size) < p
    new = np.unique(sus[hit])
    if new.size:
        pop.state[new] = I
        pop.infected_at[new] = tick
        pop.resolution_at[new] = tick + rng.integers(
            params.recovery_min, params.recovery_max + 1, size=new.size)
    return new


def assign_beds(pop: Population, capacity: int) -> None:
    """Hand out beds to infectious agents, earliest infection first."""
    pop.hospitalized[:] = False
    if capacity <= 0:
        return
    infectious = np.flatnonzero(pop.state == I)
    if infectious.size > capacity:
        order = np.lexsort((infectious, pop.infected_at[infectious]))
        infectious = infectious[order[:capacity]]
    pop.hospitalized[infectious] = True


def step_resolution(pop: Population, params: SimParams, tick: int, rng: np.random.Generator) -> np.ndarray:
    """Resolve infections due this tick; returns the resolved rows.

    Beds are allocated before anyone resolves, so a bed freed here is only
    handed on at the next tick.
    """
    assign_beds(pop, params.hospital_capacity)
    due = np.flatnonzero((pop.state == I) & (pop.resolution_at <= tick))
    if due.size == 0:
        return due
    risk = np.where(pop.hospitalized[due], params.mortality_rate, min(1.0, 2.0 * params.mortality_rate))
    dies = rng.random(due.size) < risk
    pop.state[due] = np.where(dies, D, R).astype(np.int8)
    pop.hospitalized[due] = False
    return due


def step_lockdown(pop: Population, params: SimParams, tick: int, active: bool = False) -> bool:
    """Latched lockdown trigger on the cumulative infected count."""
    if active:
        return True
    if params.lockdown is None:
        return False
    cumulative = int(np.count_nonzero(pop.infected_at != NONE))
    return cumulative >= params.lockdown.trigger_fraction * params.n


def apply_notification(agent: Agent, params: SimParams, tick: int) -> Agent:
    """Open (or extend) an agent's exposure-notification window."""
    if not agent.alive:
        return agent
    until = tick + params.notified_duration
    if agent.notified_until is not None:
        until = max(until, agent.notified_until)
    return Agent(**{**agent.__dict__, "notified_until": until})


def effective_speed(agent: Agent, params: SimParams, tick: int) -> float:
    return agent.speed * (params.notified_speed_factor if agent.is_notified(tick) else 1.0)


def effective_infection_prob(agent: Agent, params: SimParams, tick: int) -> float:
    return params.infection_prob * (params.notified_prob_factor if agent.is_notified(tick) else 1.0)


def notify_rows(pop: Population, rows: np.ndarray, params: SimParams, tick: int) -> None:
    """Vectorised :func:`apply_notification` over population rows."""
    rows = rows[pop.state[rows] != D]
    pop.notified_until[rows] = np.maximum(pop.notified_until[rows], tick + params.notified_duration)


@dataclass
class SimResult:
    params: SimParams
    reports: list[TickReport]
    events: EventLog
    population: Population
    lockdown_tick: Optional[int]
    last_resolution_tick: Optional[int]

    @property
    def cumulative_infected(self) -> np.ndarray:
        """Cumulative infections per reported tick."""
        return np.array([r.infectious + r.recovered + r.dead for r in self.reports])


def run(params: SimParams, protocol: TracingHook | None = None, record_events: bool = True) -> SimResult:
    params.validate()
    seed = params.seed
    pop = spawn_population(params, seeded_rng(seed, STREAM_SPAWN))
    move_rng = seeded_rng(seed, STREAM_MOVE)
    infect_rng = seeded_rng(seed, STREAM_INFECT)
    resolve_rng = seeded_rng(seed, STREAM_RESOLVE)
    seed_rng = seeded_rng(seed, STREAM_SEED_CASE)
    log = EventLog() if record_events else None
    if protocol is not None:
        protocol.attach(pop, params)

    reports: list[TickReport] = []
    lockdown = False
    lockdown_tick = None
    last_resolution = None
    tick = 0
    for tick in range(params.horizon + 1):
        if tick == params.first_case_tick:
            k = int(seed_rng.integers(pop.n))
            pop.state[k] = I
            pop.infected_at[k] = tick
            pop.resolution_at[k] = tick + int(seed_rng.integers(params.recovery_min, params.recovery_max + 1))

        step_movement(pop, params, move_rng, tick, lockdown)
        pairs = in_range_pairs(pop, params)
        step_infection(pop, params, tick, infect_rng, pairs, log)
        resolved = step_resolution(pop, params, tick, resolve_rng)
        if resolved.size:
            last_resolution = tick
        was = lockdown
        lockdown = step_lockdown(pop, params, tick, lockdown)
        if lockdown and not was:
            lockdown_tick = tick
        if protocol is not None:
            notified = protocol.on_tick(tick, pop, *pairs)
            if notified.size:
                notify_rows(pop, notified, params, tick)

        c = pop.counts()
        reports.append(TickReport(
            tick=tick,
            susceptible=int(c[S]),
            infectious=int(c[I]),
            recovered=int(c[R]),
            dead=int(c[D]),
            hospitalized=int(np.count_nonzero(pop.hospitalized)),
            lockdown_active=lockdown,
            notifications_active=int(np.count_nonzero((pop.notified_until >= tick) & (pop.state != D))),
        ))
        if tick >= params.first_case_tick and c[I] == 0:
            break

    if protocol is not None:
        protocol.finish(tick, pop)
    return SimResult(params, reports, log if log is not None else EventLog(), pop, lockdown_tick, last_resolution)
