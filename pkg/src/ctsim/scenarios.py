"""Built-in scenarios, multi-seed execution and run statistics."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from .protocol import Deployment, ProtocolConfig
from .sim import CURVE_COLUMNS, NONE, Lockdown, SimParams, SimResult, TickReport, run

DEFAULT_SEEDS = (1, 2, 3, 4, 5)

BASELINE_SPEED = 0.0042
BASELINE_PROB = 0.05
REDUCED_PROB = 0.02


class Mode(enum.Enum):
    GLOBAL = "global"
    PROTOCOL = "protocol"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    sim: SimParams = SimParams()
    mode: Mode = Mode.GLOBAL
    protocol: Optional[ProtocolConfig] = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def validate(self) -> None:
        if self.mode == Mode.PROTOCOL and self.protocol is None:
            raise ValueError(f"scenario {self.name}: protocol mode needs a protocol block")
        self.sim.validate()
        if self.protocol is not None:
            self.protocol.validate()

    def params_for(self, seed: int) -> SimParams:
        return replace(self.sim, seed=seed)


class ScenarioError(RuntimeError):
    def __init__(self, scenario: str, seed: int, cause: BaseException):
        super().__init__(f"scenario {scenario}, seed {seed}: {cause}")
        self.scenario = scenario
        self.seed = seed


def builtin_scenarios() -> list[ScenarioConfig]:
    """S1-S3 and the lockdown variants S2L/S3L, plus protocol-driven S2P/S3P.

    The protocol twins start from the baseline parameters; only agents that
    receive an exposure notification drop to the S2 (resp. S3) speed and
    infection probability.
    """
    base = SimParams()
    s1 = replace(base, infection_prob=BASELINE_PROB, avg_speed=BASELINE_SPEED)
    s2 = replace(base, infection_prob=REDUCED_PROB, avg_speed=0.002)
    s3 = replace(base, infection_prob=REDUCED_PROB, avg_speed=0.001)
    lock = Lockdown(trigger_fraction=0.10, compliance=0.92)
    out = [
        ScenarioConfig("S1", s1),
        ScenarioConfig("S2", s2),
        ScenarioConfig("S3", s3),
        ScenarioConfig("S2L", replace(s2, lockdown=lock)),
        ScenarioConfig("S3L", replace(s3, lockdown=lock)),
    ]
    tracing = ProtocolConfig(lookback=base.recovery_max, latency=0, detection_delay=0)
    for name, target in (("S2P", s2), ("S3P", s3)):
        twin = replace(
            s1,
            notified_speed_factor=target.avg_speed / s1.avg_speed,
            notified_prob_factor=target.infection_prob / s1.infection_prob,
        )
        out.append(ScenarioConfig(name, twin, Mode.PROTOCOL, tracing))
    return out


def scenario_by_name(name: str, scenarios: Optional[list[ScenarioConfig]] = None) -> ScenarioConfig:
    for sc in builtin_scenarios() if scenarios is None else scenarios:
        if sc.name == name:
            return sc
    raise KeyError(f"unknown scenario {name!r}")


@dataclass(frozen=True)
class RunSummary:
    name: str
    seed: int
    peak_infectious: int
    peak_tick: int
    total_infected: int
    total_dead: int
    total_recovered: int
    last_infection_tick: int
    last_resolution_tick: int
    lockdown_tick: Optional[int] = None
    first_case_tick: int = 53

    @property
    def duration(self) -> int:
        return self.last_resolution_tick - self.first_case_tick


NUMERIC_FIELDS = (
    "peak_infectious", "peak_tick", "total_infected", "total_dead", "total_recovered",
    "last_infection_tick", "last_resolution_tick", "lockdown_tick",
)


def summarize(name: str, result: SimResult) -> RunSummary:
    infectious = np.array([r.infectious for r in result.reports])
    pop = result.population
    infected = pop.infected_at != NONE
    final = result.reports[-1]
    last_res = result.last_resolution_tick
    return RunSummary(
        name=name,
        seed=result.params.seed,
        peak_infectious=int(infectious.max()),
        peak_tick=int(result.reports[int(infectious.argmax())].tick),
        total_infected=int(infected.sum()),
        total_dead=final.dead,
        total_recovered=final.recovered,
        last_infection_tick=int(pop.infected_at[infected].max()) if infected.any() else NONE,
        last_resolution_tick=final.tick if last_res is None else last_res,
        lockdown_tick=result.lockdown_tick,
        first_case_tick=result.params.first_case_tick,
    )


@dataclass
class SeedRun:
    summary: RunSummary
    series: list[TickReport]
    protocol_stats: Optional[dict] = None
    events: Optional[object] = None


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    runs: list[SeedRun]

    @property
    def summaries(self) -> list[RunSummary]:
        return [r.summary for r in self.runs]


def run_seed(config: ScenarioConfig, seed: int, record_events: bool = False) -> SeedRun:
    """One deterministic run of ``config`` with ``seed``."""
    try:
        hook = Deployment(config.protocol) if config.mode == Mode.PROTOCOL else None
        result = run(config.params_for(seed), hook, record_events=record_events)
    except Exception as exc:
        raise ScenarioError(config.name, seed, exc) from exc
    return SeedRun(
        summary=summarize(config.name, result),
        series=result.reports,
        protocol_stats=hook.stats() if hook is not None else None,
        events=result.events if record_events else None,
    )


def _run_seed_args(args):
    return run_seed(*args)


def run_scenario(config: ScenarioConfig, workers: int = 1, record_events: bool = False) -> ScenarioResult:
    """Run every seed of ``config``; results come back in seed-list order."""
    config.validate()
    jobs = [(config, s, record_events) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_seed_args, jobs))
    else:
        runs = [run_seed(*j) for j in jobs]
    return ScenarioResult(config, runs)


@dataclass(frozen=True)
class FieldStats:
    mean: float
    min: float
    max: float
    std: float
    count: int


@dataclass(frozen=True)
class AggregateStats:
    name: str
    runs: int
    fields: dict

    def __getitem__(self, key: str) -> Optional[FieldStats]:
        return self.fields[key]

    def mean(self, key: str) -> float:
        return self.fields[key].mean


def describe(values) -> FieldStats:
    """Sample statistics with the n-1 divisor; a single value has std 0."""
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return FieldStats(float(v.mean()), float(v.min()), float(v.max()), std, int(v.size))


def aggregate(summaries: list[RunSummary]) -> AggregateStats:
    if not summaries:
        raise ValueError("need at least one run summary")
    names = {s.name for s in summaries}
    if len(names) > 1:
        raise ValueError(f"cannot aggregate across scenarios {sorted(names)}")
    out = {}
    for key in NUMERIC_FIELDS:
        vals = [getattr(s, key) for s in summaries if getattr(s, key) is not None]
        out[key] = describe(vals) if vals else None
    out["duration"] = describe([s.duration for s in summaries])
    return AggregateStats(summaries[0].name, len(summaries), out)


def mean_curves(series_list: list[list[TickReport]]) -> dict[str, np.ndarray]:
    """Per-tick mean over runs, padding shorter runs with their last report.

    Adds a ``cumulative_infected`` column next to the active counts.
    """
    if not series_list:
        raise ValueError("no series to average")
    length = max(len(s) for s in series_list)
    cols = [c for c in CURVE_COLUMNS if c != "tick"]
    stacked = {c: np.zeros((len(series_list), length)) for c in cols}
    for k, series in enumerate(series_list):
        for c in cols:
            vals = np.array([float(getattr(r, c)) for r in series])
            stacked[c][k, : vals.size] = vals
            stacked[c][k, vals.size:] = vals[-1]
    first_tick = series_list[0][0].tick
    out = {"tick": np.arange(first_tick, first_tick + length)}
    for c in cols:
        out[c] = stacked[c].mean(axis=0)
    out["cumulative_infected"] = out["infectious"] + out["recovered"] + out["dead"]
    return out


def duration_ratio(a: AggregateStats, b: AggregateStats) -> float:
    """Mean epidemic duration of ``a`` over that of ``b``."""
    return a.mean("duration") / b.mean("duration") if b.mean("duration") else math.inf


def summary_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(RunSummary))
