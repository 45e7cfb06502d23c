"""Scenario config files and every on-disk output format.

Config grammar (one setting per line)::

    # comment
    [scenario.<name>]
    key = value

A section named after a built-in scenario starts from that scenario;
any other name starts from the library defaults.  An empty file means
the five global-parameter built-ins.  See docs/FORMATS.md for the key
table, CSV columns and the summary JSON schema.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .core import SensingMode, SensingModeKind
from .protocol import InteractionModel, ProtocolConfig, UeOeModel, UeUeModel
from .scenarios import (
    AggregateStats,
    Mode,
    RunSummary,
    ScenarioConfig,
    builtin_scenarios,
)
from .sim import CURVE_COLUMNS, EventLog, Lockdown, SimParams, TickReport

SUMMARY_SCHEMA_ID = "ctsim.summary/1"
OUTPUT_ENV = "CTSIM_OUT"


class ConfigError(ValueError):
    pass


# key -> (type, low, high); None bounds are open
_SIM_KEYS = {
    "n": (int, 1, None),
    "avg_speed": (float, 0.0, 1.0),
    "infection_range": (float, 0.0, 1.0),
    "infection_prob": (float, 0.0, 1.0),
    "mortality_rate": (float, 0.0, 1.0),
    "beds_per_1000": (float, 0.0, 1000.0),
    "first_case_tick": (int, 0, None),
    "recovery_min": (int, 1, None),
    "recovery_max": (int, 1, None),
    "notified_speed_factor": (float, 0.0, 1.0),
    "notified_prob_factor": (float, 0.0, 1.0),
    "notified_duration": (int, 0, None),
    "horizon": (int, 0, None),
    "heading_jitter": (float, 0.0, math.pi),
}
_LOCKDOWN_KEYS = {
    "lockdown.trigger_fraction": (float, 0.0, 1.0),
    "lockdown.compliance": (float, 0.0, 1.0),
}
_PROTOCOL_NUM_KEYS = {
    "protocol.lookback": (int, 0, None),
    "protocol.latency": (int, 0, None),
    "protocol.detection_delay": (int, 0, None),
    "protocol.n_leaves": (int, 1, None),
    "protocol.participation": (float, 0.0, 1.0),
    "protocol.poll_period": (int, 1, None),
}
_PROTOCOL_ENUM_KEYS = {
    "protocol.ue_ue": UeUeModel,
    "protocol.ue_oe": UeOeModel,
    "protocol.sensing": SensingModeKind,
}
_OTHER_KEYS = ("mode", "seeds", "lockdown", "protocol.fe_upload", "protocol.retention")

_SECTION = re.compile(r"^\[scenario\.([A-Za-z0-9_\-]+)\]$")
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _number(kind, key, raw, lineno):
    try:
        if kind is int:
            if not re.fullmatch(r"[+-]?\d+", raw):
                raise ValueError
            return int(raw)
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {'an integer' if kind is int else 'a number'}, got {raw!r}")


def _bounded(key, spec, raw, lineno):
    kind, lo, hi = spec
    value = _number(kind, key, raw, lineno)
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        lo_s = "-inf" if lo is None else lo
        hi_s = "inf" if hi is None else hi
        raise ConfigError(f"line {lineno}: {key} = {raw} out of range [{lo_s}, {hi_s}]")
    return value


def _flag(key, raw, lineno):
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"line {lineno}: {key} expects true/false, got {raw!r}")


@dataclass
class _Draft:
    name: str
    lineno: int
    sim: dict
    lockdown: Optional[dict]
    mode: Mode
    seeds: tuple
    protocol: dict
    explicit: set = field(default_factory=set)


def _draft_from(sc: ScenarioConfig, lineno: int) -> _Draft:
    sim = asdict(sc.sim)
    lock = sim.pop("lockdown")
    sim.pop("seed")
    proto = {}
    if sc.protocol is not None:
        proto = _protocol_items(sc.protocol)
    return _Draft(sc.name, lineno, sim, lock, sc.mode, tuple(sc.seeds), proto)


def _protocol_items(p: ProtocolConfig) -> dict:
    return {
        "protocol.ue_ue": p.model.ue_ue,
        "protocol.ue_oe": p.model.ue_oe,
        "protocol.lookback": p.lookback,
        "protocol.latency": p.latency,
        "protocol.detection_delay": p.detection_delay,
        "protocol.n_leaves": p.n_leaves,
        "protocol.sensing": p.sensing.kind,
        "protocol.participation": p.sensing.proactive_participation,
        "protocol.fe_upload": p.fe_upload,
        "protocol.poll_period": p.poll_period,
        "protocol.retention": p.retention,
    }


def _finish(d: _Draft) -> ScenarioConfig:
    sim_kw = dict(d.sim)
    if sim_kw["recovery_min"] > sim_kw["recovery_max"]:
        raise ConfigError(f"section {d.name}: recovery_min must not exceed recovery_max")
    if sim_kw["horizon"] < sim_kw["first_case_tick"]:
        raise ConfigError(f"section {d.name}: horizon must not be before first_case_tick")
    lock = Lockdown(**d.lockdown) if d.lockdown is not None else None
    sim = SimParams(lockdown=lock, **sim_kw)
    protocol = None
    if d.mode == Mode.PROTOCOL:
        if "protocol.lookback" not in d.explicit:
            raise ConfigError(f"section {d.name} (line {d.lineno}): protocol mode requires protocol.lookback")
        p = d.protocol
        defaults = _protocol_items(ProtocolConfig())
        p = {**defaults, **p}
        protocol = ProtocolConfig(
            model=InteractionModel(p["protocol.ue_ue"], p["protocol.ue_oe"]),
            lookback=p["protocol.lookback"],
            latency=p["protocol.latency"],
            detection_delay=p["protocol.detection_delay"],
            n_leaves=p["protocol.n_leaves"],
            sensing=SensingMode(p["protocol.sensing"], p["protocol.participation"]),
            fe_upload=p["protocol.fe_upload"],
            poll_period=p["protocol.poll_period"],
            retention=p["protocol.retention"],
        )
        try:
            protocol.validate()
        except ValueError as exc:
            raise ConfigError(f"section {d.name}: {exc}")
    return ScenarioConfig(d.name, sim, d.mode, protocol, d.seeds)


def parse_config_text(text: str) -> list[ScenarioConfig]:
    builtins = {sc.name: sc for sc in builtin_scenarios()}
    drafts: list[_Draft] = []
    current: Optional[_Draft] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION.match(line)
        if m:
            name = m.group(1)
            if any(d.name == name for d in drafts):
                raise ConfigError(f"line {lineno}: duplicate section [scenario.{name}]")
            base = builtins.get(name, ScenarioConfig(name))
            current = _draft_from(base, lineno)
            current.name = name
            drafts.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value' or a [scenario.<name>] header")
        if current is None:
            raise ConfigError(f"line {lineno}: setting outside of a [scenario.<name>] section")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not raw:
            raise ConfigError(f"line {lineno}: missing value for {key}")
        _apply(current, key, raw, lineno)
    if not drafts:
        return [sc for sc in builtins.values() if sc.mode == Mode.GLOBAL]
    return [_finish(d) for d in drafts]


def _apply(d: _Draft, key: str, raw: str, lineno: int) -> None:
    d.explicit.add(key)
    if key in _SIM_KEYS:
        d.sim[key] = _bounded(key, _SIM_KEYS[key], raw, lineno)
    elif key in _LOCKDOWN_KEYS:
        if d.lockdown is None:
            d.lockdown = asdict(Lockdown())
        d.lockdown[key.split(".", 1)[1]] = _bounded(key, _LOCKDOWN_KEYS[key], raw, lineno)
    elif key == "lockdown":
        if raw.lower() in ("none", "off", "false"):
            d.lockdown = None
        elif raw.lower() in ("on", "true"):
            d.lockdown = d.lockdown or asdict(Lockdown())
        else:
            raise ConfigError(f"line {lineno}: lockdown expects on/off")
    elif key == "mode":
        try:
            d.mode = Mode(raw.lower())
        except ValueError:
            raise ConfigError(f"line {lineno}: mode must be 'global' or 'protocol', got {raw!r}")
    elif key == "seeds":
        seeds = []
        for part in ([] if raw.lower() == "none" else raw.split(",")):
            part = part.strip()
            if part:
                s = _number(int, key, part, lineno)
                if not 0 <= s < 2**64:
                    raise ConfigError(f"line {lineno}: seed {s} out of range [0, 2^64)")
                seeds.append(s)
        d.seeds = tuple(seeds)
    elif key in _PROTOCOL_NUM_KEYS:
        d.protocol[key] = _bounded(key, _PROTOCOL_NUM_KEYS[key], raw, lineno)
    elif key in _PROTOCOL_ENUM_KEYS:
        enum_cls = _PROTOCOL_ENUM_KEYS[key]
        try:
            d.protocol[key] = enum_cls(raw.lower())
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            raise ConfigError(f"line {lineno}: {key} must be one of {allowed}, got {raw!r}")
    elif key == "protocol.fe_upload":
        d.protocol[key] = _flag(key, raw, lineno)
    elif key == "protocol.retention":
        d.protocol[key] = None if raw.lower() == "none" else _bounded(key, (int, 0, None), raw, lineno)
    else:
        raise ConfigError(f"line {lineno}: unknown key {key!r}")


def parse_config(path) -> list[ScenarioConfig]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if hasattr(v, "value"):
        return v.value
    if v is None:
        return "none"
    return repr(v)


def format_config(scenarios: list[ScenarioConfig]) -> str:
    """Serialize scenarios so that :func:`parse_config_text` restores them exactly."""
    out = []
    for sc in scenarios:
        out.append(f"[scenario.{sc.name}]")
        out.append(f"mode = {sc.mode.value}")
        out.append("seeds = " + (", ".join(str(s) for s in sc.seeds) or "none"))
        sim = asdict(sc.sim)
        for key in _SIM_KEYS:
            out.append(f"{key} = {_fmt(sim[key])}")
        if sc.sim.lockdown is None:
            out.append("lockdown = off")
        else:
            out.append(f"lockdown.trigger_fraction = {_fmt(sc.sim.lockdown.trigger_fraction)}")
            out.append(f"lockdown.compliance = {_fmt(sc.sim.lockdown.compliance)}")
        if sc.protocol is not None:
            for key, value in _protocol_items(sc.protocol).items():
                out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


# -- writers ------------------------------------------------------------------

def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_curves(series: list[TickReport], path) -> Path:
    if not series:
        raise ValueError("empty series")
    rows = ([int(v) if isinstance(v, bool) else v for v in (getattr(r, c) for c in CURVE_COLUMNS)] for r in series)
    return atomic_write_text(path, _csv_text(CURVE_COLUMNS, rows))


def read_curves(path) -> list[TickReport]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            TickReport(**{c: (row[c] == "1") if c == "lockdown_active" else int(row[c]) for c in CURVE_COLUMNS})
            for row in reader
        ]


def write_mean_curves(curves: dict, path) -> Path:
    header = list(curves)
    n = len(curves["tick"])
    rows = ([repr(float(curves[c][k])) if c != "tick" else int(curves[c][k]) for c in header] for k in range(n))
    return atomic_write_text(path, _csv_text(header, rows))


EVENT_COLUMNS = ("tick", "subject_id", "peer_id", "x", "y", "kind")


def write_events(events: EventLog, path) -> Path:
    a = events.arrays()
    rows = (
        (int(t), int(s), int(p), repr(float(x)), repr(float(y)), "proximity")
        for t, s, p, x, y in zip(a["tick"], a["subject_id"], a["peer_id"], a["x"], a["y"])
    )
    return atomic_write_text(path, _csv_text(EVENT_COLUMNS, rows))


def ode_csv_text(states) -> str:
    rows = ((repr(float(s.t)), repr(float(s.s)), repr(float(s.i)), repr(float(s.r))) for s in states)
    return _csv_text(("t", "S", "I", "R"), rows)


def write_ode(states, path) -> Path:
    return atomic_write_text(path, ode_csv_text(states))


def summary_document(config: ScenarioConfig, summaries: list[RunSummary], stats: AggregateStats,
                     protocol_stats: Optional[list]) -> dict:
    sim = asdict(config.sim)
    sim.pop("seed")
    return {
        "schema": SUMMARY_SCHEMA_ID,
        "scenario": config.name,
        "mode": config.mode.value,
        "seeds": list(config.seeds),
        "params": sim,
        "runs": [asdict(s) for s in summaries],
        "aggregate": {
            "runs": stats.runs,
            "fields": {k: (asdict(v) if v is not None else None) for k, v in stats.fields.items()},
        },
        "protocol": None if protocol_stats is None else {
            "config": {k: _fmt(v) if hasattr(v, "value") else v
                       for k, v in _protocol_items(config.protocol).items()},
            "per_seed": protocol_stats,
            "messages_total": _sum_messages(protocol_stats),
        },
    }


def _sum_messages(per_seed: list) -> dict:
    total: dict[str, int] = {}
    for st in per_seed:
        for k, v in st["messages"].items():
            total[k] = total.get(k, 0) + v
    return total


def write_summary(config: ScenarioConfig, summaries: list[RunSummary], stats: AggregateStats,
                  protocol_stats: Optional[list], path) -> Path:
    doc = summary_document(config, summaries, stats, protocol_stats)
    return atomic_write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def read_summary(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def summaries_from_document(doc: dict) -> list[RunSummary]:
    return [RunSummary(**r) for r in doc["runs"]]


def load_schema() -> dict:
    here = Path(__file__).with_name("summary.schema.json")
    return json.loads(here.read_text(encoding="utf-8"))


@dataclass
class OutputBundle:
    run_dir: Path
    curves: dict = field(default_factory=dict)      # (scenario, seed) -> path
    summaries: dict = field(default_factory=dict)   # scenario -> path
    mean_curves: dict = field(default_factory=dict)  # scenario -> path
    events: dict = field(default_factory=dict)      # (scenario, seed) -> path
    ode_baseline: Optional[Path] = None


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "ctsim-out"))


def with_seeds(sc: ScenarioConfig, seeds) -> ScenarioConfig:
    return replace(sc, seeds=tuple(seeds))
