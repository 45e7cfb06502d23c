"""Agent-based epidemic simulation coupled with a simulated IoT contact tracing network."""

from .core import Agent, HealthState, Position, TraceEvent, distance, seeded_rng
from .scenarios import ScenarioConfig, aggregate, builtin_scenarios, run_scenario
from .sim import SimParams, TickReport, run
from .sir import SirParams, SirState, integrate, r0_from_contact, r0_from_rates

__version__ = "0.1.0"
