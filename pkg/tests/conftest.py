"""Full-size runs are cached per session so the acceptance and property
suites can share seeds without simulating twice."""

from dataclasses import replace
from functools import lru_cache

import numpy as np

from ctsim.scenarios import DEFAULT_SEEDS, ScenarioConfig, run_scenario, summarize
from ctsim.sim import SimParams, run


@lru_cache(maxsize=None)
def cached_summaries(sim: SimParams, seeds=DEFAULT_SEEDS, name="run"):
    return tuple(summarize(name, run(replace(sim, seed=s), record_events=False)) for s in seeds)


@lru_cache(maxsize=None)
def cached_scenario(config: ScenarioConfig):
    return run_scenario(config)


def mean_of(summaries, field):
    return float(np.mean([getattr(s, field) for s in summaries]))


# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
