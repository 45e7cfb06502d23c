import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cached_summaries, mean_of
from ctsim.core import Agent, HealthState, Position, seeded_rng
from ctsim.sim import (
    D, I, NONE, R, S, STREAM_SPAWN,
    Lockdown,
    Population,
    SimParams,
    apply_notification,
    assign_beds,
    effective_infection_prob,
    effective_speed,
    hospital_capacity,
    in_range_pairs,
    run,
    spawn_population,
    step_infection,
    step_lockdown,
    step_movement,
    step_resolution,
)
from ctsim.sir import SirParams, SirState, integrate, trajectory_array


def agent(k, x, y, state=HealthState.SUSCEPTIBLE, speed=0.0042, heading=0.0, infected_at=None, resolution_at=None):
    return Agent(k + 1, Position(x, y), heading, speed, state, infected_at, resolution_at)


def infectious(k, x, y, tick=0, resolve=1000):
    return agent(k, x, y, HealthState.INFECTIOUS, infected_at=tick, resolution_at=resolve)


# -- spawning --------------------------------------------------------------------

def test_spawn_default_population():
    pop = spawn_population(SimParams(), seeded_rng(1))
    assert pop.n == 5000
    assert np.all(pop.state == S)
    assert np.unique(pop.ids).size == 5000
    assert np.all((pop.x >= 0) & (pop.x <= 1) & (pop.y >= 0) & (pop.y <= 1))
    assert np.all((pop.heading >= 0) & (pop.heading < 2 * math.pi))


def test_spawn_single_agent():
    pop = spawn_population(SimParams(n=1), seeded_rng(3))
    assert pop.n == 1 and 0 <= pop.x[0] <= 1 and 0 <= pop.y[0] <= 1


def test_spawn_centroid():
    pop = spawn_population(SimParams(n=10_000), seeded_rng(11))
    assert abs(pop.x.mean() - 0.5) < 0.01 and abs(pop.y.mean() - 0.5) < 0.01


def test_spawn_compliance_count():
    pop = spawn_population(SimParams(lockdown=Lockdown(0.1, 0.92)), seeded_rng(1))
    assert int(pop.compliant.sum()) == 4600


def test_agent_round_trip():
    pop = spawn_population(SimParams(n=4), seeded_rng(1))
    a = pop.agent(2)
    assert Population.from_agents(pop.agents()).agent(2) == a
    pop.set_agent(1, replace(a, id=pop.ids[1]))
    assert pop.agent(1).pos == a.pos


# -- movement ------------------------------------------------------------------

def test_straight_move_without_jitter():
    pop = Population.from_agents([agent(0, 0.5, 0.5)])
    step_movement(pop, SimParams(n=1, heading_jitter=0.0), seeded_rng(0))
    assert pop.x[0] == pytest.approx(0.5042, abs=1e-12)
    assert pop.y[0] == pytest.approx(0.5, abs=1e-12)


def test_dead_agent_stays_put():
    dead = Agent(1, Position(0.3, 0.4), 0.0, 0.0042, HealthState.DEAD, infected_at=0, resolution_at=5)
    pop = Population.from_agents([dead])
    step_movement(pop, SimParams(n=1), seeded_rng(0))
    assert (pop.x[0], pop.y[0]) == (0.3, 0.4)


def test_reflection_at_wall():
    pop = Population.from_agents([agent(0, 0.999, 0.5, speed=0.0042)])
    step_movement(pop, SimParams(n=1, heading_jitter=0.0), seeded_rng(0))
    assert pop.x[0] == pytest.approx(2.0 - 1.0032, abs=1e-12)
    assert math.cos(pop.heading[0]) < 0


def test_mean_step_length():
    params = SimParams(n=500)
    pop = spawn_population(params, seeded_rng(5))
    rng = seeded_rng(6)
    lengths = []
    for t in range(1000):
        x0, y0 = pop.x.copy(), pop.y.copy()
        step_movement(pop, params, rng, t)
        lengths.append(np.hypot(pop.x - x0, pop.y - y0))
    assert np.mean(lengths) == pytest.approx(params.avg_speed, rel=0.05)


def test_notified_agents_slow_down():
    params = SimParams(n=1, heading_jitter=0.0, notified_speed_factor=0.5)
    pop = Population.from_agents([agent(0, 0.5, 0.5)])
    pop.notified_until[0] = 10
    step_movement(pop, params, seeded_rng(0), tick=10)
    assert pop.x[0] == pytest.approx(0.5021)
    step_movement(pop, params, seeded_rng(0), tick=11)
    assert pop.x[0] == pytest.approx(0.5063)


def test_lockdown_freezes_compliant_only():
    pop = Population.from_agents([agent(0, 0.5, 0.5), agent(1, 0.2, 0.2)])
    pop.compliant[0] = True
    step_movement(pop, SimParams(n=2), seeded_rng(0), lockdown_active=True)
    assert (pop.x[0], pop.y[0]) == (0.5, 0.5)
    assert (pop.x[1], pop.y[1]) != (0.2, 0.2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), speed=st.floats(0.0, 0.3), jitter=st.floats(0.0, 3.0))
def test_positions_stay_in_square(seed, speed, jitter):
    params = SimParams(n=50, avg_speed=speed, heading_jitter=jitter)
    pop = spawn_population(params, seeded_rng(seed))
    rng = seeded_rng(seed, 1)
    for t in range(50):
        step_movement(pop, params, rng, t)
        assert np.all((pop.x >= 0) & (pop.x <= 1) & (pop.y >= 0) & (pop.y <= 1))


# -- infection ----------------------------------------------------------------

def test_out_of_range_pair_never_infects():
    pop = Population.from_agents([infectious(0, 0.5, 0.5), agent(1, 0.52, 0.5)])
    new = step_infection(pop, SimParams(n=2, infection_prob=1.0), 1, seeded_rng(0))
    assert new.size == 0 and pop.state[1] == S


def test_certain_infection_in_range():
    pop = Population.from_agents([infectious(0, 0.5, 0.5), agent(1, 0.505, 0.5)])
    new = step_infection(pop, SimParams(n=2, infection_prob=1.0), 7, seeded_rng(0))
    assert new.tolist() == [1]
    assert pop.state[1] == I and pop.infected_at[1] == 7
    assert 7 + 200 <= pop.resolution_at[1] <= 7 + 450


def test_infection_count_is_binomial():
    # 10^4 isolated infectious/susceptible pairs, one tick each
    agents = []
    k = 0
    for a in range(100):
        for b in range(100):
            x, y = 0.005 + 0.0099 * a, 0.005 + 0.0099 * b
            agents.append(infectious(k, x, y))
            agents.append(agent(k + 1, x + 0.0005, y))
            k += 2
    pop = Population.from_agents(agents)
    params = SimParams(n=pop.n, infection_range=0.001, infection_prob=0.05)
    new = step_infection(pop, params, 1, seeded_rng(12))
    sigma = math.sqrt(1e4 * 0.05 * 0.95)
    assert abs(new.size - 500) <= 3 * sigma


def test_notified_susceptible_has_lower_risk():
    agents = [infectious(0, 0.5, 0.5), agent(1, 0.505, 0.5)]
    params = SimParams(n=2, infection_prob=1.0, notified_prob_factor=0.0)
    pop = Population.from_agents(agents)
    pop.notified_until[1] = 3
    assert step_infection(pop, params, 3, seeded_rng(0)).size == 0
    assert step_infection(pop, params, 4, seeded_rng(0)).size == 1


def test_event_log_names_infectious_side():
    from ctsim.sim import EventLog
    pop = Population.from_agents([agent(0, 0.5, 0.5), infectious(1, 0.505, 0.5)])
    log = EventLog()
    step_infection(pop, SimParams(n=2, infection_prob=0.0), 2, seeded_rng(0), log=log)
    (ev,) = list(log)
    assert ev.subject_id == pop.ids[1] and ev.peer_id == pop.ids[0] and ev.timestamp == 2


# -- resolution ---------------------------------------------------------------

def test_hospital_capacity_examples():
    assert SimParams().hospital_capacity == 23
    assert hospital_capacity(1000, 4.7) == 4
    assert hospital_capacity(100, 4.7) == 0


def test_beds_go_to_earliest_infected():
    agents = [infectious(k, 0.1 * (k + 1), 0.5, tick=10 - k) for k in range(5)]
    pop = Population.from_agents(agents)
    assign_beds(pop, 2)
    assert pop.hospitalized.tolist() == [False, False, False, True, True]


def _death_fraction(beds_per_1000, n=20_000, seed=4):
    agents = [infectious(k, 0.5, 0.5, tick=0, resolve=10) for k in range(n)]
    pop = Population.from_agents(agents)
    params = SimParams(n=n, beds_per_1000=beds_per_1000)
    done = step_resolution(pop, params, 10, seeded_rng(seed))
    assert done.size == n
    assert np.all(pop.hospitalized == False)  # noqa: E712
    return int(np.count_nonzero(pop.state == D)), n


@pytest.mark.parametrize("beds, p", [(1000.0, 0.034), (0.0, 0.068)])
def test_death_rates(beds, p):
    deaths, n = _death_fraction(beds)
    assert abs(deaths - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_resolution_only_when_due():
    pop = Population.from_agents([infectious(0, 0.5, 0.5, resolve=20)])
    assert step_resolution(pop, SimParams(n=1), 19, seeded_rng(0)).size == 0
    assert step_resolution(pop, SimParams(n=1), 20, seeded_rng(0)).tolist() == [0]
    assert pop.state[0] in (R, D)


# -- lockdown -----------------------------------------------------------------

def _with_cumulative(count, n=5000):
    params = SimParams(lockdown=Lockdown(0.10, 0.92))
    pop = spawn_population(params, seeded_rng(1))
    pop.state[:count] = I
    pop.infected_at[:count] = 0
    return pop, params


def test_lockdown_trigger_boundary():
    pop, params = _with_cumulative(500)
    assert step_lockdown(pop, params, 100)
    pop, params = _with_cumulative(499)
    assert not step_lockdown(pop, params, 100)


def test_lockdown_latches():
    pop, params = _with_cumulative(0)
    assert step_lockdown(pop, params, 100, active=True)
    assert not step_lockdown(pop, SimParams(), 100)


# -- notifications --------------------------------------------------------------

def test_notification_maps_s1_to_s2():
    params = SimParams(notified_speed_factor=0.002 / 0.0042, notified_prob_factor=0.4, notified_duration=50)
    a = apply_notification(agent(0, 0.5, 0.5), params, tick=100)
    assert a.notified_until == 150
    assert effective_speed(a, params, 120) == pytest.approx(0.002, rel=1e-12)
    assert effective_infection_prob(a, params, 120) == pytest.approx(0.02, rel=1e-12)
    assert effective_speed(a, params, 151) == 0.0042
    assert effective_infection_prob(a, params, 151) == 0.05


def test_notification_rounded_factor():
    params = SimParams(notified_speed_factor=0.476, notified_prob_factor=0.4)
    a = apply_notification(agent(0, 0.5, 0.5), params, 0)
    assert effective_speed(a, params, 1) == pytest.approx(0.002, abs=1e-5)


def test_identity_factor_changes_nothing():
    params = SimParams()
    a = apply_notification(agent(0, 0.5, 0.5), params, 0)
    assert effective_speed(a, params, 1) == a.speed
    assert effective_infection_prob(a, params, 1) == params.infection_prob


def test_dead_agent_not_notified():
    dead = Agent(1, Position(0.3, 0.4), 0.0, 0.0042, HealthState.DEAD, infected_at=0, resolution_at=5)
    assert apply_notification(dead, SimParams(), 10).notified_until is None


# -- whole runs ------------------------------------------------------------------

def test_no_transmission_leaves_only_seed_case():
    res = run(SimParams(n=1000, infection_prob=0.0, seed=3))
    last = res.reports[-1]
    assert last.susceptible == 999 and last.infectious == 0
    assert last.recovered + last.dead == 1
    assert len(res.events) > 0


def test_no_mixing_never_grows():
    params = SimParams(n=16, avg_speed=0.0, infection_prob=1.0, first_case_tick=0, horizon=1000, seed=2)
    pop = spawn_population(params, seeded_rng(params.seed, STREAM_SPAWN))
    assert in_range_pairs(pop, params)[0].size == 0
    res = run(params)
    assert int(np.count_nonzero(res.population.infected_at != NONE)) == 1


def test_early_stop_and_termination():
    res = run(SimParams(n=200, infection_prob=0.0, first_case_tick=3))
    assert res.reports[0].tick == 0
    assert res.reports[-1].infectious == 0
    assert res.last_resolution_tick == res.reports[-1].tick


class _StateWatcher:
    """Tracing hook that checks per-tick invariants instead of tracing."""

    def attach(self, pop, params):
        self.prev = pop.state.copy()
        self.ticks = 0

    def on_tick(self, tick, pop, i, j):
        allowed = {(S, S), (S, I), (I, I), (I, R), (I, D), (R, R), (D, D)}
        moved = set(zip(self.prev.tolist(), pop.state.tolist()))
        assert moved <= allowed
        assert np.all((pop.x >= 0) & (pop.x <= 1))
        assert int(pop.hospitalized.sum()) <= 3
        self.prev = pop.state.copy()
        self.ticks += 1
        return np.empty(0, dtype=np.int64)

    def finish(self, tick, pop):
        self.final = tick


def test_small_run_invariants():
    params = SimParams(n=600, infection_range=0.03, first_case_tick=2, beds_per_1000=5.0, seed=8)
    hook = _StateWatcher()
    res = run(params, hook)
    assert hook.ticks == len(res.reports)
    for r in res.reports:
        assert r.total == params.n
    cum = res.cumulative_infected
    assert np.all(np.diff(cum) >= 0)
    assert cum[-1] > 10


def test_runs_are_deterministic():
    params = SimParams(n=800, infection_range=0.02, seed=17)
    a, b = run(params), run(params)
    assert a.reports == b.reports
    assert all(np.array_equal(a.events.arrays()[k], b.events.arrays()[k]) for k in a.events.arrays())


def test_seed_changes_run():
    a = run(SimParams(n=800, infection_range=0.02, seed=1), record_events=False)
    b = run(SimParams(n=800, infection_range=0.02, seed=2), record_events=False)
    assert a.reports != b.reports


def test_invalid_params_rejected():
    for bad in (dict(n=0), dict(infection_prob=1.2), dict(recovery_min=500),
                dict(lockdown=Lockdown(1.5, 0.9)), dict(horizon=10), dict(avg_speed=-1.0)):
        with pytest.raises(ValueError):
            run(SimParams(**bad))


# -- population-level properties (full size, shared with the acceptance suite) ------

@pytest.mark.slow
def test_severity_monotone_in_probability():
    peaks = [mean_of(cached_summaries(SimParams(infection_prob=p, avg_speed=0.0042)), "peak_infectious")
             for p in (0.01, 0.02, 0.05)]
    assert peaks == sorted(peaks)


@pytest.mark.slow
def test_severity_monotone_in_speed():
    peaks = [mean_of(cached_summaries(SimParams(infection_prob=0.02, avg_speed=v)), "peak_infectious")
             for v in (0.001, 0.002, 0.0042)]
    assert peaks == sorted(peaks)


def _incidence_peak_ratio(seed):
    params = SimParams(avg_speed=0.05, seed=seed, horizon=3000)
    res = run(params, record_events=False)
    ticks = np.array([r.tick for r in res.reports])
    cum = res.cumulative_infected
    early = (cum >= 20) & (cum <= 0.1 * params.n)
    growth = np.polyfit(ticks[early], np.log(cum[early]), 1)[0]
    gamma = 2.0 / (params.recovery_min + params.recovery_max)
    ode = trajectory_array(integrate(SirState(params.n - 1.0, 1.0, 0.0),
                                     SirParams(growth + gamma, gamma, params.n), 3000.0, 1.0))
    ode_cum = ode[:, 2] + ode[:, 3]
    agent_incidence = np.convolve(np.diff(cum), np.ones(11) / 11, mode="same")
    t_agent = ticks[1:][np.argmax(agent_incidence)] - params.first_case_tick
    t_ode = ode[1:, 0][np.argmax(np.diff(ode_cum))]
    return t_agent / t_ode


@pytest.mark.slow
def test_well_mixed_matches_ode():
    ratios = [_incidence_peak_ratio(s) for s in (1, 2, 3, 4, 5)]
    assert all(0.75 <= r <= 1.25 for r in ratios), ratios
