import logging
import math
import time

import numpy as np
import pytest

from adaptwave.engine import (
    Mutation,
    Replacement,
    ReplicateStream,
    RunSchedule,
    apply_event,
    count_tau_inversions,
    effective_rates,
    next_event_effective,
    next_event_faithful,
    run,
    seed_for_replicate,
)
from adaptwave.errors import DegeneratePopulation, QueryOutOfRange
from adaptwave.model import ModelParams, PopulationState


@pytest.fixture
def small_params():
    return ModelParams(N=200, mu=0.01, s=0.1)


def _check_same_trajectory(a, b):
    assert a.events == b.events
    assert a.mutations == b.mutations
    assert a.replacements == b.replacements
    assert a.snapshots == b.snapshots
    assert a.taus == b.taus
    assert a.lead_at_tau == b.lead_at_tau
    assert a.area_at_tau == b.area_at_tau
    assert a.first_seen == b.first_seen
    assert a.clamp_events == b.clamp_events
    assert a.end_time == b.end_time
    assert a.mean_area == b.mean_area
    assert a.final_state.as_dict() == b.final_state.as_dict()


def test_seed_for_replicate_distinct_and_stable():
    seeds = [seed_for_replicate(0, i) for i in range(1_000_000)]
    assert len(set(seeds)) == len(seeds)
    assert all(0 <= x < 2**64 for x in seeds)
    assert seeds[:5] == [seed_for_replicate(0, i) for i in range(5)]
    assert seed_for_replicate(1, 0) != seed_for_replicate(0, 0)
    with pytest.raises(ValueError):
        seed_for_replicate(0, -1)


def test_stream_is_reproducible():
    a = ReplicateStream(42)
    b = ReplicateStream(42)
    draws_a = [a.uniform() for _ in range(5000)] + [a.exponential() for _ in range(5000)]
    draws_b = [b.uniform() for _ in range(5000)] + [b.exponential() for _ in range(5000)]
    assert draws_a == draws_b
    assert all(0.0 <= u < 1.0 for u in draws_a[:5000])


def test_events_change_state():
    state = PopulationState({0: 3, 1: 2})
    apply_event(state, Mutation(1))
    assert state.as_dict() == {0: 3, 1: 1, 2: 1}
    apply_event(state, Replacement(dying=0, parent=2))
    assert state.as_dict() == {0: 2, 1: 1, 2: 2}
    assert Replacement(1, 1).is_noop
    assert (Mutation(4).src, Mutation(4).dst) == (4, 5)


def test_first_event_from_homogeneous_is_mutation(small_params):
    stream = ReplicateStream(7)
    state = PopulationState.homogeneous(small_params.N)
    mutation_rate, replacement_rate = effective_rates(state, small_params)
    assert replacement_rate == 0.0
    assert mutation_rate == pytest.approx(2.0)
    for _ in range(100):
        dt, event = next_event_effective(state, small_params, stream)
        assert dt > 0.0
        assert event == Mutation(0)


def test_effective_engine_idles_without_mutation():
    params = ModelParams(N=50, mu=0.0, s=0.1)
    dt, event = next_event_effective(PopulationState.homogeneous(50), params, ReplicateStream(1))
    assert dt == math.inf and event is None


def test_faithful_engine_draws_noops(small_params):
    stream = ReplicateStream(3)
    state = PopulationState.homogeneous(small_params.N)
    events = [next_event_faithful(state, small_params, stream)[1] for _ in range(2000)]
    noops = sum(isinstance(e, Replacement) and e.is_noop for e in events)
    mutations = sum(isinstance(e, Mutation) for e in events)
    assert noops + mutations == len(events)
    # a death happens with probability 1 / (1 + mu)
    assert noops / len(events) == pytest.approx(1 / 1.01, abs=0.02)


@pytest.mark.parametrize("engine", ["effective", "faithful"])
def test_run_is_deterministic(small_params, engine):
    schedule = RunSchedule.on_grid(20.0, 11)
    a = run(small_params, schedule, seed=seed_for_replicate(5, 0), engine=engine)
    b = run(small_params, schedule, seed=seed_for_replicate(5, 0), engine=engine)
    _check_same_trajectory(a, b)
    c = run(small_params, schedule, seed=seed_for_replicate(5, 1), engine=engine)
    assert c.events != a.events or c.snapshots != a.snapshots


@pytest.mark.parametrize("engine", ["effective", "faithful"])
def test_conservation_every_event(engine):
    params = ModelParams(N=300, mu=0.01, s=0.1)
    checked = []

    def hook(state, event, t):
        state.check()
        checked.append(t)

    traj = run(params, RunSchedule(30.0), seed=11, hooks=[hook], engine=engine)
    assert len(checked) == traj.events > 0
    assert checked == sorted(checked)
    assert sum(traj.final_state.band) == params.N
    assert traj.mutations + traj.replacements + traj.noops == traj.events
    if engine == "effective":
        assert traj.noops == 0


def test_run_records_snapshots_and_taus(small_params):
    schedule = RunSchedule.on_grid(40.0, 21, extra=[12.5])
    traj = run(small_params, schedule, seed=seed_for_replicate(0, 0))
    times = [snap.time for snap in traj.snapshots]
    assert times == list(schedule.snapshot_times)
    assert 12.5 in times

    first = traj.snapshots[0]
    assert first.time == 0.0 and first.as_dict() == {0: small_params.N}
    for snap in traj.snapshots:
        assert sum(snap.counts) == small_params.N
        assert snap.lead >= 0.0
        assert snap.lead == pytest.approx(snap.j_max - snap.mean)

    # s / mu = 10 <= N, so type 1 is established at time 0
    assert traj.taus[0] == 0.0
    assert traj.taus[1] == 0.0
    taus = [traj.taus[j] for j in sorted(traj.taus)]
    assert traj.tau_inversions == sum(b < a for a, b in zip(taus, taus[1:]))
    assert set(traj.lead_at_tau) <= set(traj.taus)

    assert traj.snapshot_at(12.5).time == 12.5
    with pytest.raises(QueryOutOfRange):
        traj.snapshot_at(13.0)


def test_dense_log_matches_counters(small_params):
    traj = run(small_params, RunSchedule(20.0), seed=2, dense_log=True)
    assert len(traj.log) == traj.mutations + traj.replacements
    assert traj.log.initial == {0: small_params.N}
    assert np.all(np.diff(traj.log.times) >= 0.0)

    replayed = PopulationState(traj.log.initial)
    for src, dst in zip(traj.log.src.tolist(), traj.log.dst.tolist()):
        replayed._move(src, dst)
    assert replayed.as_dict() == traj.final_state.as_dict()

    assert run(ModelParams(20_000, 1e-3, 0.05), RunSchedule(0.01), seed=2).log is None


def test_no_mutations_means_no_events():
    params = ModelParams(N=100, mu=0.0, s=0.1)
    traj = run(params, RunSchedule.on_grid(10.0, 5), seed=1)
    assert traj.events == 0
    assert traj.end_time == 10.0
    assert all(snap.lead == 0.0 for snap in traj.snapshots)
    assert traj.taus == {0: 0.0}


def test_schedule_validation():
    with pytest.raises(ValueError):
        RunSchedule(0.0)
    with pytest.raises(ValueError):
        RunSchedule(10.0, (2.0, 1.0))
    with pytest.raises(ValueError):
        RunSchedule(10.0, (11.0,))
    with pytest.raises(ValueError):
        run(ModelParams(10, 0.01, 0.1), RunSchedule(1.0), seed=0, engine="fast")


def test_gammas_shift_by_a_N(small_params):
    traj = run(small_params, RunSchedule(30.0), seed=4)
    a_N = math.log(10.0) / 0.1
    for j, gamma in traj.gammas(a_N).items():
        assert gamma == traj.taus[j] + a_N


@pytest.mark.parametrize("engine", ["effective", "faithful"])
def test_hooked_loop_matches_compiled_loop(small_params, engine):
    schedule = RunSchedule.on_grid(40.0, 21, extra=[12.5])
    seed = seed_for_replicate(9, 3)
    compiled = run(small_params, schedule, seed, engine=engine, dense_log=True)
    stepwise = run(
        small_params, schedule, seed, hooks=[lambda state, event, t: None],
        engine=engine, dense_log=True,
    )
    _check_same_trajectory(compiled, stepwise)
    assert compiled.noops == stepwise.noops
    assert np.array_equal(compiled.log.times, stepwise.log.times)
    assert np.array_equal(compiled.log.dst, stepwise.log.dst)


def test_mean_area_integrates_the_mean(small_params):
    schedule = RunSchedule.on_grid(30.0, 7)
    traj = run(small_params, schedule, seed=seed_for_replicate(1, 0), dense_log=True)
    N = small_params.N
    mutation_sum, last, area = 0, 0.0, 0.0
    exact = {}
    snap_times = [snap.time for snap in traj.snapshots]
    k = 0
    for t, src, dst in zip(traj.log.times.tolist(), traj.log.src.tolist(), traj.log.dst.tolist()):
        while k < len(snap_times) and snap_times[k] < t:
            exact[snap_times[k]] = area + mutation_sum / N * (snap_times[k] - last)
            k += 1
        area += mutation_sum / N * (t - last)
        mutation_sum += dst - src
        last = t
    for t in snap_times[k:]:
        exact[t] = area + mutation_sum / N * (t - last)
    for snap in traj.snapshots:
        assert snap.mean_area == pytest.approx(exact[snap.time], rel=1e-9, abs=1e-12)
    assert traj.mean_area == pytest.approx(traj.snapshots[-1].mean_area)
    for area in traj.area_at_tau.values():
        assert 0.0 <= area <= traj.mean_area


@pytest.mark.parametrize("engine", ["effective", "faithful"])
def test_waiting_time_to_first_mutation(engine):
    # from a homogeneous population the first mutation arrives at rate N mu
    params = ModelParams(N=100, mu=0.01, s=0.1)
    schedule = RunSchedule(25.0, threshold_watch=False)
    R = 2000
    waits = np.array(
        [
            run(params, schedule, seed_for_replicate(3, i), engine=engine).first_seen[1]
            for i in range(R)
        ]
    )
    se = waits.std(ddof=1) / math.sqrt(R)
    assert abs(waits.mean() - 1.0 / (params.N * params.mu)) <= 4.0 * se


def _brute_force_rates(counts, params):
    """Rates summed over every individual, with parents drawn proportionally to max(0, 1 + s(j - M))."""
    types = [j for j, x in sorted(counts.items()) for _ in range(x)]
    N = len(types)
    M = sum(types) / N
    fitness = [max(0.0, 1.0 + params.s * (j - M)) for j in types]
    W = sum(fitness)
    pairs = {}
    for dying in types:
        for parent, f in zip(types, fitness):
            if parent != dying:
                pairs[(dying, parent)] = pairs.get((dying, parent), 0.0) + f / W
    return params.mu * N, pairs


def test_effective_rates_match_brute_force():
    params = ModelParams(N=10, mu=0.01, s=0.1)
    state = PopulationState({0: 9, 1: 1})
    mutation_rate, pairs = _brute_force_rates(state.as_dict(), params)
    assert effective_rates(state, params) == pytest.approx(
        (mutation_rate, sum(pairs.values())), rel=1e-12
    )
    assert sum(pairs.values()) == pytest.approx(9 * 1.09 / 10 + 8.91 / 10, rel=1e-12)

    # with mu = 0 every effective event is one of the two replacements
    silent = ModelParams(N=10, mu=0.0, s=0.1)
    _, pairs = _brute_force_rates(state.as_dict(), silent)
    p = pairs[(0, 1)] / sum(pairs.values())
    assert p == pytest.approx(0.52404, abs=1e-4)
    stream = ReplicateStream(17)
    draws = 20_000
    hits = 0
    for _ in range(draws):
        _, event = next_event_effective(state, silent, stream)
        assert isinstance(event, Replacement) and not event.is_noop
        hits += (event.dying, event.parent) == (0, 1)
    assert abs(hits / draws - p) <= 4.0 * math.sqrt(p * (1.0 - p) / draws)


def test_clamped_run_is_flagged(caplog):
    params = ModelParams(N=50, mu=0.4, s=0.5)
    traj = run(params, RunSchedule(2.0), seed=5, initial_counts={0: 5, 10: 45})
    assert traj.clamped
    assert traj.clamp_events > 0
    assert not traj.degenerate
    assert any("fitness clamp" in rec.message for rec in caplog.records)


def test_degenerate_population_stops_early(small_params, monkeypatch, caplog):
    real = next_event_effective
    calls = []

    def failing(state, params, stream):
        calls.append(state.time)
        if len(calls) == 5:
            raise DegeneratePopulation(f"all occupied types have zero fitness at t={state.time}")
        return real(state, params, stream)

    monkeypatch.setattr("adaptwave.engine.next_event_effective", failing)
    schedule = RunSchedule.on_grid(50.0, 11)
    traj = run(small_params, schedule, seed=3, hooks=[lambda state, event, t: None])
    assert traj.degenerate
    assert "zero fitness" in traj.degenerate_reason
    assert traj.events == 4
    assert traj.end_time == calls[-1] < 50.0
    assert all(snap.time < traj.end_time for snap in traj.snapshots)
    assert any("stopped early" in rec.message for rec in caplog.records)


def test_count_tau_inversions():
    assert count_tau_inversions({0: 0.0, 1: 0.0, 2: 5.0, 3: 4.0, 4: 6.0}) == 1
    assert count_tau_inversions({0: 0.0, 1: 0.0, 3: 1.0}) == 0
    assert count_tau_inversions({}) == 0


def test_snapshots_logged_at_debug(small_params, caplog):
    caplog.set_level(logging.DEBUG, logger="adaptwave")
    traj = run(small_params, RunSchedule.on_grid(10.0, 6), seed=1)
    lines = [rec.message for rec in caplog.records if "snapshot t=" in rec.message]
    assert len(lines) == len(traj.snapshots) == 6
    assert "M=" in lines[0] and "Q=" in lines[0] and "types=[0, 0]" in lines[0]


@pytest.mark.slow
def test_large_population_runs_quickly():
    params = ModelParams(N=100_000, mu=1e-4, s=0.05)
    run(ModelParams(N=100, mu=1e-2, s=0.1), RunSchedule(5.0), seed=0)  # compile
    t_end = 3.0 * math.log(params.s / params.mu) / params.s
    started = time.perf_counter()
    traj = run(params, RunSchedule.on_grid(t_end, 61), seed=seed_for_replicate(0, 0))
    assert time.perf_counter() - started <= 10.0
    assert traj.end_time == t_end
    assert traj.snapshots[-1].mean > 0.0
