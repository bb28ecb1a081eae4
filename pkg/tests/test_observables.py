import math
import tempfile
from pathlib import Path

import numpy as np
import pytest

from adaptwave.engine import RunSchedule, Snapshot, run, seed_for_replicate
from adaptwave.errors import InsufficientResolution, QueryOutOfRange
from adaptwave.model import ModelParams, PopulationState
from adaptwave.observables import (
    martingale_Z,
    martingale_Z_path,
    modal_type_and_offset,
    read_tau_csv,
    read_wave_csv,
    renewal_count,
    replay,
    state_at,
    supermartingale_Y,
    supermartingale_Y_path,
    wave_observables,
    wave_table,
    write_tau_csv,
    write_wave_csv,
)
from adaptwave.theory import Scales, scales


@pytest.fixture
def toy_scales():
    return Scales(
        a_N=100.0,
        k_N=2.5,
        k_N_minus=2.1,
        k_N_plus=2.9,
        k_star=2,
        t_star=30.0,
        assumption_ratios=(1.0, 1.0, 1.0),
    )


@pytest.fixture(scope="module")
def small_run():
    params = ModelParams(N=100, mu=0.01, s=0.1)
    return run(params, RunSchedule.on_grid(30.0, 7), seed=seed_for_replicate(9, 0), dense_log=True)


def test_lead_of_snapshot():
    snap = Snapshot.of(PopulationState({0: 999, 3: 1}), 0.0)
    assert snap.lead == pytest.approx(2.997, abs=1e-12)
    assert snap.mean == pytest.approx(0.003)


def test_renewal_count(toy_scales):
    taus = {0: 0.0, 1: 0.0, 2: 10.0, 3: 50.0, 4: 120.0}
    assert renewal_count(taus, toy_scales, 130.0) == 2
    # before a_N the k* term is added
    assert renewal_count(taus, toy_scales, 60.0) == 2 + 1
    assert renewal_count(taus, toy_scales, 0.0) == 2


def test_modal_type_and_offset():
    taus = {0: 0.0, 1: 0.0, 2: 150.0, 3: 200.0, 4: 240.0}
    j, d = modal_type_and_offset(taus, 100.0, 310.0)
    assert j == 3
    assert d == pytest.approx(-0.25)
    # gamma_5 is not known yet
    assert modal_type_and_offset(taus, 100.0, 345.0) == (4, None)
    assert modal_type_and_offset(taus, 100.0, 50.0) == (None, None)


def test_offset_range_on_run(small_run):
    sc = scales(small_run.params)
    for rec in wave_table(small_run, sc):
        assert rec.lead >= 0.0
        assert rec.R >= 0
        if rec.offset is not None:
            assert -0.5 <= rec.offset < 0.5


def test_wave_observables_at_snapshot_and_between(small_run):
    sc = scales(small_run.params)
    rec = wave_observables(small_run, sc, 10.0)
    assert rec.time == 10.0
    assert rec.lead == pytest.approx(rec.j_max - rec.M)

    # 12.3 is not a snapshot time; the dense log fills it in
    between = wave_observables(small_run, sc, 12.3)
    assert sum(between.counts.values()) == small_run.params.N

    with pytest.raises(QueryOutOfRange):
        wave_observables(small_run, sc, 31.0)


def test_replay_agrees_with_snapshots(small_run):
    pending = list(small_run.snapshots)
    for start, stop, state in replay(small_run):
        while pending and (start <= pending[0].time < stop or stop == small_run.end_time):
            assert state.as_dict() == pending.pop(0).as_dict()
    assert not pending
    assert state_at(small_run, 10.0) == small_run.snapshot_at(10.0)


def test_replay_reaches_final_state(small_run):
    last = None
    for start, stop, state in replay(small_run):
        assert start <= stop
        last = state
    assert last.as_dict() == small_run.final_state.as_dict()


def test_martingales_at_time_zero(small_run):
    for j in range(4):
        assert martingale_Z(small_run, j, 0.0) == 0.0
        assert supermartingale_Y(small_run, j, 0.0) == small_run.params.N


def test_martingale_without_mutations():
    params = ModelParams(N=50, mu=0.0, s=0.1)
    traj = run(params, RunSchedule(20.0), seed=1, dense_log=True)
    assert martingale_Z_path(traj, 0, [0.0, 5.0, 20.0]) == [0.0, 0.0, 0.0]


def test_Y_above_the_front(small_run):
    j = small_run.final_state.j_max + 5
    values = supermartingale_Y_path(small_run, j, [1.0, 10.0, 30.0])
    assert all(v > 0.0 for v in values)
    assert supermartingale_Y(small_run, j, 0.0) == small_run.params.N


def test_martingale_needs_dense_log():
    params = ModelParams(N=100, mu=0.01, s=0.1)
    traj = run(params, RunSchedule(5.0), seed=1, dense_log=False)
    with pytest.raises(InsufficientResolution):
        martingale_Z(traj, 1, 2.0)
    with pytest.raises(InsufficientResolution):
        supermartingale_Y(traj, 1, 2.0)


def test_martingales_after_extinction_do_not_overflow():
    # type 0 is long extinct by t = 1000 while int G_0 keeps decreasing
    params = ModelParams(N=200, mu=0.01, s=0.1)
    traj = run(params, RunSchedule(1000.0), seed=3, dense_log=True)
    assert traj.final_state.count(0) == 0
    assert martingale_Z(traj, 0, 1000.0) == -200.0
    assert supermartingale_Y(traj, 0, 1000.0) == 0.0
    assert math.isfinite(martingale_Z(traj, 1, 1000.0))


def test_path_matches_pointwise(small_run):
    times = [0.5, 3.0, 7.25, 30.0]
    path = martingale_Z_path(small_run, 1, times)
    assert path == pytest.approx([martingale_Z(small_run, 1, t) for t in times], rel=1e-9, abs=1e-9)
    with pytest.raises(ValueError):
        martingale_Z_path(small_run, 1, [3.0, 1.0])


def test_martingale_mean_is_zero():
    params = ModelParams(N=60, mu=0.01, s=0.1)
    times = [1.0, 5.0]
    Z = {j: [] for j in (0, 1)}
    Y1 = []
    for i in range(300):
        traj = run(params, RunSchedule(5.0), seed=seed_for_replicate(21, i), dense_log=True)
        for j in Z:
            Z[j].append(martingale_Z_path(traj, j, times))
        Y1.append(supermartingale_Y_path(traj, 1, [0.0, 5.0]))

    for j, rows in Z.items():
        values = np.array(rows)
        mean = values.mean(axis=0)
        se = values.std(axis=0, ddof=1) / math.sqrt(len(values))
        assert np.all(np.abs(mean) <= 4 * se + 1e-9), f"{j=} {mean=} {se=}"

    y = np.array(Y1)
    se = y[:, 1].std(ddof=1) / math.sqrt(len(y))
    assert y[:, 1].mean() <= y[:, 0].mean() + 4 * se


def test_csv_round_trip(small_run):
    sc = scales(small_run.params)
    records = wave_table(small_run, sc)
    with tempfile.TemporaryDirectory() as tmpdir:
        wave_path = write_wave_csv(records, Path(tmpdir) / "wave.csv")
        tau_path = write_tau_csv(small_run.taus, sc.a_N, Path(tmpdir) / "tau.csv")
        assert wave_path.read_text().splitlines()[0] == "time,M,Q,R,jmin,jmax"
        assert tau_path.read_text().splitlines()[0] == "j,tau,gamma"
        rows = read_wave_csv(wave_path)
        taus = read_tau_csv(tau_path)

    assert len(rows) == len(records)
    for row, rec in zip(rows, records):
        assert row["time"] == rec.time
        assert row["M"] == rec.M
        assert row["Q"] == rec.lead
        assert (row["R"], row["jmin"], row["jmax"]) == (rec.R, rec.j_min, rec.j_max)
    for row in taus:
        assert row["tau"] == small_run.taus[row["j"]]
        assert row["gamma"] == small_run.taus[row["j"]] + sc.a_N


def test_tau_csv_without_a_N():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = write_tau_csv({0: 0.0}, math.inf, Path(tmpdir) / "tau.csv")
        assert read_tau_csv(path) == [{"j": 0, "tau": 0.0, "gamma": None}]
