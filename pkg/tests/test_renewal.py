import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from adaptwave.errors import InvalidGrid, QueryOutOfRange
from adaptwave.renewal import (
    TheoryCurves,
    cached_curves,
    renewal_oracle,
    solve_curves,
    solve_m,
    solve_q,
)

E = math.e


@pytest.fixture(scope="module")
def curves():
    return solve_curves(1e-4, 20.0)


def test_q_goldens(curves):
    assert abs(curves.q_at(0.5) - math.exp(0.5)) <= 1e-10
    assert abs(curves.q_at(1.0) - (E - 1.0)) <= 1e-8
    assert abs(curves.q_at(1.5) - (math.exp(1.5) - 1.5 * math.exp(0.5))) <= 1e-6
    assert abs(curves.q_at(2.0) - (E**2 - 2.0 * E)) <= 1e-6
    assert abs(curves.q_at(20.0) - 2.0) <= 1e-3


def test_m_goldens(curves):
    assert curves.m_at(0.5) == 0.0
    assert abs(curves.m_at(2.0) - E) <= 1e-6
    assert abs(curves.m_at(3.0) - (E**2 - E)) <= 1e-6


def test_jump_at_one(curves):
    # stored values are right limits; left limits are kept on the object
    assert curves.q_left_at_one == E
    assert curves.m_left_at_one == 0.0
    assert curves.q_at(1.0 - 1e-12) == pytest.approx(E, rel=1e-9)
    assert curves.m_at(1.0) == pytest.approx(1.0)
    assert curves.m_at(1.0 - 1e-12) == pytest.approx(0.0, abs=1e-9)


def test_q_stays_between_one_and_e(curves):
    q = curves.q_values
    assert np.all(q[curves.t >= 1.0] >= 1.0 - 1e-12)
    assert np.all(q <= E + 1e-12)


def test_m_slope_is_q(curves):
    # m'(t) = q(t - 1) for t > 1
    h = 1e-3
    for t in (1.5, 2.5, 4.0, 10.0):
        slope = (curves.m_at(t + h) - curves.m_at(t - h)) / (2 * h)
        assert slope == pytest.approx(curves.q_at(t - 1.0), rel=1e-4)


def test_solver_speed():
    started = time.perf_counter()
    solve_curves(1e-4, 20.0)
    assert time.perf_counter() - started < 1.0


def _q_exact_1_to_2(t):
    return math.exp(t) - t * math.exp(t - 1.0)


def test_q_error_is_second_order():
    coarse = solve_q(0.01, 8.0)
    fine = solve_q(0.005, 8.0)
    exact = _q_exact_1_to_2(1.5)
    ratio = abs(coarse.q_at(1.5) - exact) / abs(fine.q_at(1.5) - exact)
    assert 3.5 <= ratio <= 4.5

    # sup over the coarse nodes against a much finer solution
    reference = solve_q(0.0005, 8.0)
    nodes = coarse.t
    err_coarse = np.max(np.abs(coarse.q_values - reference.q_at(nodes)))
    err_fine = np.max(np.abs(fine.q_at(nodes) - reference.q_at(nodes)))
    assert 3.5 <= err_coarse / err_fine <= 4.5


def test_q_satisfies_the_renewal_equation():
    h = 1e-3
    curves = solve_q(h, 10.0)
    for t in (1.5, 2.5, 4.0, 7.25):
        points = [1.0] if t - 1.0 < 1.0 < t else None
        integral, _ = quad(curves.q_at, t - 1.0, t, limit=1000, points=points)
        assert abs(curves.q_at(t) - integral) <= h**2


def test_m_grows_at_rate_two():
    curves = solve_curves(1e-3, 50.0)
    gaps = []
    for t in (10.0, 20.0, 50.0):
        # m(t) = 2t - 4/3 up to terms that decay exponentially in t
        assert curves.m_at(t) == pytest.approx(2.0 * t - 4.0 / 3.0, abs=1e-3)
        gaps.append(abs(curves.m_at(t) / t - 2.0))
    assert gaps == sorted(gaps, reverse=True)


def test_query_range(curves):
    with pytest.raises(QueryOutOfRange):
        curves.q_at(-0.1)
    with pytest.raises(QueryOutOfRange):
        curves.q_at(20.5)
    values = curves.q_at(np.array([0.25, 2.0, 3.0]))
    assert values.shape == (3,)


@pytest.mark.parametrize("h, t_max", [(0.3, 5.0), (0.0, 5.0), (1e-3, 0.5)])
def test_bad_grid(h, t_max):
    with pytest.raises(InvalidGrid):
        solve_q(h, t_max)


def test_solve_m_requires_nothing_but_q():
    q_only = solve_q(1e-3, 4.0)
    assert q_only.m_values is None
    with pytest.raises(ValueError):
        q_only.m_at(2.0)
    assert solve_m(q_only).m_at(2.0) == pytest.approx(E, abs=1e-5)


def test_csv_round_trip(curves):
    small = solve_curves(1e-2, 5.0)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = small.to_csv(Path(tmpdir) / "q.csv")
        assert path.read_text().splitlines()[0] == "t,q,m"
        back = TheoryCurves.read_csv(path)
    assert back.h == small.h
    assert np.array_equal(back.t, small.t)
    assert np.array_equal(back.q_values, small.q_values)
    assert np.array_equal(back.m_values, small.m_values)


def test_cache_reuses_solution():
    with tempfile.TemporaryDirectory() as tmpdir:
        first = cached_curves(1e-2, 6.0, Path(tmpdir))
        assert list(Path(tmpdir).glob("*.npz"))
        second = cached_curves(1e-2, 6.0, Path(tmpdir))
    assert np.array_equal(first.q_values, second.q_values)
    assert np.array_equal(first.m_values, second.m_values)
    assert second.q_at(2.0) == pytest.approx(E**2 - 2 * E, abs=1e-3)


def test_oracle_matches_solver(curves):
    probes = [0.25, 0.5, 1.5, 2.5, 4.0, 6.0]
    est = renewal_oracle(8.0, n_paths=40_000, seed=1, probes=probes)
    assert est.n_paths == 40_000
    # U(t) = e^t - 1 before the first unit of time
    assert abs(est.U[1] - (math.exp(0.5) - 1.0)) <= 4 * est.U_se[1]
    assert est.max_z(curves) <= 4.0
    for k, t in enumerate(probes):
        if t >= 1.0:
            assert abs(est.m[k] - curves.m_at(t)) <= 4 * est.m_se[k]


def test_oracle_is_seeded():
    a = renewal_oracle(3.0, n_paths=500, seed=3, probes=[0.5, 2.0])
    b = renewal_oracle(3.0, n_paths=500, seed=3, probes=[0.5, 2.0])
    assert np.array_equal(a.q, b.q)


@pytest.mark.slow
def test_oracle_acceptance(curves):
    probes = np.arange(0.25, 8.0 + 1e-9, 0.25)
    probes = probes[np.abs(probes - 1.0) > 1e-9]
    est = renewal_oracle(8.0, n_paths=1_000_000, seed=0, probes=np.append(probes, 1.0))
    assert abs(est.U[-1] - (E - 1.0)) <= 3 * est.U_se[-1]
    assert est.max_z(curves) <= 4.0
