from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union
import csv
import logging
import math

import numpy as np

from .engine import Snapshot, Trajectory
from .errors import InsufficientResolution, QueryOutOfRange
from .model import ModelParams, PopulationState, apply_move, fitness_profile, raw_weight
from .theory import Scales

_logger = logging.getLogger("adaptwave")

_REPLAY_CHUNK = 1 << 14


@dataclass(frozen=True)
class WaveRecord:
    """Wave observables at one time.

    lead is Q = j_max - M. modal_type and offset are j(t) and d(t); they are
    None when the establishment records needed to define them are missing.
    """

    time: float
    M: float
    lead: float
    R: int
    j_min: int
    j_max: int
    counts: Dict[int, int] = field(default_factory=dict)
    modal_type: Optional[int] = None
    offset: Optional[float] = None


def renewal_count(taus: Dict[int, float], sc: Scales, t: float) -> int:
    """R(t) = k* 1{t < a_N} + #{j >= k* + 1 : t - a_N < tau_j <= t}."""
    recent = sum(
        1 for j, tau in taus.items() if j >= sc.k_star + 1 and t - sc.a_N < tau <= t
    )
    return (sc.k_star if t < sc.a_N else 0) + recent


def modal_type_and_offset(
    taus: Dict[int, float], a_N: float, t: float
) -> Tuple[Optional[int], Optional[float]]:
    """j(t) = max{j : gamma_j <= t} and d(t) solving t = (1/2 - d) gamma_j + (1/2 + d) gamma_{j+1}.

    `t` is absolute time, i.e. a_N times the scaled time.
    """
    gammas = {j: tau + a_N for j, tau in taus.items()}
    reached = [j for j, g in gammas.items() if g <= t]
    if not reached:
        return None, None
    j = max(reached)
    nxt = gammas.get(j + 1)
    if nxt is None:
        return j, None
    lo = gammas[j]
    return j, (t - 0.5 * (lo + nxt)) / (nxt - lo)


def _record(snap: Snapshot, taus: Dict[int, float], sc: Optional[Scales]) -> WaveRecord:
    # without scales (mu = 0) there is no a_N, so R, j(t) and d(t) are not defined
    if sc is None:
        j_t, d_t, R = None, None, 0
    else:
        j_t, d_t = modal_type_and_offset(taus, sc.a_N, snap.time)
        R = renewal_count(taus, sc, snap.time)
    return WaveRecord(
        time=snap.time,
        M=snap.mean,
        lead=snap.lead,
        R=R,
        j_min=snap.j_min,
        j_max=snap.j_max,
        counts=snap.as_dict(),
        modal_type=j_t,
        offset=d_t,
    )


def state_at(trajectory: Trajectory, t: float) -> Snapshot:
    """State at time t: the recorded snapshot, or a replay of the dense log."""
    if t < 0.0 or t > trajectory.end_time * (1.0 + 1e-12) + 1e-12:
        raise QueryOutOfRange(f"t={t} outside [0, {trajectory.end_time}]")
    try:
        return trajectory.snapshot_at(t)
    except QueryOutOfRange:
        if trajectory.log is None:
            raise
    area = 0.0
    for start, stop, state in replay(trajectory):
        M = state.mutation_sum / state.N
        if start <= t < stop or stop >= trajectory.end_time:
            return Snapshot.of(state, t, area + M * (t - start))
        area += M * (stop - start)
    raise QueryOutOfRange(f"t={t} not covered by the event log")


def wave_observables(trajectory: Trajectory, sc: Scales, t_query: float) -> WaveRecord:
    return _record(state_at(trajectory, t_query), trajectory.taus, sc)


def wave_rows(
    snapshots: Sequence[Snapshot], taus: Dict[int, float], sc: Optional[Scales]
) -> List[WaveRecord]:
    return [_record(snap, taus, sc) for snap in snapshots]


def wave_table(trajectory: Trajectory, sc: Optional[Scales]) -> List[WaveRecord]:
    """One WaveRecord per recorded snapshot."""
    return wave_rows(trajectory.snapshots, trajectory.taus, sc)


def replay(trajectory: Trajectory) -> Iterator[Tuple[float, float, PopulationState]]:
    """Yields (start, stop, state) with the state constant on [start, stop).

    The yielded state is updated in place after each step.
    """
    log = trajectory.log
    if log is None:
        raise InsufficientResolution(
            f"trajectory seed={trajectory.seed} has no dense event log; rerun with dense_log=True"
        )
    state = PopulationState(log.initial)
    start = 0.0
    for lo in range(0, len(log), _REPLAY_CHUNK):
        hi = lo + _REPLAY_CHUNK
        chunk = zip(log.times[lo:hi].tolist(), log.src[lo:hi].tolist(), log.dst[lo:hi].tolist())
        for t, src, dst in chunk:
            yield start, t, state
            apply_move(state, src, dst)
            state.time = t
            start = t
    yield start, trajectory.end_time, state


class _CompensatedSum:
    """Running Neumaier sum."""

    __slots__ = ("total", "_c")

    def __init__(self):
        self.total = 0.0
        self._c = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self._c += (self.total - t) + x
        else:
            self._c += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self._c


def _check_times(trajectory: Trajectory, times: Sequence[float]) -> List[float]:
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted ascending")
    if times and (times[0] < 0.0 or times[-1] > trajectory.end_time + 1e-12):
        raise QueryOutOfRange(f"times {times} outside [0, {trajectory.end_time}]")
    return times


def _growth_rates(
    state: PopulationState, params: ModelParams, j: int
) -> Tuple[float, float]:
    """(N F_{j-1} - 1, N F_j - 1 - mu), with F_{-1} taken as 0."""
    _, W, _ = fitness_profile(state, params.s)
    N = state.N
    g_j = N * raw_weight(j, state, params) / W - 1.0 - params.mu
    g_below = N * raw_weight(j - 1, state, params) / W - 1.0 if j > 0 else -math.inf
    return g_below, g_j


def _log_integral_factor(g: float, dt: float) -> float:
    """log of int_0^dt exp(-g v) dv."""
    if g > 0.0:
        return math.log(-math.expm1(-g * dt)) - math.log(g)
    if g < 0.0:
        a = -g
        return a * dt + math.log(-math.expm1(-a * dt)) - math.log(a)
    return math.log(dt)


def _scaled(log_I: float, x: float) -> float:
    """I x with I = exp(log_I); zero counts give zero whatever the size of I."""
    if x == 0:
        return 0.0
    return math.exp(log_I + math.log(x))


def martingale_Z_path(trajectory: Trajectory, j: int, times: Sequence[float]) -> List[float]:
    """Z_j at each of the sorted `times`.

    Z_j(t) = I(t) X_j(t) - int_0^t mu X_{j-1}(u) I(u) du - X_j(0), with
    I(u) = exp(-int_0^u G*_j) and G*_j = N F_j - 1 - mu. The state is constant
    between events, so both integrals are sums of closed-form terms. log I is
    accumulated with compensated summation and the u-integral in log space,
    since I grows without bound once type j is lost.
    """
    times = _check_times(trajectory, times)
    params = trajectory.params
    mu = params.mu
    out: List[float] = []
    log_I = _CompensatedSum()
    log_integral = -math.inf
    x0: Optional[int] = None
    k = 0

    for start, stop, state in replay(trajectory):
        if x0 is None:
            x0 = state.count(j)
        _, g = _growth_rates(state, params, j)
        x_below = state.count(j - 1) if j > 0 else 0
        x_j = state.count(j)
        seg_start = start
        while True:
            seg_stop = min(stop, times[k]) if k < len(times) else stop
            dt = seg_stop - seg_start
            if dt > 0.0:
                if x_below > 0 and mu > 0.0:
                    term = (
                        math.log(mu) + math.log(x_below) + log_I.value
                        + _log_integral_factor(g, dt)
                    )
                    log_integral = float(np.logaddexp(log_integral, term))
                log_I.add(-g * dt)
            seg_start = seg_stop
            if k < len(times) and times[k] <= stop and (times[k] < stop or stop >= trajectory.end_time):
                integral = math.exp(log_integral) if log_integral > -math.inf else 0.0
                out.append(_scaled(log_I.value, x_j) - integral - x0)
                k += 1
                continue
            break
        if k == len(times):
            break
    return out


def martingale_Z(trajectory: Trajectory, j: int, t: float) -> float:
    return martingale_Z_path(trajectory, j, [t])[0]


def supermartingale_Y_path(
    trajectory: Trajectory, j: int, times: Sequence[float]
) -> List[float]:
    """Y_j(t) = exp(-int_0^t G~_j) S_j(t) at each of the sorted `times`.

    G~_j = max over l <= j of (N F_l - 1 - mu 1{l = j}), and S_j counts
    individuals with at most j mutations. Fitness is nondecreasing in the
    type, so the maximum is attained at l = j - 1 or l = j.
    """
    times = _check_times(trajectory, times)
    params = trajectory.params
    out: List[float] = []
    log_I = _CompensatedSum()
    k = 0

    for start, stop, state in replay(trajectory):
        g_below, g_j = _growth_rates(state, params, j)
        g = max(g_below, g_j)
        s_j = sum(x for i, x in state.items() if i <= j)
        seg_start = start
        while True:
            seg_stop = min(stop, times[k]) if k < len(times) else stop
            dt = seg_stop - seg_start
            if dt > 0.0:
                log_I.add(-g * dt)
            seg_start = seg_stop
            if k < len(times) and times[k] <= stop and (times[k] < stop or stop >= trajectory.end_time):
                out.append(_scaled(log_I.value, s_j))
                k += 1
                continue
            break
        if k == len(times):
            break
    return out


def supermartingale_Y(trajectory: Trajectory, j: int, t: float) -> float:
    return supermartingale_Y_path(trajectory, j, [t])[0]


WAVE_COLUMNS = ("time", "M", "Q", "R", "jmin", "jmax")
TAU_COLUMNS = ("j", "tau", "gamma")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_wave_csv(records: Sequence[WaveRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WAVE_COLUMNS)
        for rec in records:
            writer.writerow(
                [_fmt(rec.time), _fmt(rec.M), _fmt(rec.lead), rec.R, rec.j_min, rec.j_max]
            )
    _logger.info(f"wrote {len(records)} wave rows to {path}")
    return path


def write_tau_csv(taus: Dict[int, float], a_N: float, path: Union[str, Path]) -> Path:
    """One row per recorded establishment time; gamma is left empty when a_N is infinite."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TAU_COLUMNS)
        for j in sorted(taus):
            gamma = taus[j] + a_N
            writer.writerow([j, _fmt(taus[j]), _fmt(gamma) if math.isfinite(gamma) else ""])
    return path


def _optional_float(value: str) -> Optional[float]:
    return float(value) if value else None


def _read(path: Union[str, Path], columns: Sequence[str], parsers: Sequence[Callable]) -> List[Dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != tuple(columns):
            raise ValueError(f"{path}: expected columns {columns}, got {header}")
        return [
            {name: parse(value) for name, parse, value in zip(columns, parsers, row)}
            for row in reader
        ]


def read_wave_csv(path: Union[str, Path]) -> List[Dict]:
    return _read(path, WAVE_COLUMNS, (float, float, float, int, int, int))


def read_tau_csv(path: Union[str, Path]) -> List[Dict]:
    return _read(path, TAU_COLUMNS, (int, float, _optional_float))
