"""Exact continuous-time simulation of the population.

Two samplers produce the same process in law:

* ``faithful`` draws every death and every mutation at total rate N(1 + mu),
  including replacements of an individual by an offspring of its own type;
* ``effective`` only draws events that change the type counts, at rate
  mu N + N (1 - sum_j (X_j/N)(X_j F_j)).

Random numbers come from a counter-based Philox stream keyed by
``seed_for_replicate`` so that every replicate of an ensemble is reproducible
independently of how replicates are scheduled over workers. The event loop
runs compiled (see ``kernels``) unless per-event hooks are requested, in which
case the single-event samplers below drive it from Python. Both loops read the
stream the same way and give the same trajectory.
"""

from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math
import time as _time

import numpy as np

from . import kernels
from .errors import DegeneratePopulation, QueryOutOfRange
from .model import (
    ModelParams,
    PopulationState,
    apply_mutation,
    apply_replacement,
    clamping_binds,
    fitness_profile,
    initial_state,
)

_logger = logging.getLogger("adaptwave")

ENGINES = ("effective", "faithful")

# dense event logs are recorded by default only up to this population size
DENSE_LOG_MAX_N = 10_000

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def seed_for_replicate(master_seed: int, replicate_index: int) -> int:
    """Derives the stream seed of one replicate.

    The input master + (index + 1) * golden_gamma (mod 2**64) is distinct for
    distinct indices because golden_gamma is odd, and the SplitMix64 finalizer
    is a bijection on 64-bit words, so distinct indices never share a seed.
    """
    if replicate_index < 0:
        raise ValueError(f"replicate index must be nonnegative, got {replicate_index}")
    x = (master_seed + (replicate_index + 1) * _GOLDEN_GAMMA) & _MASK64
    return _splitmix64(x)


class ReplicateStream:
    """Buffered uniforms from a Philox generator keyed by a 64-bit seed.

    Exponentials are -log1p(-u) of the next uniform, so every draw consumes
    exactly one uniform of the underlying generator.
    """

    block = 4096

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self._unif: List[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == len(self._unif):
            self._unif = self._gen.random(self.block).tolist()
            self._pos = 0
        u = self._unif[self._pos]
        self._pos += 1
        return u

    def exponential(self) -> float:
        return -math.log1p(-self.uniform())

    @property
    def generator(self) -> np.random.Generator:
        """The underlying generator; only valid for a stream nothing was drawn from yet."""
        assert self._pos == len(self._unif) == 0, "stream already buffered draws"
        return self._gen


@dataclass(frozen=True)
class Mutation:
    """A type j individual acquires its (j+1)st mutation."""

    j: int

    @property
    def src(self) -> int:
        return self.j

    @property
    def dst(self) -> int:
        return self.j + 1

    @property
    def is_noop(self) -> bool:
        return False


@dataclass(frozen=True)
class Replacement:
    """A type `dying` individual dies and a type `parent` individual gives birth."""

    dying: int
    parent: int

    @property
    def src(self) -> int:
        return self.dying

    @property
    def dst(self) -> int:
        return self.parent

    @property
    def is_noop(self) -> bool:
        return self.dying == self.parent


EventKind = Union[Mutation, Replacement]


def apply_event(state: PopulationState, event: EventKind) -> PopulationState:
    if isinstance(event, Mutation):
        return apply_mutation(state, event.j)
    return apply_replacement(state, event.dying, event.parent)


def _individual_index(u: float, n: int) -> int:
    r = int(u * n)
    return r if r < n else n - 1


def _pick(cum: Sequence[float], u: float) -> int:
    k = bisect_right(cum, u * cum[-1])
    return k if k < len(cum) else len(cum) - 1


def next_event_faithful(
    state: PopulationState, params: ModelParams, stream: ReplicateStream
) -> Tuple[float, EventKind]:
    """Next event when every individual dies at rate 1 and mutates at rate mu."""
    N = state.N
    mu = params.mu
    dt = stream.exponential() / (N * (1.0 + mu))
    band = state.band
    counts_cum = list(accumulate(band))

    if stream.uniform() * (1.0 + mu) < 1.0:
        weights, _, _ = fitness_profile(state, params.s)
        i = bisect_right(counts_cum, _individual_index(stream.uniform(), N))
        parent_cum = list(accumulate(x * w for x, w in zip(band, weights)))
        j = _pick(parent_cum, stream.uniform())
        return dt, Replacement(state.j_min + i, state.j_min + j)

    k = bisect_right(counts_cum, _individual_index(stream.uniform(), N))
    return dt, Mutation(state.j_min + k)


def effective_rates(state: PopulationState, params: ModelParams) -> Tuple[float, float]:
    """Total rates of mutations and of type-changing replacements."""
    weights, W, _ = fitness_profile(state, params.s)
    N = state.N
    mass = math.fsum((N - x) * x * w for x, w in zip(state.band, weights))
    return params.mu * N, mass / W


def next_event_effective(
    state: PopulationState, params: ModelParams, stream: ReplicateStream
) -> Tuple[float, Optional[EventKind]]:
    """Next type-changing event; returns (inf, None) when nothing can change."""
    N = state.N
    band = state.band
    weights, W, _ = fitness_profile(state, params.s)

    # parent type j has marginal mass (N - X_j) X_j w_j / W given the dying type differs
    parent_cum = list(accumulate((N - x) * x * w for x, w in zip(band, weights)))
    replacement_rate = parent_cum[-1] / W
    mutation_rate = params.mu * N
    total = mutation_rate + replacement_rate
    if total <= 0.0:
        return math.inf, None

    dt = stream.exponential() / total
    counts_cum = list(accumulate(band))
    if replacement_rate <= 0.0 or stream.uniform() * total < mutation_rate:
        k = bisect_right(counts_cum, _individual_index(stream.uniform(), N))
        return dt, Mutation(state.j_min + k)

    kj = _pick(parent_cum, stream.uniform())
    xj = band[kj]
    r = _individual_index(stream.uniform(), N - xj)
    before = counts_cum[kj - 1] if kj > 0 else 0
    if r >= before:
        r += xj
    ki = bisect_right(counts_cum, r)
    return dt, Replacement(state.j_min + ki, state.j_min + kj)


@dataclass(frozen=True)
class RunSchedule:
    """Horizon, snapshot times and whether establishment times are tracked."""

    t_end: float
    snapshot_times: Tuple[float, ...] = ()
    threshold_watch: bool = True

    def __post_init__(self):
        times = tuple(float(t) for t in self.snapshot_times)
        if not self.t_end > 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be sorted ascending")
        if times and (times[0] < 0.0 or times[-1] > self.t_end):
            raise ValueError(f"snapshot times must lie in [0, {self.t_end}]")
        object.__setattr__(self, "snapshot_times", times)

    @classmethod
    def on_grid(
        cls,
        t_end: float,
        resolution: int,
        extra: Sequence[float] = (),
        threshold_watch: bool = True,
    ) -> "RunSchedule":
        """Evenly spaced snapshots 0, ..., t_end merged with `extra` times."""
        assert resolution >= 2, f"{resolution=}"
        grid = {t_end * i / (resolution - 1) for i in range(resolution)}
        grid.update(t for t in extra if 0.0 <= t <= t_end)
        return cls(t_end, tuple(sorted(grid)), threshold_watch)


@dataclass(frozen=True)
class Snapshot:
    """Left-continuous state at a scheduled time.

    mean_area is the integral of M over [0, time], which makes integrals of
    the growth rates s(j - M) - mu available between any two snapshots.
    """

    time: float
    j_min: int
    counts: Tuple[int, ...]
    mutation_sum: int
    N: int
    mean_area: float = 0.0

    @property
    def j_max(self) -> int:
        return self.j_min + len(self.counts) - 1

    @property
    def mean(self) -> float:
        return self.mutation_sum / self.N

    @property
    def lead(self) -> float:
        """Q = j_max - M."""
        return (self.j_max * self.N - self.mutation_sum) / self.N

    def count(self, j: int) -> int:
        k = j - self.j_min
        if 0 <= k < len(self.counts):
            return self.counts[k]
        return 0

    def as_dict(self) -> Dict[int, int]:
        return {self.j_min + k: x for k, x in enumerate(self.counts) if x > 0}

    @classmethod
    def of(cls, state: PopulationState, t: float, mean_area: float = 0.0) -> "Snapshot":
        return cls(t, state.j_min, tuple(state.band), state.mutation_sum, state.N, mean_area)


@dataclass
class EventLog:
    """Every state change of a run: one individual moves from type src to type dst."""

    initial: Dict[int, int]
    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    @classmethod
    def from_lists(
        cls, initial: Dict[int, int], times: List[float], src: List[int], dst: List[int]
    ) -> "EventLog":
        return cls(
            initial,
            np.array(times, dtype=np.float64),
            np.array(src, dtype=np.int64),
            np.array(dst, dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.times)


def count_tau_inversions(taus: Dict[int, float]) -> int:
    """Number of j with tau_{j+1} < tau_j among consecutive recorded types."""
    return sum(1 for j, tau in taus.items() if (j + 1) in taus and taus[j + 1] < tau)


@dataclass
class Trajectory:
    """One simulated replicate.

    area_at_tau holds the integral of M up to each establishment time and
    first_seen the first time the fittest type reached each j.
    """

    params: ModelParams
    schedule: RunSchedule
    seed: int
    engine: str
    snapshots: List[Snapshot] = field(default_factory=list)
    taus: Dict[int, float] = field(default_factory=dict)
    lead_at_tau: Dict[int, float] = field(default_factory=dict)
    area_at_tau: Dict[int, float] = field(default_factory=dict)
    first_seen: Dict[int, float] = field(default_factory=dict)
    events: int = 0
    mutations: int = 0
    replacements: int = 0
    noops: int = 0
    clamp_events: int = 0
    degenerate: bool = False
    degenerate_reason: str = ""
    end_time: float = 0.0
    mean_area: float = 0.0
    final_state: Optional[PopulationState] = None
    log: Optional[EventLog] = None
    wall_time: float = 0.0

    @property
    def clamped(self) -> bool:
        return self.clamp_events > 0

    @property
    def tau_inversions(self) -> int:
        return count_tau_inversions(self.taus)

    def gammas(self, a_N: float) -> Dict[int, float]:
        return {j: tau + a_N for j, tau in self.taus.items()}

    def snapshot_at(self, t: float, tol: float = 1e-9) -> Snapshot:
        """The recorded snapshot at scheduled time t."""
        return find_snapshot(self.snapshots, t, tol)


def find_snapshot(snapshots: Sequence[Snapshot], t: float, tol: float = 1e-9) -> Snapshot:
    times = [snap.time for snap in snapshots]
    slack = tol * max(1.0, abs(t))
    k = bisect_right(times, t + slack)
    if k == 0 or abs(times[k - 1] - t) > slack:
        last = times[-1] if times else None
        raise QueryOutOfRange(
            f"no snapshot at t={t} ({len(times)} snapshots recorded, last at {last})"
        )
    return snapshots[k - 1]


Hook = Callable[[PopulationState, EventKind, float], None]


def _run_stepwise(
    traj: Trajectory,
    state: PopulationState,
    stream: ReplicateStream,
    hooks: Sequence[Hook],
    threshold: float,
    dense_log: bool,
) -> PopulationState:
    params = traj.params
    next_event = next_event_effective if traj.engine == "effective" else next_event_faithful
    N = params.N
    schedule = traj.schedule
    snap_times = schedule.snapshot_times
    n_snap = len(snap_times)
    t_end = schedule.t_end
    watch = schedule.threshold_watch
    taus = traj.taus
    log_times: List[float] = []
    log_src: List[int] = []
    log_dst: List[int] = []

    snap_i = 0
    top_seen = state.j_max
    t = 0.0
    area = 0.0
    while True:
        try:
            dt, event = next_event(state, params, stream)
        except DegeneratePopulation as err:
            traj.degenerate = True
            traj.degenerate_reason = str(err)
            break

        t_next = t + dt
        if t_next > t_end:
            break
        M = state.mutation_sum / N
        while snap_i < n_snap and snap_times[snap_i] < t_next:
            traj.snapshots.append(
                Snapshot.of(state, snap_times[snap_i], area + M * (snap_times[snap_i] - t))
            )
            snap_i += 1

        area += M * dt
        traj.events += 1
        if isinstance(event, Mutation):
            traj.mutations += 1
        elif event.is_noop:
            traj.noops += 1
        else:
            traj.replacements += 1

        apply_event(state, event)
        state.time = t = t_next

        if not event.is_noop:
            if dense_log:
                log_times.append(t)
                log_src.append(event.src)
                log_dst.append(event.dst)
            if clamping_binds(state, params):
                traj.clamp_events += 1
            if state.j_max > top_seen:
                top_seen = state.j_max
                traj.first_seen[top_seen] = t
            dst = event.dst
            if watch and (dst + 1) not in taus and state.count(dst) >= threshold:
                taus[dst + 1] = t
                traj.lead_at_tau[dst + 1] = (state.j_max * N - state.mutation_sum) / N
                traj.area_at_tau[dst + 1] = area

        for hook in hooks:
            hook(state, event, t)

    if not traj.degenerate:
        M = state.mutation_sum / N
        while snap_i < n_snap:
            traj.snapshots.append(
                Snapshot.of(state, snap_times[snap_i], area + M * (snap_times[snap_i] - t))
            )
            snap_i += 1
        area += M * (t_end - t)
        t = t_end
        state.time = t

    traj.end_time = t
    traj.mean_area = area
    if dense_log:
        traj.log = EventLog.from_lists(traj.log.initial, log_times, log_src, log_dst)
    return state


def _grown(arr: np.ndarray, size: int, fill) -> np.ndarray:
    out = np.full((*arr.shape[:-1], size), fill, dtype=arr.dtype)
    out[..., : arr.shape[-1]] = arr
    return out


def _from_slots(values: np.ndarray) -> Dict[int, float]:
    return {int(j): float(values[j]) for j in np.flatnonzero(~np.isnan(values))}


def _run_compiled(
    traj: Trajectory,
    state: PopulationState,
    stream: ReplicateStream,
    threshold: float,
    dense_log: bool,
) -> PopulationState:
    params = traj.params
    N = params.N
    schedule = traj.schedule

    cap = max(64, 2 * (state.j_max + 4))
    counts = np.zeros(cap, dtype=np.int64)
    counts[state.j_min : state.j_max + 1] = state.band
    w = np.zeros(cap)
    mass = np.zeros(cap)

    snap_times = np.array(schedule.snapshot_times, dtype=np.float64)
    n_snap = len(snap_times)
    snap_counts = np.zeros((n_snap, cap), dtype=np.int64)
    snap_meta = np.zeros((n_snap, 3), dtype=np.int64)
    snap_area = np.zeros(n_snap)

    slots = {name: np.full(cap, np.nan) for name in ("taus", "lead", "area", "seen")}
    for j, tau in traj.taus.items():
        slots["taus"][j] = tau
    for j, lead in traj.lead_at_tau.items():
        slots["lead"][j] = lead
    for j, value in traj.area_at_tau.items():
        slots["area"][j] = value
    for j, value in traj.first_seen.items():
        slots["seen"][j] = value

    size = 1 << 16 if dense_log else 0
    log_times = np.zeros(size)
    log_src = np.zeros(size, dtype=np.int64)
    log_dst = np.zeros(size, dtype=np.int64)

    istate = np.zeros(kernels.N_ISTATE, dtype=np.int64)
    istate[kernels.J_LO] = state.j_min
    istate[kernels.J_HI] = state.j_max
    istate[kernels.MUT_SUM] = state.mutation_sum
    istate[kernels.TOP_SEEN] = state.j_max
    fstate = np.zeros(kernels.N_FSTATE)

    rg = stream.generator
    while True:
        status = kernels.simulate(
            rg, counts, w, mass, istate, fstate,
            N, float(params.mu), float(params.s), float(schedule.t_end),
            traj.engine == "faithful", float(threshold), schedule.threshold_watch,
            snap_times, snap_counts, snap_meta, snap_area,
            slots["taus"], slots["lead"], slots["area"], slots["seen"],
            log_times, log_src, log_dst, dense_log,
        )
        if status == kernels.GROW_TYPES:
            cap *= 2
            counts = _grown(counts, cap, 0)
            w = _grown(w, cap, 0.0)
            mass = _grown(mass, cap, 0.0)
            snap_counts = _grown(snap_counts, cap, 0)
            slots = {name: _grown(values, cap, np.nan) for name, values in slots.items()}
        elif status == kernels.GROW_LOG:
            size = 2 * len(log_times)
            log_times = _grown(log_times, size, 0.0)
            log_src = _grown(log_src, size, 0)
            log_dst = _grown(log_dst, size, 0)
        else:
            break

    t = float(fstate[kernels.TIME])
    if status == kernels.DEGENERATE:
        traj.degenerate = True
        traj.degenerate_reason = f"all occupied types have zero fitness at t={t}"

    for i in range(int(istate[kernels.SNAP_I])):
        lo, hi, ms = (int(v) for v in snap_meta[i])
        traj.snapshots.append(
            Snapshot(
                float(snap_times[i]),
                lo,
                tuple(snap_counts[i, lo : hi + 1].tolist()),
                ms,
                N,
                float(snap_area[i]),
            )
        )
    traj.taus = _from_slots(slots["taus"])
    traj.lead_at_tau = _from_slots(slots["lead"])
    traj.area_at_tau = _from_slots(slots["area"])
    traj.first_seen = _from_slots(slots["seen"])
    traj.events = int(istate[kernels.EVENTS])
    traj.mutations = int(istate[kernels.MUTATIONS])
    traj.replacements = int(istate[kernels.REPLACEMENTS])
    traj.noops = int(istate[kernels.NOOPS])
    traj.clamp_events = int(istate[kernels.CLAMPS])
    traj.end_time = t
    traj.mean_area = float(fstate[kernels.AREA])
    if dense_log:
        n = int(istate[kernels.N_LOG])
        traj.log = EventLog(
            traj.log.initial, log_times[:n].copy(), log_src[:n].copy(), log_dst[:n].copy()
        )

    lo, hi = int(istate[kernels.J_LO]), int(istate[kernels.J_HI])
    final = PopulationState({j: int(counts[j]) for j in range(lo, hi + 1)}, time=t)
    assert final.mutation_sum == istate[kernels.MUT_SUM], "mutation sum drifted"
    return final


def run(
    params: ModelParams,
    schedule: RunSchedule,
    seed: int,
    hooks: Sequence[Hook] = (),
    *,
    engine: str = "effective",
    dense_log: Optional[bool] = None,
    initial_counts: Optional[Dict[int, int]] = None,
) -> Trajectory:
    """Simulates one replicate from time 0 to schedule.t_end.

    Args:
        params: model parameters.
        schedule: horizon, snapshot times and threshold tracking.
        seed: stream seed, usually from seed_for_replicate.
        hooks: callables invoked after each applied event with (state, event, time).
            With hooks the loop runs in Python, otherwise compiled; the
            trajectory is the same either way.
        engine: "effective" (default) or "faithful".
        dense_log: record every state change; defaults to N <= DENSE_LOG_MAX_N.
        initial_counts: starting profile; the all-type-0 population when None.

    Returns:
        The Trajectory. Identical arguments give identical trajectories.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}, expected one of {ENGINES}")
    if dense_log is None:
        dense_log = params.N <= DENSE_LOG_MAX_N

    started = _time.perf_counter()
    state = initial_state(params.N, initial_counts)
    stream = ReplicateStream(seed)
    traj = Trajectory(params=params, schedule=schedule, seed=seed, engine=engine)
    if dense_log:
        traj.log = EventLog.from_lists(state.as_dict(), [], [], [])

    N = params.N
    threshold = params.s / params.mu if params.mu > 0.0 else math.inf
    traj.first_seen = {j: 0.0 for j in range(state.j_max + 1)}
    if schedule.threshold_watch:
        traj.taus[0] = 0.0
        traj.area_at_tau[0] = 0.0
        for j, x in state.items():
            if x >= threshold:
                traj.taus[j + 1] = 0.0
                traj.lead_at_tau[j + 1] = (state.j_max * N - state.mutation_sum) / N
                traj.area_at_tau[j + 1] = 0.0

    _logger.info(
        f"run start: {params} engine={engine} seed={seed} t_end={schedule.t_end} "
        f"dense_log={dense_log} hooks={len(hooks)}"
    )
    if hooks:
        state = _run_stepwise(traj, state, stream, hooks, threshold, dense_log)
    else:
        state = _run_compiled(traj, state, stream, threshold, dense_log)
    traj.final_state = state
    traj.wall_time = _time.perf_counter() - started

    if traj.degenerate:
        _logger.warning(
            f"replicate seed={seed} stopped early at t={traj.end_time}: {traj.degenerate_reason}"
        )
    if traj.clamped:
        _logger.warning(
            f"replicate seed={seed}: fitness clamp bound after {traj.clamp_events} events"
        )
    inversions = traj.tau_inversions
    if inversions:
        _logger.info(f"replicate seed={seed}: {inversions} establishment times out of order")
    if _logger.isEnabledFor(logging.DEBUG):
        for snap in traj.snapshots:
            _logger.debug(
                f"seed={seed} snapshot t={snap.time:.6g} M={snap.mean:.6g} "
                f"Q={snap.lead:.6g} types=[{snap.j_min}, {snap.j_max}]"
            )
    _logger.info(
        f"run done: seed={seed} events={traj.events} mutations={traj.mutations} "
        f"taus={len(traj.taus)} wall={traj.wall_time:.2f}s"
    )
    return traj
