from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Tuple
import logging
import math

from .errors import DegeneratePopulation, InvalidEvent, InvalidParams

_logger = logging.getLogger("adaptwave")


@dataclass(frozen=True)
class ModelParams:
    """Population size N, per-individual mutation rate mu and selection increment s.

    mu = 0 is accepted so that the simulator can be exercised without mutations;
    the theory module rejects it because every scale is built on log(s/mu).
    """

    N: int
    mu: float
    s: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParams(f"N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if not (0.0 <= self.mu < self.s < 1.0):
            raise InvalidParams(
                f"need 0 <= mu < s < 1, got mu={self.mu!r} s={self.s!r}"
            )

    def as_dict(self) -> Dict[str, float]:
        return {"N": self.N, "mu": self.mu, "s": self.s}


class PopulationState:
    """Type-count profile of the population.

    Counts live in a contiguous window `band` covering the occupied types
    [j_min, j_max]; both ends of the window are always nonzero. The mutation sum
    is a Python int so the mean M = mutation_sum / N never drifts.
    """

    __slots__ = ("N", "j_min", "band", "mutation_sum", "time")

    def __init__(self, counts: Dict[int, int], time: float = 0.0):
        occupied = {j: int(x) for j, x in counts.items() if x != 0}
        if not occupied:
            raise InvalidEvent("a population needs at least one individual")
        if any(j < 0 or x < 0 for j, x in occupied.items()):
            raise InvalidEvent(f"types and counts must be nonnegative: {counts!r}")

        self.j_min = min(occupied)
        j_max = max(occupied)
        self.band: List[int] = [occupied.get(j, 0) for j in range(self.j_min, j_max + 1)]
        self.N = sum(self.band)
        self.mutation_sum = sum(j * x for j, x in occupied.items())
        self.time = float(time)

    @classmethod
    def homogeneous(cls, N: int, j: int = 0) -> "PopulationState":
        return cls({j: N})

    @property
    def j_max(self) -> int:
        return self.j_min + len(self.band) - 1

    def count(self, j: int) -> int:
        k = j - self.j_min
        if 0 <= k < len(self.band):
            return self.band[k]
        return 0

    def items(self) -> Iterator[Tuple[int, int]]:
        """Yields (type, count) over the occupied window, zeros inside it included."""
        for k, x in enumerate(self.band):
            yield self.j_min + k, x

    def as_dict(self) -> Dict[int, int]:
        return {j: x for j, x in self.items() if x > 0}

    def check(self) -> None:
        """Asserts the bookkeeping invariants; cheap enough for per-event hooks in tests."""
        assert sum(self.band) == self.N, f"counts sum to {sum(self.band)}, expected {self.N}"
        assert self.band[0] > 0 and self.band[-1] > 0, f"window ends empty: {self.band}"
        recomputed = sum(j * x for j, x in self.items())
        assert recomputed == self.mutation_sum, f"{recomputed=} != {self.mutation_sum=}"

    def _move(self, src: int, dst: int) -> None:
        # one individual changes type src -> dst
        if dst > self.j_max:
            self.band.extend([0] * (dst - self.j_max))
        elif dst < self.j_min:
            self.band[:0] = [0] * (self.j_min - dst)
            self.j_min = dst
        self.band[src - self.j_min] -= 1
        self.band[dst - self.j_min] += 1
        self.mutation_sum += dst - src

        while self.band[0] == 0:
            del self.band[0]
            self.j_min += 1
        while self.band[-1] == 0:
            self.band.pop()

    def __repr__(self) -> str:
        return f"PopulationState(N={self.N}, time={self.time}, counts={self.as_dict()})"


def mean_mutations(state: PopulationState) -> Tuple[Fraction, float]:
    """Mean number of mutations, exactly and as a float."""
    exact = Fraction(state.mutation_sum, state.N)
    return exact, state.mutation_sum / state.N


def _offset(j: int, state: PopulationState) -> float:
    # j - M, rounded once from an exact rational
    return (j * state.N - state.mutation_sum) / state.N


def raw_weight(j: int, state: PopulationState, params: ModelParams) -> float:
    """Fitness max{0, 1 + s(j - M)} of a type j individual."""
    return max(0.0, 1.0 + params.s * _offset(j, state))


def fitness_profile(
    state: PopulationState, s: float
) -> Tuple[List[float], float, bool]:
    """Weights over the occupied window, their population total W, and whether any clamp binds.

    Without clamping the total is N exactly, so W is returned as N rather than
    a float sum.
    """
    N = state.N
    ms = state.mutation_sum
    j0 = state.j_min
    weights = [1.0 + s * (((j0 + k) * N - ms) / N) for k in range(len(state.band))]
    if weights[0] >= 0.0:
        return weights, float(N), False

    weights = [w if w > 0.0 else 0.0 for w in weights]
    total = math.fsum(x * w for x, w in zip(state.band, weights))
    if total <= 0.0:
        raise DegeneratePopulation(
            f"all occupied types have zero fitness at t={state.time}: {state.as_dict()}"
        )
    return weights, total, True


def total_weight(state: PopulationState, params: ModelParams) -> float:
    return fitness_profile(state, params.s)[1]


def selection_prob(j: int, state: PopulationState, params: ModelParams) -> float:
    """Probability F_j that a given type j individual is chosen as parent at a birth."""
    W = total_weight(state, params)
    return raw_weight(j, state, params) / W


def per_type_rates(
    j: int, state: PopulationState, params: ModelParams
) -> Tuple[float, float, float]:
    """Per-individual birth rate B_j, loss rate D_j and nominal growth rate G_j."""
    x = state.count(j)
    F = selection_prob(j, state, params)
    B = (state.N - x) * F
    D = params.mu + 1.0 - x * F
    G = params.s * _offset(j, state) - params.mu
    return B, D, G


def apply_mutation(state: PopulationState, j: int) -> PopulationState:
    """A type j individual acquires mutation j+1. Mutates and returns `state`."""
    if state.count(j) < 1:
        raise InvalidEvent(f"mutation from empty type {j} in {state!r}")
    state._move(j, j + 1)
    return state


def apply_replacement(state: PopulationState, dying: int, parent: int) -> PopulationState:
    """A type `dying` individual is replaced by the offspring of a type `parent` individual."""
    if state.count(dying) < 1 or state.count(parent) < 1:
        raise InvalidEvent(
            f"replacement dying={dying} parent={parent} needs both types present in {state!r}"
        )
    if dying != parent:
        state._move(dying, parent)
    return state


def apply_move(state: PopulationState, src: int, dst: int) -> PopulationState:
    """One individual changes type src -> dst; the common form of every logged event."""
    if state.count(src) < 1:
        raise InvalidEvent(f"move from empty type {src} in {state!r}")
    if src != dst:
        state._move(src, dst)
    return state


def clamping_binds(state: PopulationState, params: ModelParams) -> bool:
    return 1.0 + params.s * _offset(state.j_min, state) < 0.0


def initial_state(N: int, counts: Optional[Dict[int, int]] = None) -> PopulationState:
    if counts is None:
        return PopulationState.homogeneous(N)
    state = PopulationState(counts)
    if state.N != N:
        raise InvalidEvent(f"initial counts sum to {state.N}, expected N={N}")
    return state
