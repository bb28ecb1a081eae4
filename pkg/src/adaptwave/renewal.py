"""Limit curves q and m of the scaled wave.

q(t) = e^t on [0, 1) and q(t) = integral of q over [t - 1, t] for t >= 1;
m(t) = 0 on [0, 1) and m(t) = 1 + integral of q over [0, t - 1] for t >= 1.

Both jump at t = 1. Stored values are right limits; the left limits (e for q,
0 for m) are kept on the TheoryCurves object.

q is also the derivative of the renewal function of a renewal process with
Uniform(0, 1) gaps, which `renewal_oracle` estimates by Monte Carlo.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union
import logging
import math

import fasteners
import numpy as np
import platformdirs
from scipy.integrate import cumulative_trapezoid

from .errors import InvalidGrid, QueryOutOfRange

_logger = logging.getLogger("adaptwave")

DEFAULT_H = 1e-4
DEFAULT_T_MAX = 64.0


@dataclass(frozen=True, eq=False)
class TheoryCurves:
    h: float
    t_max: float
    t: np.ndarray
    q_values: np.ndarray
    m_values: Optional[np.ndarray] = None
    q_left_at_one: float = math.e
    m_left_at_one: float = 0.0

    @property
    def steps_per_unit(self) -> int:
        return int(round(1.0 / self.h))

    def _check_range(self, t: np.ndarray) -> None:
        if np.any(t < 0.0) or np.any(t > self.t_max * (1.0 + 1e-12)):
            raise QueryOutOfRange(f"curves cover [0, {self.t_max}], got {t!r}")

    def _interp(self, t, values: np.ndarray, left_at_one: float):
        arr = np.asarray(t, dtype=float)
        self._check_range(arr)
        n1 = self.steps_per_unit
        # linear interpolation on each side of the jump; t = 1 takes the right limit
        before = np.interp(
            arr, np.append(self.t[:n1], 1.0), np.append(values[:n1], left_at_one)
        )
        after = np.interp(arr, self.t[n1:], values[n1:])
        out = np.where(arr < 1.0, before, after)
        return float(out) if out.ndim == 0 else out

    def q_at(self, t):
        return self._interp(t, self.q_values, self.q_left_at_one)

    def m_at(self, t):
        if self.m_values is None:
            raise ValueError("m has not been solved; call solve_m first")
        return self._interp(t, self.m_values, self.m_left_at_one)

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Writes one row per grid point with columns t, q, m."""
        path = Path(path)
        m = self.m_values if self.m_values is not None else np.full_like(self.t, np.nan)
        data = np.column_stack([self.t, self.q_values, m])
        np.savetxt(path, data, delimiter=",", header="t,q,m", comments="", fmt="%.17g")
        _logger.info(f"wrote {len(self.t)} curve rows to {path}")
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "TheoryCurves":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, q, m = data[:, 0], data[:, 1], data[:, 2]
        h = 1.0 / round(1.0 / (t[1] - t[0]))
        return cls(h, float(t[-1]), t, q, None if np.isnan(m).all() else m)


def _grid(h: float, t_max: float) -> np.ndarray:
    n1 = int(round(1.0 / h)) if h > 0 else 0
    if n1 < 1 or abs(n1 * h - 1.0) > 1e-12:
        raise InvalidGrid(f"step h={h} must divide 1 exactly")
    if t_max < 1.0:
        raise InvalidGrid(f"t_max must be at least 1, got {t_max}")
    n = int(math.ceil(t_max * n1 - 1e-9))
    # i / n1 keeps every integer time exact
    return np.arange(n + 1) / n1


def solve_q(h: float = DEFAULT_H, t_max: float = DEFAULT_T_MAX) -> TheoryCurves:
    """Marches q forward with the composite trapezoid rule over the window [t - 1, t].

    The rule is implicit in q(t) itself, which is solved for in closed form at
    each step. Where the window contains the jump at 1 as an interior node the
    node carries the average of the two one-sided limits, which keeps the
    global error O(h**2).
    """
    t = _grid(h, t_max)
    n1 = int(round(1.0 / h))
    n = len(t) - 1
    h = 1.0 / n1
    e = math.e

    q = [math.exp(x) for x in t[:n1].tolist()] + [0.0] * (n - n1 + 1)

    interior = math.fsum(q[1:n1])
    q[n1] = h * (0.5 * q[0] + interior + 0.5 * e)
    # node t = 1 counts as the mean of its limits while it is interior to the window
    jump = 0.5 * (e - q[n1])

    scale = 1.0 / (1.0 - 0.5 * h)
    for i in range(n1 + 1, n + 1):
        lo = i - n1
        if lo % n1 == 0:
            interior = math.fsum(q[lo + 1 : i])
        else:
            interior += q[i - 1] - q[lo]
        inner = interior + jump if lo < n1 else interior
        q[i] = h * (0.5 * q[lo] + inner) * scale

    _logger.info(f"solved q on {n + 1} grid points, h={h}, t_max={t[-1]}")
    return TheoryCurves(h=h, t_max=float(t[-1]), t=t, q_values=np.array(q))


def solve_m(curves: TheoryCurves) -> TheoryCurves:
    """Adds m(t) = 1 + integral of q over [0, t - 1] (and 0 before 1) to `curves`."""
    n1 = curves.steps_per_unit
    q = curves.q_values
    h = curves.h
    pre = cumulative_trapezoid(np.append(q[:n1], curves.q_left_at_one), dx=h, initial=0.0)
    post = cumulative_trapezoid(q[n1:], dx=h, initial=0.0) + pre[-1]
    cumulative = np.concatenate([pre, post[1:]])

    m = np.zeros_like(q)
    m[n1:] = 1.0 + cumulative[: len(q) - n1]
    return replace(curves, m_values=m)


def solve_curves(h: float = DEFAULT_H, t_max: float = DEFAULT_T_MAX) -> TheoryCurves:
    return solve_m(solve_q(h, t_max))


def default_cache_dir() -> Path:
    return platformdirs.user_cache_path("adaptwave")


def cached_curves(
    h: float = DEFAULT_H,
    t_max: float = DEFAULT_T_MAX,
    cache_dir: Optional[Path] = None,
) -> TheoryCurves:
    """solve_curves, memoized on disk; safe under concurrent processes."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"curves-h{h!r}-tmax{t_max!r}.npz"

    with fasteners.InterProcessLock(cache_dir / ".lockfile"):
        if path.exists():
            _logger.info(f"loading cached theory curves from {path}")
            with np.load(path) as data:
                return TheoryCurves(
                    h=float(data["h"]),
                    t_max=float(data["t_max"]),
                    t=data["t"],
                    q_values=data["q"],
                    m_values=data["m"],
                )
        _logger.info(f"no cached curves at {path}, solving")
        curves = solve_curves(h, t_max)
        np.savez(
            path, h=curves.h, t_max=curves.t_max, t=curves.t,
            q=curves.q_values, m=curves.m_values,
        )
        return curves


@dataclass(frozen=True, eq=False)
class OracleEstimate:
    """Monte Carlo estimates at `t` with standard errors over `n_paths` paths."""

    t: np.ndarray
    U: np.ndarray
    U_se: np.ndarray
    q: np.ndarray
    q_se: np.ndarray
    m: np.ndarray
    m_se: np.ndarray
    n_paths: int
    delta: float

    def max_z(self, curves: TheoryCurves) -> float:
        """Largest |q_hat - q| / SE over the probes."""
        z = np.abs(self.q - curves.q_at(self.t)) / self.q_se
        return float(np.max(z))


def renewal_oracle(
    t_max: float,
    n_paths: int,
    seed: int,
    probes: Optional[Sequence[float]] = None,
    delta: float = 0.02,
    chunk: int = 20_000,
) -> OracleEstimate:
    """Estimates U(t) = E[#renewals in [0, t]] for Uniform(0, 1) gaps, and q = U', m = 1 + U(t - 1).

    q is estimated with the second order forward difference
    (-3U(t) + 4U(t + delta) - U(t + 2 delta)) / (2 delta), which is the right
    derivative and therefore matches the right-continuous convention at 1.
    """
    from .engine import seed_for_replicate

    if n_paths < 1:
        raise ValueError(f"n_paths must be positive, got {n_paths}")
    if probes is None:
        probes = np.arange(0.25, t_max + 1e-9, 0.25)
    probes = np.asarray(probes, dtype=float)

    shifted = probes[probes >= 1.0] - 1.0
    ev = np.unique(np.concatenate([probes, probes + delta, probes + 2 * delta, shifted]))
    pos = {round(x, 12): k for k, x in enumerate(ev.tolist())}

    def col(times: np.ndarray) -> np.ndarray:
        return np.array([pos[round(x, 12)] for x in times.tolist()], dtype=int)

    c0, c1, c2 = col(probes), col(probes + delta), col(probes + 2 * delta)
    horizon = float(ev[-1])
    width = int(2 * horizon + 8 * math.sqrt(horizon) + 20)
    P = len(ev)

    sums = {key: np.zeros(len(probes)) for key in ("U", "q", "m")}
    squares = {key: np.zeros(len(probes)) for key in ("U", "q", "m")}

    done = 0
    block = 0
    while done < n_paths:
        rows = min(chunk, n_paths - done)
        gen = np.random.Generator(np.random.Philox(key=seed_for_replicate(seed, block)))
        cums = np.cumsum(1.0 - gen.random((rows, width)), axis=1)
        while cums[:, -1].min() <= horizon:
            more = np.cumsum(1.0 - gen.random((rows, width)), axis=1) + cums[:, -1:]
            cums = np.hstack([cums, more])

        # counts[r, k] = number of renewals of path r at or before ev[k]
        idx = np.searchsorted(ev, cums, side="left")
        flat = (np.arange(rows)[:, None] * (P + 1) + idx).ravel()
        hist = np.bincount(flat, minlength=rows * (P + 1)).reshape(rows, P + 1)
        counts = np.cumsum(hist, axis=1)[:, :P].astype(float)

        U = counts[:, c0]
        q = (-3.0 * U + 4.0 * counts[:, c1] - counts[:, c2]) / (2.0 * delta)
        m = np.zeros_like(U)
        late = probes >= 1.0
        m[:, late] = 1.0 + counts[:, col(shifted)]
        for key, values in (("U", U), ("q", q), ("m", m)):
            sums[key] += values.sum(axis=0)
            squares[key] += (values**2).sum(axis=0)

        done += rows
        block += 1

    def mean_se(key: str):
        mean = sums[key] / n_paths
        var = np.maximum(squares[key] / n_paths - mean**2, 0.0)
        return mean, np.sqrt(var / max(n_paths - 1, 1))

    U, U_se = mean_se("U")
    q, q_se = mean_se("q")
    m, m_se = mean_se("m")
    _logger.info(f"renewal oracle: {n_paths} paths, {len(probes)} probes, horizon {horizon}")
    return OracleEstimate(probes, U, U_se, q, q_se, m, m_se, n_paths, delta)
