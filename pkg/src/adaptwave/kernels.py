"""Compiled event loop of the exact simulator.

Types are indexed absolutely: ``counts[j]`` is X_j and the occupied window is
``[J_LO, J_HI]`` of the integer state vector. The loop draws from a numpy
Generator exactly as ``engine.next_event_effective`` and
``engine.next_event_faithful`` draw from a ReplicateStream: one uniform per
draw, exponentials as -log1p(-u), in the same order. Both paths therefore
produce the same trajectory from the same seed.

``simulate`` returns before drawing whenever an array needs to grow, so the
caller can reallocate and call it again without disturbing the stream.
"""

import math

import numpy as np
from numba import njit

# status codes returned by simulate
DONE = 0
GROW_TYPES = 1
GROW_LOG = 2
DEGENERATE = 3

# slots of the integer state vector
J_LO = 0
J_HI = 1
MUT_SUM = 2
SNAP_I = 3
N_LOG = 4
EVENTS = 5
MUTATIONS = 6
REPLACEMENTS = 7
NOOPS = 8
CLAMPS = 9
TOP_SEEN = 10
N_ISTATE = 11

# slots of the float state vector
TIME = 0
AREA = 1
N_FSTATE = 2


@njit
def _index(u, n):
    r = int(u * n)
    return r if r < n else n - 1


@njit
def _type_of(counts, j_lo, r):
    # type of the r-th individual when individuals are ordered by type
    j = j_lo
    acc = counts[j]
    while acc <= r:
        j += 1
        acc += counts[j]
    return j


@njit
def _pick(mass, j_lo, j_hi, u):
    total = 0.0
    for j in range(j_lo, j_hi + 1):
        total += mass[j]
    v = u * total
    acc = 0.0
    for j in range(j_lo, j_hi):
        acc += mass[j]
        if acc > v:
            return j
    return j_hi


@njit
def _weights(counts, j_lo, j_hi, N, ms, s, w):
    """Fills w over the window; returns the population total W and whether a clamp binds."""
    clamped = False
    for j in range(j_lo, j_hi + 1):
        x = 1.0 + s * ((j * N - ms) / N)
        if x < 0.0:
            w[j] = 0.0
            clamped = True
        else:
            w[j] = x
    if not clamped:
        return float(N), False
    total = 0.0
    comp = 0.0
    for j in range(j_lo, j_hi + 1):
        x = counts[j] * w[j]
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
    return total + comp, True


@njit
def _record_snapshot(i, t_snap, t, area, counts, j_lo, j_hi, ms, N,
                     snap_counts, snap_meta, snap_area):
    for j in range(j_lo, j_hi + 1):
        snap_counts[i, j] = counts[j]
    snap_meta[i, 0] = j_lo
    snap_meta[i, 1] = j_hi
    snap_meta[i, 2] = ms
    snap_area[i] = area + (ms / N) * (t_snap - t)


@njit
def simulate(rg, counts, w, mass, istate, fstate, N, mu, s, t_end, faithful,
             threshold, watch, snap_times, snap_counts, snap_meta, snap_area,
             taus, tau_lead, tau_area, first_seen, log_times, log_src, log_dst,
             log_on):
    j_lo = istate[J_LO]
    j_hi = istate[J_HI]
    ms = istate[MUT_SUM]
    snap_i = istate[SNAP_I]
    n_log = istate[N_LOG]
    events = istate[EVENTS]
    mutations = istate[MUTATIONS]
    replacements = istate[REPLACEMENTS]
    noops = istate[NOOPS]
    clamps = istate[CLAMPS]
    top_seen = istate[TOP_SEEN]
    t = fstate[TIME]
    area = fstate[AREA]

    cap = counts.shape[0]
    n_snap = snap_times.shape[0]
    status = DONE
    while True:
        if j_hi + 2 >= cap:
            status = GROW_TYPES
            break
        if log_on and n_log >= log_times.shape[0]:
            status = GROW_LOG
            break

        src = -1
        dst = -1
        is_mutation = False
        dt = math.inf
        W = 0.0
        clamped = False
        if faithful:
            dt = -math.log1p(-rg.random()) / (N * (1.0 + mu))
            if rg.random() * (1.0 + mu) < 1.0:
                W, clamped = _weights(counts, j_lo, j_hi, N, ms, s, w)
                if clamped and W <= 0.0:
                    status = DEGENERATE
                    break
                src = _type_of(counts, j_lo, _index(rg.random(), N))
                for j in range(j_lo, j_hi + 1):
                    mass[j] = counts[j] * w[j]
                dst = _pick(mass, j_lo, j_hi, rg.random())
            else:
                src = _type_of(counts, j_lo, _index(rg.random(), N))
                dst = src + 1
                is_mutation = True
        else:
            W, clamped = _weights(counts, j_lo, j_hi, N, ms, s, w)
            if clamped and W <= 0.0:
                status = DEGENERATE
                break
            total_mass = 0.0
            for j in range(j_lo, j_hi + 1):
                x = counts[j]
                mass[j] = (N - x) * x * w[j]
                total_mass += mass[j]
            replacement_rate = total_mass / W
            mutation_rate = mu * N
            total = mutation_rate + replacement_rate
            if total > 0.0:
                dt = -math.log1p(-rg.random()) / total
                if replacement_rate <= 0.0 or rg.random() * total < mutation_rate:
                    src = _type_of(counts, j_lo, _index(rg.random(), N))
                    dst = src + 1
                    is_mutation = True
                else:
                    dst = _pick(mass, j_lo, j_hi, rg.random())
                    xj = counts[dst]
                    r = _index(rg.random(), N - xj)
                    before = 0
                    for j in range(j_lo, dst):
                        before += counts[j]
                    if r >= before:
                        r += xj
                    src = _type_of(counts, j_lo, r)

        t_next = t + dt
        if t_next > t_end:
            break
        while snap_i < n_snap and snap_times[snap_i] < t_next:
            _record_snapshot(snap_i, snap_times[snap_i], t, area, counts, j_lo, j_hi,
                             ms, N, snap_counts, snap_meta, snap_area)
            snap_i += 1

        # M is constant on [t, t_next)
        area += (ms / N) * dt
        events += 1
        if is_mutation:
            mutations += 1
        elif src == dst:
            noops += 1
        else:
            replacements += 1
        t = t_next

        if src != dst:
            counts[src] -= 1
            counts[dst] += 1
            ms += dst - src
            if dst > j_hi:
                j_hi = dst
            while counts[j_lo] == 0:
                j_lo += 1
            while counts[j_hi] == 0:
                j_hi -= 1

            if log_on:
                log_times[n_log] = t
                log_src[n_log] = src
                log_dst[n_log] = dst
                n_log += 1
            if 1.0 + s * ((j_lo * N - ms) / N) < 0.0:
                clamps += 1
            if j_hi > top_seen:
                top_seen = j_hi
                first_seen[j_hi] = t
            if watch and np.isnan(taus[dst + 1]) and counts[dst] >= threshold:
                taus[dst + 1] = t
                tau_lead[dst + 1] = (j_hi * N - ms) / N
                tau_area[dst + 1] = area

    if status == DONE:
        while snap_i < n_snap:
            _record_snapshot(snap_i, snap_times[snap_i], t, area, counts, j_lo, j_hi,
                             ms, N, snap_counts, snap_meta, snap_area)
            snap_i += 1
        area += (ms / N) * (t_end - t)
        t = t_end

    istate[J_LO] = j_lo
    istate[J_HI] = j_hi
    istate[MUT_SUM] = ms
    istate[SNAP_I] = snap_i
    istate[N_LOG] = n_log
    istate[EVENTS] = events
    istate[MUTATIONS] = mutations
    istate[REPLACEMENTS] = replacements
    istate[NOOPS] = noops
    istate[CLAMPS] = clamps
    istate[TOP_SEEN] = top_seen
    fstate[TIME] = t
    fstate[AREA] = area
    return status
