"""Trajectory kernels: numba ``@njit`` versions and a vectorized numpy fallback.

Backend selection: ``HITLAB_BACKEND=numpy`` forces the fallback; otherwise
numba is used when importable. ``HITLAB_THREADS`` caps numba's worker count.

Random numbers come from a counter-based splitmix64 construction. Trajectory
i owns the key ``mix(seed ^ mix(i))`` and its k-th uniform is
``(mix(key + k * GOLDEN) >> 11) * 2**-53``. Draw slots are fixed: slot 0 picks
the start, slot 1 the jump test at t = 0, slots 2t and 2t + 1 the transition
and jump test at step t. Both backends therefore produce identical samples,
independent of how trajectories are split into blocks or threads.
"""
from __future__ import annotations

import os

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_UNIT = 2.0**-53


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old and only produces a warning
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def backend() -> str:
    choice = os.environ.get("HITLAB_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"HITLAB_BACKEND must be 'numba' or 'numpy', not {choice!r}")
    if choice == "numpy" or not HAVE_NUMBA:
        return "numpy"
    return "numba"


def _apply_thread_cap() -> None:
    cap = os.environ.get("HITLAB_THREADS")
    if cap and HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


# ----------------------------------------------------------------- tables


class Transitions:
    """Row-wise cumulative probabilities in stored column order.

    ``cum`` is CSR over the nonzero entries; ``pad_cum``/``pad_col`` hold the
    same rows padded with +inf for the vectorized path. The last cumulative
    value of each row is pinned to one so a uniform draw always lands in the row.
    """

    def __init__(self, P: np.ndarray):
        n = P.shape[0]
        nnz = (P > 0).sum(axis=1)
        self.indptr = np.concatenate([[0], np.cumsum(nnz)]).astype(np.int64)
        cols, cums = [], []
        width = int(nnz.max())
        self.pad_cum = np.full((n, width), np.inf)
        self.pad_col = np.zeros((n, width), dtype=np.int64)
        for x in range(n):
            c = np.flatnonzero(P[x] > 0)
            cu = np.cumsum(P[x, c])
            cu[-1] = 1.0
            cols.append(c)
            cums.append(cu)
            self.pad_cum[x, : len(c)] = cu
            self.pad_col[x, : len(c)] = c
        self.cols = np.concatenate(cols).astype(np.int64)
        self.cum = np.concatenate(cums)
        self.nnz = nnz.astype(np.int64)


def start_table(alpha: np.ndarray):
    support = np.flatnonzero(alpha > 0).astype(np.int64)
    cum = np.cumsum(alpha[support])
    cum[-1] = 1.0
    return support, cum


# ----------------------------------------------------------------- numpy path


def _keys(seed: int, first: int, count: int) -> np.ndarray:
    idx = np.arange(first, first + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(np.uint64(seed) ^ _mix(idx))


def _uniform(keys: np.ndarray, slot: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = _mix(keys + np.uint64(slot) * GOLDEN)
    return (z >> _S11).astype(np.float64) * _UNIT


def _step_np(tr: Transitions, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    count = (tr.pad_cum[x] <= u[:, None]).sum(axis=1)
    pos = np.minimum(count, tr.nnz[x] - 1)
    return tr.pad_col[x, pos]


def _start_np(support, cum, u):
    pos = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
    return support[pos]


def walk_numpy(tr, support, cum, goal, jump, horizon, snap_t, seed, first, count):
    keys = _keys(seed, first, count)
    x = _start_np(support, cum, _uniform(keys, 0))
    tau_g = np.full(count, -1, dtype=np.int64)
    exit_s = np.full(count, -1, dtype=np.int64)
    tau1 = np.full(count, -1, dtype=np.int64)
    x1 = np.full(count, -1, dtype=np.int64)
    snaps = np.full((count, len(snap_t)), -1, dtype=np.int64)
    h_jump = jump.shape[0] - 1
    use_jump = h_jump >= 0

    def record(t, pos):
        for s in np.flatnonzero(snap_t == t):
            snaps[pos, s] = x[pos]

    if use_jump:
        v = _uniform(keys, 1)
        hit = v < jump[0, x]
        tau1[hit] = 0
        x1[hit] = x[hit]
    at_goal = goal[x]
    tau_g[at_goal] = 0
    exit_s[at_goal] = x[at_goal]
    alive = np.flatnonzero(~at_goal)
    record(0, np.arange(count))
    for t in range(1, horizon + 1):
        if alive.size == 0:
            break
        k = keys[alive]
        x[alive] = _step_np(tr, x[alive], _uniform(k, 2 * t))
        if use_jump and t <= h_jump:
            pending = tau1[alive] == -1
            if pending.any():
                idx = alive[pending]
                v = _uniform(keys[idx], 2 * t + 1)
                hit = v < jump[t, x[idx]]
                tau1[idx[hit]] = t
                x1[idx[hit]] = x[idx[hit]]
        record(t, alive)
        done = goal[x[alive]]
        tau_g[alive[done]] = t
        exit_s[alive[done]] = x[alive[done]]
        alive = alive[~done]
    # absorbed trajectories stay put for later snapshot times
    for s, ts in enumerate(snap_t):
        fill = (snaps[:, s] == -1) & (tau_g >= 0) & (tau_g <= ts)
        snaps[fill, s] = exit_s[fill]
    return tau_g, exit_s, tau1, x1, snaps


def rim_numpy(tr, x0, m, level_of, top, horizon, seed, first, count):
    """Nested halting times on the rim; see ``rim_numba`` for the record layout."""
    keys = _keys(seed, first, count)
    x = np.full(count, x0, dtype=np.int64)
    tau_lv = np.full((count, top + 1), -1, dtype=np.int64)
    x_lv = np.full((count, top + 1), -1, dtype=np.int64)
    tau_star = np.full(count, -1, dtype=np.int64)
    x_star = np.full(count, -1, dtype=np.int64)
    tau_g = np.full(count, -1, dtype=np.int64)
    level = np.full(count, -1, dtype=np.int64)
    s0 = np.full(count, -1, dtype=np.int64)

    def visit(t, idx):
        xi = x[idx]
        lv = level[idx]
        first_hit = (lv == -1) & (xi % 4 == 0)
        a = idx[first_hit]
        level[a] = 0
        s0[a] = x[a]
        tau_lv[a, 0] = t
        x_lv[a, 0] = x[a]
        climbing = (lv >= 0) & (lv < top)
        b = idx[climbing]
        nxt = level_of[(x[b] - s0[b]) % m] == level[b] + 1
        b = b[nxt]
        level[b] += 1
        tau_lv[b, level[b]] = t
        x_lv[b, level[b]] = x[b]
        c = idx[lv == top]
        tau_star[c] = t
        x_star[c] = x[c]

    visit(0, np.arange(count))
    alive = np.arange(count)
    for t in range(1, horizon + 1):
        alive = alive[tau_star[alive] == -1]
        if alive.size == 0:
            break
        x[alive] = _step_np(tr, x[alive], _uniform(keys[alive], 2 * t))
        absorbed = x[alive] == m
        tau_g[alive[absorbed]] = t
        alive = alive[~absorbed]
        visit(t, alive)
    return tau_lv, x_lv, tau_star, x_star, tau_g


# ----------------------------------------------------------------- numba path

if HAVE_NUMBA:
    _mix_nb = njit(inline="always", cache=True)(_mix)

    @njit(inline="always", cache=True)
    def _uniform_nb(key, slot):
        z = _mix_nb(key + np.uint64(slot) * GOLDEN)
        return np.float64(z >> _S11) * _UNIT

    @njit(inline="always", cache=True)
    def _step_nb(indptr, cols, cum, x, u):
        lo = indptr[x]
        hi = indptr[x + 1]
        pos = lo + np.searchsorted(cum[lo:hi], u, side="right")
        if pos > hi - 1:
            pos = hi - 1
        return cols[pos]

    @njit(parallel=True, cache=True)
    def walk_numba(indptr, cols, cum, support, scum, goal, jump, horizon, snap_t, seed, first,
                   tau_g, exit_s, tau1, x1, snaps):
        count = tau_g.shape[0]
        h_jump = jump.shape[0] - 1
        n_snap = snap_t.shape[0]
        seed64 = np.uint64(seed)
        for j in prange(count):
            key = _mix_nb(seed64 ^ _mix_nb(np.uint64(first + j)))
            u = _uniform_nb(key, 0)
            p = np.searchsorted(scum, u, side="right")
            if p > scum.shape[0] - 1:
                p = scum.shape[0] - 1
            x = support[p]
            t1 = -1
            if h_jump >= 0:
                if _uniform_nb(key, 1) < jump[0, x]:
                    t1 = 0
                    x1[j] = x
            sp = 0
            while sp < n_snap and snap_t[sp] == 0:
                snaps[j, sp] = x
                sp += 1
            tg = -1
            if goal[x]:
                tg = 0
            t = 0
            while tg == -1 and t < horizon:
                t += 1
                x = _step_nb(indptr, cols, cum, x, _uniform_nb(key, 2 * t))
                if t1 == -1 and t <= h_jump:
                    if _uniform_nb(key, 2 * t + 1) < jump[t, x]:
                        t1 = t
                        x1[j] = x
                while sp < n_snap and snap_t[sp] == t:
                    snaps[j, sp] = x
                    sp += 1
                if goal[x]:
                    tg = t
                    exit_s[j] = x
            if tg >= 0:
                while sp < n_snap:
                    snaps[j, sp] = x
                    sp += 1
            tau_g[j] = tg
            tau1[j] = t1

    @njit(parallel=True, cache=True)
    def rim_numba(indptr, cols, cum, x0, m, level_of, top, horizon, seed, first,
                  tau_lv, x_lv, tau_star, x_star, tau_g):
        count = tau_g.shape[0]
        seed64 = np.uint64(seed)
        for j in prange(count):
            key = _mix_nb(seed64 ^ _mix_nb(np.uint64(first + j)))
            x = x0
            level = -1
            s0 = -1
            t = 0
            while True:
                if level == -1:
                    if x % 4 == 0:
                        level = 0
                        s0 = x
                        tau_lv[j, 0] = t
                        x_lv[j, 0] = x
                elif level < top:
                    if level_of[(x - s0) % m] == level + 1:
                        level += 1
                        tau_lv[j, level] = t
                        x_lv[j, level] = x
                else:
                    tau_star[j] = t
                    x_star[j] = x
                    break
                if t >= horizon:
                    break
                t += 1
                x = _step_nb(indptr, cols, cum, x, _uniform_nb(key, 2 * t))
                if x == m:
                    tau_g[j] = t
                    break


def walk(tr, support, cum, goal, jump, horizon, snap_t, seed, first, count, use_numba):
    if not use_numba:
        return walk_numpy(tr, support, cum, goal, jump, horizon, snap_t, seed, first, count)
    _apply_thread_cap()
    tau_g = np.full(count, -1, dtype=np.int64)
    exit_s = np.full(count, -1, dtype=np.int64)
    tau1 = np.full(count, -1, dtype=np.int64)
    x1 = np.full(count, -1, dtype=np.int64)
    snaps = np.full((count, len(snap_t)), -1, dtype=np.int64)
    walk_numba(tr.indptr, tr.cols, tr.cum, support, cum, goal, jump, horizon, snap_t,
               seed, first, tau_g, exit_s, tau1, x1, snaps)
    return tau_g, exit_s, tau1, x1, snaps


def rim_walk(tr, x0, m, level_of, top, horizon, seed, first, count, use_numba):
    if not use_numba:
        return rim_numpy(tr, x0, m, level_of, top, horizon, seed, first, count)
    _apply_thread_cap()
    tau_lv = np.full((count, top + 1), -1, dtype=np.int64)
    x_lv = np.full((count, top + 1), -1, dtype=np.int64)
    tau_star = np.full(count, -1, dtype=np.int64)
    x_star = np.full(count, -1, dtype=np.int64)
    tau_g = np.full(count, -1, dtype=np.int64)
    rim_numba(tr.indptr, tr.cols, tr.cum, x0, m, level_of, top, horizon, seed, first,
              tau_lv, x_lv, tau_star, x_star, tau_g)
    return tau_lv, x_lv, tau_star, x_star, tau_g
