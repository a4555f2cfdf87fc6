"""Compiled batch runners for the policies.

Display sets are bitmasks over item ids.  Choice probabilities come from a
table with one row per mask, filled by calling ``model.probs`` so that the
inverse-CDF sums are the same floats the Python state machines add up.  Each
trial derives its own counter-based stream from ``(base_seed, delta_index,
trial)``, so results do not depend on thread count.
"""

import numpy as np
from numba import config, njit, prange

from .rng import GOLDEN_GAMMA, MASK64, TRIAL_GAMMA

MAX_TABLE_ITEMS = 16

# the bundled TBB is often too old; fall back quietly instead of warning
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

POLICY_CODES = {"ne": 0, "ne-one-by-one": 1, "np": 2, "ne-ranking": 3, "repeated-ne": 4}

_GOLDEN = np.uint64(GOLDEN_GAMMA)
_TRIAL = np.uint64(TRIAL_GAMMA)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV_2_53 = 1.0 / 9007199254740992.0


def probability_table(model):
    """``table[mask, i]`` is the probability of choosing ``i`` from ``mask``."""
    cached = getattr(model, "_prob_table", None)
    if cached is not None:
        return cached
    K = model.n_items
    if K > MAX_TABLE_ITEMS:
        raise ValueError(f"compiled runner supports K <= {MAX_TABLE_ITEMS}, got {K}")
    table = np.zeros((1 << K, K))
    for mask in range(1, 1 << K):
        S = tuple(i for i in range(K) if mask >> i & 1)
        if len(S) >= 2:
            table[mask, list(S)] = model.probs(S)
    try:
        model._prob_table = table
    except AttributeError:
        pass
    return table


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@njit(cache=True)
def _trial_key(base, didx, trial):
    return _mix64(base ^ (np.uint64(didx) * _GOLDEN) ^ (np.uint64(trial) * _TRIAL))


@njit(cache=True)
def _uniform(key, counter):
    z = _mix64(key + np.uint64(counter) * _GOLDEN)
    return float(z >> _S11) * _INV_2_53


@njit(cache=True)
def _sample(table, mask, K, u):
    cum = 0.0
    last = -1
    for i in range(K):
        if (mask >> i) & 1:
            cum += table[mask, i]
            last = i
            if u < cum:
                return i
    return last


@njit(cache=True)
def _rank_active(W, mask, K, buf):
    # insertion sort by descending score; ids enter ascending so ties keep id order
    n = 0
    for i in range(K):
        if (mask >> i) & 1:
            j = n
            while j > 0 and W[buf[j - 1]] < W[i]:
                buf[j] = buf[j - 1]
                j -= 1
            buf[j] = i
            n += 1
    return n


@njit(cache=True)
def _popcount(mask):
    n = 0
    while mask:
        n += mask & 1
        mask >>= 1
    return n


@njit(cache=True)
def _lowest(mask):
    i = 0
    while not (mask >> i) & 1:
        i += 1
    return i


@njit(cache=True)
def _ne(table, K, M, mask, key, state, W, buf, max_steps):
    # state = [t, counter]; returns the survivor or -1 on step overflow
    n = _popcount(mask)
    while n > 1:
        state[0] += 1
        if state[0] > max_steps:
            return -1
        state[1] += 1
        x = _sample(table, mask, K, _uniform(key, state[1]))
        W[x] += 1
        _rank_active(W, mask, K, buf)
        top = 0
        for k in range(1, n):
            top += W[buf[k - 1]]
            if top - k * W[buf[k]] >= M:
                mask = 0
                for j in range(k):
                    mask |= 1 << buf[j]
                n = k
                break
    return _lowest(mask)


@njit(cache=True)
def _ne_one_by_one(table, K, M, key, state, W, buf, max_steps):
    mask = (1 << K) - 1
    n = K
    while n > 1:
        _rank_active(W, mask, K, buf)
        top = 0
        for j in range(n - 1):
            top += W[buf[j]]
        if top - (n - 1) * W[buf[n - 1]] >= M:
            mask &= ~(1 << buf[n - 1])
            n -= 1
            continue
        state[0] += 1
        if state[0] > max_steps:
            return -1
        state[1] += 1
        x = _sample(table, mask, K, _uniform(key, state[1]))
        W[x] += 1
    return _lowest(mask)


@njit(cache=True)
def _np(table, K, M, key, state, W, buf, out, max_steps):
    stack = np.empty(K + 1, np.int64)
    stack[0] = (1 << K) - 1
    sp = 1
    pos = 0
    while sp > 0:
        sp -= 1
        mask = stack[sp]
        n = _popcount(mask)
        if n == 1:
            out[pos] = _lowest(mask)
            pos += 1
            continue
        k = 0
        while k == 0:
            state[0] += 1
            if state[0] > max_steps:
                return False
            state[1] += 1
            x = _sample(table, mask, K, _uniform(key, state[1]))
            W[x] += 1
            _rank_active(W, mask, K, buf)
            for j in range(1, n):
                if W[buf[j - 1]] - W[buf[j]] >= M:
                    k = j
                    break
        high = 0
        for j in range(k):
            high |= 1 << buf[j]
        stack[sp] = mask & ~high
        stack[sp + 1] = high
        sp += 2
    return True


@njit(cache=True)
def _ne_ranking(table, K, M, key, state, W, buf, out, max_steps):
    mask = (1 << K) - 1
    n = K
    pos = 0
    while n > 1:
        state[0] += 1
        if state[0] > max_steps:
            return False
        state[1] += 1
        x = _sample(table, mask, K, _uniform(key, state[1]))
        W[x] += 1
        _rank_active(W, mask, K, buf)
        if W[buf[0]] - W[buf[1]] >= M:
            out[pos] = buf[0]
            pos += 1
            mask &= ~(1 << buf[0])
            n -= 1
    out[pos] = _lowest(mask)
    return True


@njit(cache=True)
def _repeated_ne(table, K, thresholds, key, state, W, buf, out, max_steps):
    mask = (1 << K) - 1
    for j in range(K - 1):
        W[:] = 0
        best = _ne(table, K, thresholds[j], mask, key, state, W, buf, max_steps)
        if best < 0:
            return False
        out[j] = best
        mask &= ~(1 << best)
    out[K - 1] = _lowest(mask)
    return True


@njit(parallel=True, cache=True)
def _run_batch(code, table, K, M, thresholds, base, didx, n_trials, max_steps, taus, outs):
    for tr in prange(n_trials):
        key = _trial_key(base, didx, tr)
        W = np.zeros(K, np.int64)
        buf = np.empty(K, np.int64)
        state = np.zeros(2, np.int64)
        out = outs[tr]
        ok = True
        if code == 0:
            out[0] = _ne(table, K, M, (1 << K) - 1, key, state, W, buf, max_steps)
            ok = out[0] >= 0
        elif code == 1:
            out[0] = _ne_one_by_one(table, K, M, key, state, W, buf, max_steps)
            ok = out[0] >= 0
        elif code == 2:
            ok = _np(table, K, M, key, state, W, buf, out, max_steps)
        elif code == 3:
            ok = _ne_ranking(table, K, M, key, state, W, buf, out, max_steps)
        else:
            ok = _repeated_ne(table, K, thresholds, key, state, W, buf, out, max_steps)
        taus[tr] = state[0] if ok else -1


def run_batch(model, policy, M, base_seed, delta_index, n_trials, thresholds=None,
              max_steps=10**9):
    """Run ``n_trials`` independent trials; returns ``(taus, outputs)``.

    ``outputs[i, 0]`` is the recommended item for selection policies and
    ``outputs[i]`` the full order (best first) for ranking policies.  A
    trial that exceeds ``max_steps`` gets ``tau = -1``.
    """
    code = POLICY_CODES[policy]
    table = probability_table(model)
    K = model.n_items
    th = np.asarray(thresholds if thresholds is not None else [M], dtype=np.int64)
    taus = np.zeros(n_trials, np.int64)
    outs = np.full((n_trials, K), -1, np.int64)
    _run_batch(code, table, K, int(M), th, np.uint64(base_seed & MASK64), int(delta_index),
               int(n_trials), int(max_steps), taus, outs)
    return taus, outs
