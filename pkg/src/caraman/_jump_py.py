"""Vectorized numpy implementation of the jump-chain kernel."""

from __future__ import annotations

import numpy as np

from ._rng import draw


def run_jump_chain(cum: np.ndarray, init: np.ndarray, keys: np.ndarray, horizon: float) -> np.ndarray:
    """Terminal states of continuous-time jump chains at ``horizon``.

    Parameters
    ----------
    cum : (S, S) float array
        Row-wise cumulative sums of the event-rate matrix; ``cum[a, -1]`` is
        the event rate of state ``a``.  A diagonal entry is a null event that
        consumes draws but leaves the state unchanged.
    init : (N,) int array
        Starting states.
    keys : (N,) uint64 array
        Per-trial random keys; each jump consumes two draws.
    """
    state = np.array(init, dtype=np.int64)
    exit_rate = cum[:, -1]
    t = np.zeros(state.size)
    counter = np.zeros(state.size, dtype=np.uint64)
    active = np.flatnonzero(exit_rate[state] > 0)
    while active.size:
        u1 = draw(keys[active], counter[active])
        u2 = draw(keys[active], counter[active] + np.uint64(1))
        counter[active] += np.uint64(2)
        rate = exit_rate[state[active]]
        t_next = t[active] + (-np.log(u1)) / rate
        go = t_next <= horizon
        active = active[go]
        t[active] = t_next[go]
        target = u2[go] * rate[go]
        rows = cum[state[active]]
        hit = target[:, None] < rows
        nxt = np.argmax(hit, axis=1)
        # u2 == 1 leaves no strict hit; take the last reachable state
        miss = ~hit.any(axis=1)
        if miss.any():
            for j in np.flatnonzero(miss):
                row = rows[j]
                nxt[j] = int(np.flatnonzero(np.diff(np.concatenate(([0.0], row))) > 0)[-1])
        state[active] = nxt
        active = active[exit_rate[nxt] > 0]
    return state
