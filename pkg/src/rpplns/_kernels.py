"""Compiled inner loops for the turn-process and hopping simulations.

The turn kernel models a queue of length Q feeding a bag of capacity
N - Q, which covers RPPLNS (Q = 0), PPLNS (Q = N) and the hybrids. Shares are
tracked individually so lifetimes and per-share revenue can be measured. Bag
slots are kept partitioned with m1's shares first, so a uniform draw ``u``
evicts slot ``floor(u * cap)`` exactly as :func:`rpplns.protocol.kick_owner`
does on count vectors.

Every turn consumes one row ``(u_owner, u_block, u_kick)`` of uniforms.
"""

import numpy as np
from numba import njit

# istate layout
Q_START, Q_FILL, Q_M1, B_FILL, B_M1, PUSHES, TAGGED_LIVE, N_LIFE = range(8)
ISTATE_SIZE = 8

# acc layout
(R_SUM, R_SUMSQ, R_N, X_SUM, X_SUMSQ, X_N, Z_SUM, Z_SUMSQ, BUDGET_DEV,
 OCC_SUM, OCC_SUMSQ) = range(11)
ACC_SIZE = 11


@njit(cache=True)
def _finalize(tag, birth, cbirth, push, C, istate, acc, lifetimes):
    if not tag:
        return
    z = push - birth
    x = C - cbirth
    acc[X_SUM] += x
    acc[X_SUMSQ] += x * x
    acc[X_N] += 1.0
    acc[Z_SUM] += z
    acc[Z_SUMSQ] += z * z
    n = istate[N_LIFE]
    if n < lifetimes.shape[0]:
        lifetimes[n] = z
    istate[N_LIFE] = n + 1
    istate[TAGGED_LIVE] -= 1


@njit(cache=True)
def _bag_move(src, dst, b_owner, b_birth, b_cbirth, b_tag):
    b_owner[dst] = b_owner[src]
    b_birth[dst] = b_birth[src]
    b_cbirth[dst] = b_cbirth[src]
    b_tag[dst] = b_tag[src]


@njit(cache=True)
def turn_chain(u, t0, turns, burn_in, alpha, beta, inv_D, Q, cap,
               q_owner, q_birth, q_cbirth, q_tag,
               b_owner, b_birth, b_cbirth, b_tag,
               istate, fstate, acc, hist, lifetimes, trace_reward, trace_held):
    """Advance the honest turn process over the rows of ``u``.

    Returns the number of rows consumed; fewer than ``len(u)`` once the run
    is past ``turns`` and every tagged share has been evicted.
    """
    ab = alpha + beta
    n_rows = u.shape[0]
    for i in range(n_rows):
        t = t0 + i
        if t >= turns and istate[TAGGED_LIVE] == 0:
            return i
        x0 = u[i, 0]
        if x0 < alpha:
            owner = 1
        elif x0 < ab:
            owner = 2
        else:
            owner = 0
        is_block = u[i, 1] < inv_D
        in_window = t >= burn_in and t < turns
        reward = 0.0
        C = fstate[0]

        if owner != 0:
            push = istate[PUSHES]
            istate[PUSHES] = push + 1
            tag = owner == 1 and in_window
            if tag:
                istate[TAGGED_LIVE] += 1
            c_owner = owner
            c_birth = push
            c_cbirth = C
            c_tag = tag
            carry = True
            if Q > 0:
                if istate[Q_FILL] < Q:
                    pos = (istate[Q_START] - 1) % Q
                    istate[Q_FILL] += 1
                    carry = False
                else:
                    pos = (istate[Q_START] + Q - 1) % Q
                    c_owner = q_owner[pos]
                    c_birth = q_birth[pos]
                    c_cbirth = q_cbirth[pos]
                    c_tag = q_tag[pos]
                    if c_owner == 1:
                        istate[Q_M1] -= 1
                q_owner[pos] = owner
                q_birth[pos] = push
                q_cbirth[pos] = C
                q_tag[pos] = tag
                istate[Q_START] = pos
                if owner == 1:
                    istate[Q_M1] += 1

            if carry:
                fill = istate[B_FILL]
                m1 = istate[B_M1]
                if cap == 0:
                    _finalize(c_tag, c_birth, c_cbirth, push, C, istate, acc, lifetimes)
                elif fill < cap:
                    if c_owner == 1:
                        if m1 < fill:
                            _bag_move(m1, fill, b_owner, b_birth, b_cbirth, b_tag)
                        dst = m1
                        istate[B_M1] = m1 + 1
                    else:
                        dst = fill
                    istate[B_FILL] = fill + 1
                    b_owner[dst] = c_owner
                    b_birth[dst] = c_birth
                    b_cbirth[dst] = c_cbirth
                    b_tag[dst] = c_tag
                else:
                    j = int(u[i, 2] * cap)
                    if j >= cap:
                        j = cap - 1
                    _finalize(b_tag[j], b_birth[j], b_cbirth[j], push, C, istate, acc, lifetimes)
                    victim_m1 = j < m1
                    if victim_m1 == (c_owner == 1):
                        dst = j
                    elif victim_m1:
                        _bag_move(m1 - 1, j, b_owner, b_birth, b_cbirth, b_tag)
                        dst = m1 - 1
                        istate[B_M1] = m1 - 1
                    else:
                        _bag_move(m1, j, b_owner, b_birth, b_cbirth, b_tag)
                        dst = m1
                        istate[B_M1] = m1 + 1
                    b_owner[dst] = c_owner
                    b_birth[dst] = c_birth
                    b_cbirth[dst] = c_cbirth
                    b_tag[dst] = c_tag

            if is_block:
                held = istate[Q_FILL] + istate[B_FILL]
                mine = istate[Q_M1] + istate[B_M1]
                pay = mine / held
                fstate[0] = C + 1.0 / held
                dev = abs(pay + (held - mine) / held - 1.0)
                if dev > acc[BUDGET_DEV]:
                    acc[BUDGET_DEV] = dev
                if in_window:
                    reward = pay

        held_m1 = istate[Q_M1] + istate[B_M1]
        if in_window:
            acc[R_SUM] += reward
            acc[R_SUMSQ] += reward * reward
            acc[R_N] += 1.0
            acc[OCC_SUM] += held_m1
            acc[OCC_SUMSQ] += held_m1 * held_m1
            hist[held_m1] += 1
        if t < trace_reward.shape[0]:
            trace_reward[t] = reward
            trace_held[t] = held_m1
    return n_rows


@njit(cache=True)
def bag_events(N, ell, hopper, block, u_kick):
    """Feed pushes into a full two-owner bag; returns (hopper reward, ell)."""
    reward = 0.0
    for i in range(hopper.shape[0]):
        j = int(u_kick[i] * N)
        if j >= N:
            j = N - 1
        kicked_hopper = j < ell
        if hopper[i]:
            if not kicked_hopper:
                ell += 1
        elif kicked_hopper:
            ell -= 1
        if block[i]:
            reward += ell / N
    return reward, ell


@njit(cache=True)
def bag_drain(N, inv_D, ell, u):
    """Honest-only pushes until the hopper holds nothing.

    Returns ``(reward, ell, rows_used)``.
    """
    reward = 0.0
    for i in range(u.shape[0]):
        if ell == 0:
            return reward, ell, i
        j = int(u[i, 0] * N)
        if j >= N:
            j = N - 1
        if j < ell:
            ell -= 1
        if u[i, 1] < inv_D:
            reward += ell / N
    return reward, ell, u.shape[0]


def warm_up():
    """Compile the kernels once, before any worker processes fork."""
    z8 = np.zeros(1, np.int8)
    zi = np.zeros(1, np.int64)
    zf = np.zeros(1, np.float64)
    zb = np.zeros(1, np.bool_)
    turn_chain(np.zeros((1, 3)), 0, 1, 0, 0.5, 0.5, 0.5, 0, 1,
               z8, zi, zf, zb, z8.copy(), zi.copy(), zf.copy(), zb.copy(),
               np.zeros(ISTATE_SIZE, np.int64), np.zeros(1), np.zeros(ACC_SIZE),
               np.zeros(2, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))
    bag_events(2, 1, zb, zb.copy(), zf)
    bag_drain(2, 0.5, 1, np.zeros((1, 2)))
