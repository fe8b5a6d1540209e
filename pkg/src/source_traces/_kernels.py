"""Compiled per-transition updates.

Every learner is a (value rule, model rule) pair.  ``step`` applies one
transition; ``run`` drives ``step`` over a whole trajectory (plus replay) and
records error checkpoints, so the Python-level API and the experiment runner
share one implementation.

All updates are O(|S|) per transition except the optional transition-model
source learning (O(|S| * out-degree)).  ``S`` and iLSTD's ``A`` are stored in
Fortran order so that columns (source traces) are contiguous.
"""

import numba
import numpy as np

from .schedules import rate_code

# value rules
V_TD0 = 0
V_TD_LAMBDA = 1
V_SOURCE = 2
V_WHITE = 3
V_PRD = 4
V_DECOMP = 5
V_TRIPLE = 6
V_ILSTD_RANDOM = 7
V_ILSTD_GREEDY = 8

# source-model rules
M_NONE = 0
M_FIXED = 1
M_SOURCE = 2
M_SR = 3
M_SOURCE_SR = 4
M_TRANSITION = 5

DIVERGENCE_BOUND = 1e6

_jit = numba.njit(cache=True, nogil=True)


@_jit
def column_update(S, i, j, ratio, lam, gamma, beta):
    # S[:, j] <- (1 - beta) S[:, j] + beta (I[:, j] + gamma lam ratio S[:, i])
    g = beta * gamma * lam * ratio
    keep = 1.0 - beta
    for k in range(S.shape[0]):
        S[k, j] = keep * S[k, j] + g * S[k, i]
    S[j, j] += beta


@_jit
def row_update(S, i, j, lam, gamma, beta):
    # S[i, :] <- (1 - beta) S[i, :] + beta (I[i, :] + gamma lam S[j, :])
    g = beta * gamma * lam
    keep = 1.0 - beta
    for k in range(S.shape[0]):
        S[i, k] = keep * S[i, k] + g * S[j, k]
    S[i, i] += beta


@_jit
def expected_row_update(S, pc, ptot, i, lam, gamma, beta):
    # row update against the expected successor row under the learned P0
    n = S.shape[0]
    acc = np.zeros(n)
    inv = 1.0 / ptot[i]
    for m in range(n):
        w = pc[i, m]
        if w > 0.0:
            w *= inv
            for k in range(n):
                acc[k] += w * S[m, k]
    g = beta * gamma * lam
    keep = 1.0 - beta
    for k in range(n):
        S[i, k] = keep * S[i, k] + g * acc[k]
    S[i, i] += beta


@_jit
def begin(mrule, S, counts, s0, beta):
    """Count the initial state and pull its source trace toward the indicator."""
    counts[s0] += 1
    if mrule == M_SOURCE or mrule == M_SOURCE_SR:
        keep = 1.0 - beta
        for k in range(S.shape[0]):
            S[k, s0] = keep * S[k, s0]
        S[s0, s0] += beta


@_jit
def _row_dot(S, i, x):
    acc = 0.0
    for k in range(x.shape[0]):
        acc += S[i, k] * x[k]
    return acc


@_jit
def _learn_model(mrule, S, counts, pc, ptot, i, j, lam, gamma, beta_col, beta_row, is_cap, row_first):
    if mrule == M_SOURCE or mrule == M_SOURCE_SR:
        ratio = counts[j] / counts[i]
        if ratio > is_cap:
            ratio = is_cap
        if mrule == M_SOURCE_SR and row_first:
            row_update(S, i, j, lam, gamma, beta_row)
            column_update(S, i, j, ratio, lam, gamma, beta_col)
        else:
            column_update(S, i, j, ratio, lam, gamma, beta_col)
            if mrule == M_SOURCE_SR:
                row_update(S, i, j, lam, gamma, beta_row)
    elif mrule == M_SR:
        row_update(S, i, j, lam, gamma, beta_row)
    elif mrule == M_TRANSITION:
        expected_row_update(S, pc, ptot, i, lam, gamma, beta_row)


@_jit
def _learn_reward(r0, rcount, i, r, reward_rate):
    rcount[i] += 1
    if reward_rate > 0.0:
        r0[i] += reward_rate * (r - r0[i])
    else:
        r0[i] += (r - r0[i]) / rcount[i]


@_jit
def step(vrule, mrule, v, S, counts, elig, theta, r0, rcount, pc, ptot, A, b, mu,
         i, r, j, alpha, beta_col, beta_row, lam, gamma, is_cap, row_first,
         reward_rate, picks, learn_model, td_override, td_value):
    """Apply one transition ``i -> j`` with reward ``r``.

    Returns True when an iLSTD coordinate leaves the divergence bound.
    ``td_override`` replaces the sampled TD error by ``td_value`` (value rules
    that use a TD error only).
    """
    n = v.shape[0]
    diverged = False
    if vrule == V_TD0:
        d = td_value if td_override else r + gamma * v[j] - v[i]
        v[i] += alpha * d
    elif vrule == V_TD_LAMBDA:
        d = td_value if td_override else r + gamma * v[j] - v[i]
        decay = gamma * lam
        for k in range(n):
            elig[k] *= decay
        elig[i] += 1.0
        ad = alpha * d
        for k in range(n):
            v[k] += ad * elig[k]
    elif vrule == V_SOURCE:
        d = td_value if td_override else r + gamma * v[j] - v[i]
        ad = alpha * d
        for k in range(n):
            v[k] += ad * S[k, i]
    elif vrule == V_WHITE or vrule == V_PRD:
        if td_override:
            d = td_value
        else:
            d = r + gamma * _row_dot(S, j, theta) - _row_dot(S, i, theta)
        if vrule == V_WHITE:
            theta[i] += alpha * d
        else:
            ad = alpha * d
            for k in range(n):
                theta[k] += ad * S[i, k]
    elif vrule == V_DECOMP:
        if learn_model:
            _learn_reward(r0, rcount, i, r, reward_rate)
    elif vrule == V_TRIPLE:
        if learn_model:
            pc[i, j] += 1.0
            ptot[i] += 1.0
            _learn_reward(r0, rcount, i, r, reward_rate)
        if ptot[i] > 0.0:
            ev = 0.0
            for k in range(n):
                ev += pc[i, k] * v[k]
            d = r0[i] + gamma * ev / ptot[i] - v[i]
            ad = alpha * d
            for k in range(n):
                v[k] += ad * S[k, i]
    else:  # iLSTD with indicator features
        if learn_model:
            d = r + gamma * v[j] - v[i]
            A[i, i] += 1.0
            A[i, j] -= gamma
            b[i] += r
            mu[i] += d  # mu = b - A v, updated for the new sample
        for q in range(picks.shape[0]):
            if vrule == V_ILSTD_GREEDY:
                kk = 0
                best = -1.0
                for k in range(n):
                    a = abs(mu[k])
                    if a > best:
                        best = a
                        kk = k
            else:
                kk = int(picks[q] * n)
                if kk >= n:
                    kk = n - 1
            s = alpha * mu[kk]
            v[kk] += s
            for k in range(n):
                mu[k] -= s * A[k, kk]
            if not abs(v[kk]) <= DIVERGENCE_BOUND:
                diverged = True
    if learn_model:
        counts[j] += 1
        if mrule >= M_SOURCE:
            _learn_model(mrule, S, counts, pc, ptot, i, j, lam, gamma, beta_col, beta_row, is_cap, row_first)
    return diverged


@_jit
def value_estimate(vrule, v, S, theta, r0):
    if vrule == V_WHITE or vrule == V_PRD:
        return S @ theta
    if vrule == V_DECOMP:
        return S @ r0
    return v.copy()


@_jit
def _record(vrule, v, S, theta, r0, v_star, S_star, track_s, verr, serr, c):
    est = value_estimate(vrule, v, S, theta, r0)
    acc = 0.0
    bad = False
    for k in range(est.shape[0]):
        d = est[k] - v_star[k]
        acc += d * d
        if not abs(est[k]) <= DIVERGENCE_BOUND:  # also catches NaN
            bad = True
    verr[c] = np.sqrt(acc)
    if track_s:
        acc = 0.0
        for k in range(S.shape[1]):
            for l in range(S.shape[0]):
                d = S[l, k] - S_star[l, k]
                acc += d * d
        serr[c] = np.sqrt(acc)
    return bad


@_jit
def run(vrule, mrule, v, S, counts, elig, theta, r0, rcount, pc, ptot, A, b, mu,
        states, rewards, step0,
        a_kind, a0, a_p, a_exp, a_ps,
        b_kind, b0, b_p, b_exp, b_ps,
        lam0, lam1, lam_steps, gamma, is_cap, row_first, reward_rate, m,
        replay_k, replay_u, replay_learns_model, picks,
        checkpoints, v_star, S_star, track_s, do_begin):
    """Run a trajectory; returns ``(value_errors, s_errors, divergence_step)``.

    ``step0`` is the number of real steps already taken (global step offset).
    ``checkpoints`` are step counts relative to the start of this call, in
    increasing order.  Replay draws transition ``floor(u * (t + 1))`` from the
    ``t + 1`` transitions seen so far.  ``divergence_step`` is -1 if none.
    """
    horizon = rewards.shape[0]
    nc = checkpoints.shape[0]
    verr = np.full(nc, np.nan)
    serr = np.full(nc, np.nan)
    div_step = -1
    pick_pos = 0
    noop = picks[:0]
    if do_begin:
        bb = rate_code(b_kind, b0, b_p, b_exp, b_ps, 1.0, 1.0)
        begin(mrule, S, counts, states[0], bb)
    c = 0
    while c < nc and checkpoints[c] == 0:
        if _record(vrule, v, S, theta, r0, v_star, S_star, track_s, verr, serr, c):
            div_step = step0
        c += 1
    if div_step >= 0:
        for q in range(nc):
            verr[q] = np.inf
        return verr, serr, div_step
    for t in range(horizon):
        n = float(step0 + t + 1)
        if lam_steps > 0:
            frac = n / lam_steps
            if frac > 1.0:
                frac = 1.0
            lam = lam0 + (lam1 - lam0) * frac
        else:
            lam = lam0
        diverged = False
        for q in range(replay_k + 1):
            if q == 0:
                idx = t
                learn = True
            else:
                idx = int(replay_u[t * replay_k + q - 1] * (t + 1))
                if idx > t:
                    idx = t
                learn = replay_learns_model
            i = states[idx]
            j = states[idx + 1]
            r = rewards[idx]
            ci = float(counts[i])
            alpha = rate_code(a_kind, a0, a_p, a_exp, a_ps, n, ci if ci > 0.0 else 1.0)
            cj = float(counts[j] + 1) if learn else float(counts[j])
            cii = ci + 1.0 if (learn and i == j) else ci
            bc = rate_code(b_kind, b0, b_p, b_exp, b_ps, n, cj if cj > 0.0 else 1.0)
            br = rate_code(b_kind, b0, b_p, b_exp, b_ps, n, cii if cii > 0.0 else 1.0)
            if m > 0 and picks.shape[0] > 0:
                pk = picks[pick_pos:pick_pos + m]
                pick_pos += m
            elif m > 0:
                pk = np.zeros(m)
            else:
                pk = noop
            if step(vrule, mrule, v, S, counts, elig, theta, r0, rcount, pc, ptot, A, b, mu,
                    i, r, j, alpha, bc, br, lam, gamma, is_cap, row_first,
                    reward_rate, pk, learn, False, 0.0):
                diverged = True
        done = t + 1
        while c < nc and checkpoints[c] == done:
            if _record(vrule, v, S, theta, r0, v_star, S_star, track_s, verr, serr, c):
                diverged = True
            c += 1
        if diverged:
            div_step = step0 + done
            for q in range(nc):
                if checkpoints[q] >= done:
                    verr[q] = np.inf
            break
    return verr, serr, div_step
