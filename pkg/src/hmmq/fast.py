"""Fused, compiled version of one HMM Q-learning step.

Performs exactly the sequence of :func:`hmmq.estimators.algorithm1_step`
on raw arrays, in place, without per-operation Python overhead. The numpy
operations in :mod:`hmmq.filter` and :mod:`hmmq.estimators` are the
reference; ``tests/test_fast.py`` holds the two paths together.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .estimators import Session
from .params import _clip_vectors
from .pomdp import ExtendedObs

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _softmax_rows(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        m = x[i].max()
        tot = 0.0
        for j in range(x.shape[1]):
            out[i, j] = math.exp(x[i, j] - m)
            tot += out[i, j]
        for j in range(x.shape[1]):
            out[i, j] /= tot
    return out


@njit(cache=True)
def fused_step(o, a, r, mu_oa, vec, I, J, K, lo, hi, u, omega, p_prev, r_q, a_q, a_t,
               q, t, eps, gamma, q_lo, q_hi, t_literal):
    """Advance every estimator by one observation; returns ``log(b^T u)``.

    Mutates ``vec``, ``u``, ``omega``, ``p_prev``, ``q`` and ``t``. The Q
    update uses ``(r_q, a_q)`` and the joint-table update slice ``a_t``.
    """
    L = vec.shape[0]
    off_o = I * I
    off_r = off_o + I * J
    P = _softmax_rows(vec[:off_o].copy().reshape((I, I)))
    O = _softmax_rows(vec[off_o:off_r].copy().reshape((I, J)))
    sig = vec[L - 1]

    resid = np.empty(I)
    logb = np.empty(I)
    for i in range(I):
        resid[i] = r - vec[off_r + a * I + i]
        logb[i] = (math.log(O[i, o]) + math.log(mu_oa) - _LOG_SQRT_2PI - math.log(sig)
                   - 0.5 * resid[i] * resid[i] / (sig * sig))
    shift = logb.max()
    b = np.exp(logb - shift)
    c = 0.0
    for i in range(I):
        c += b[i] * u[i]
    if not c > 0.0:
        raise FloatingPointError("non-positive predicted likelihood")
    ll = shift + math.log(c)
    v = b * u / c

    # per-state factors of the emission derivative, divided by b_i
    d_r = resid / (sig * sig)
    d_sig = resid * resid / (sig * sig * sig) - 1.0 / sig

    S = np.zeros(L)
    for l in range(L):
        acc = 0.0
        for i in range(I):
            acc += b[i] * omega[i, l]
        S[l] = acc / c
    for i in range(I):
        for j in range(J):
            S[off_o + i * J + j] += v[i] * ((1.0 if j == o else 0.0) - O[i, j])
        S[off_r + a * I + i] += v[i] * d_r[i]
        S[L - 1] += v[i] * d_sig[i]

    M = np.empty((I, L))
    for i in range(I):
        for l in range(L):
            M[i, l] = b[i] * omega[i, l] / c - v[i] * S[l]
        for j in range(J):
            M[i, off_o + i * J + j] += v[i] * ((1.0 if j == o else 0.0) - O[i, j])
        M[i, off_r + a * I + i] += v[i] * d_r[i]
        M[i, L - 1] += v[i] * d_sig[i]

    for jj in range(I):
        for l in range(L):
            acc = 0.0
            for i in range(I):
                acc += P[i, jj] * M[i, l]
            omega[jj, l] = acc
        for i in range(I):
            w = v[i]
            for k in range(I):
                omega[jj, i * I + k] += w * P[i, k] * ((1.0 if jj == k else 0.0) - P[i, jj])
    for jj in range(I):
        acc = 0.0
        for i in range(I):
            acc += P[i, jj] * v[i]
        u[jj] = acc

    for l in range(L):
        x = vec[l] + eps * S[l]
        vec[l] = min(max(x, lo[l]), hi[l])

    # Q column a_q, targets taken before the update
    target = np.empty(I)
    for j in range(I):
        target[j] = r_q + gamma * q[j].max()
    for i in range(I):
        acc = 0.0
        rowsum = 0.0
        for j in range(I):
            pij = p_prev[i] * v[j]
            acc += pij * target[j]
            rowsum += pij
        x = q[i, a_q] + eps * (acc - rowsum * q[i, a_q])
        q[i, a_q] = min(max(x, q_lo), q_hi)

    eps_t = min(eps, 1.0)
    for i in range(I):
        for j in range(I):
            pij = p_prev[i] * v[j]
            if t_literal:
                t[i, a_t, j] += eps_t * pij * (1.0 - t[i, a_t, j])
            else:
                t[i, a_t, j] += eps_t * (pij - t[i, a_t, j])

    for i in range(I):
        p_prev[i] = v[i]
    return ll


def fast_step(session: Session, y: ExtendedObs) -> Session:
    """Drop-in replacement for ``algorithm1_step`` backed by :func:`fused_step`."""
    cfg = session.settings
    lay = session.layout
    eps = session.next_epsilon()
    lo, hi = _clip_vectors(tuple(lay), cfg.bounds)
    if cfg.q_timing == "alg1":
        r_q, a_q = session.r_prev, session.a_prev
    else:
        r_q, a_q = y.reward, y.action
    q_lo, q_hi = cfg.q_limits
    ll = fused_step(int(y.obs), int(y.action), float(y.reward), float(cfg.policy.mu[y.obs, y.action]),
                    session.theta.vec, lay.I, lay.J, lay.K, lo, hi,
                    session.filter.u, session.filter.omega, session.p_prev,
                    float(r_q), int(a_q), int(session.a_prev), session.q, session.t,
                    eps, cfg.gamma, q_lo, q_hi, cfg.t_mode == "literal")
    session.r_prev, session.a_prev = float(y.reward), int(y.action)
    session.last_log_likelihood = ll
    session.last_posterior = session.p_prev.copy()
    session.n += 1
    return session
