"""Compiled message-passing kernels for a single chain.

A chain is described by plain arrays so the kernels stay setting-agnostic:

``q``         (K, W) probability that node k is positive given the previous z
``next_z``    (W, 2) state-update table, ``next_z[z, y]``
``init_z``    (2,)   z of the first node for y = 0 and y = 1
``terminal``  (2W,)  likelihood of the evidence given the last node's state
``emission``  (K, 2W) node-local evidence factors, or a (0, 0) array for none

States are ordered y-major: index ``y * W + z``.  Messages are rescaled to
sum 1 at every node; the stripped sums are returned in ``norms``.  Rows are
indexed in place (no per-step views) to keep the per-step constant small.
"""
import math

import numpy as np
from numba import njit

OK = 0
ZERO_FORWARD = 1
ZERO_EVIDENCE = 2


@njit(cache=True)
def fill_transition(T, q, k, next_z):
    """Dense T_{k-1,k}: rows are destination states, columns source states."""
    W = next_z.shape[0]
    T[:, :] = 0.0
    for y in range(2):
        for z in range(W):
            col = y * W + z
            T[next_z[z, 0], col] = 1.0 - q[k, z]
            T[W + next_z[z, 1], col] = q[k, z]


@njit(cache=True)
def fill_factor(rows, vals, q, k, next_z):
    """Nonzeros of the left factor U_{k-1,k}: two per column (y' = 0, 1)."""
    W = next_z.shape[0]
    for z in range(W):
        rows[0, z] = next_z[z, 0]
        rows[1, z] = W + next_z[z, 1]
        vals[0, z] = 1.0 - q[k, z]
        vals[1, z] = q[k, z]


@njit(cache=True)
def _rescale_row(M, k):
    S = M.shape[1]
    s = 0.0
    for i in range(S):
        s += M[k, i]
    if not s > 0.0:
        return 0.0
    inv = 1.0 / s
    for i in range(S):
        M[k, i] *= inv
    return s


@njit(cache=True)
def log_total(norms):
    """log of the product of ``norms`` without per-element logs or underflow."""
    acc = 1.0
    out = 0.0
    for i in range(norms.shape[0]):
        acc *= norms[i]
        if acc < 1e-200 or acc > 1e200:
            out += math.log(acc)
            acc = 1.0
    return out + math.log(acc)


@njit(cache=True)
def forward_into(alpha, norms, q, next_z, init_z, emission, lowrank, T, rows, vals, v):
    """Forward pass writing into preallocated ``alpha`` (zeroed) and ``norms``."""
    K, W = q.shape
    S = 2 * W
    has_em = emission.shape[0] > 0
    alpha[0, init_z[0]] += 1.0 - q[0, 0]
    alpha[0, W + init_z[1]] += q[0, 0]
    if has_em:
        for i in range(S):
            alpha[0, i] *= emission[0, i]
    c = _rescale_row(alpha, 0)
    if c == 0.0:
        return ZERO_FORWARD
    norms[0] = c
    for k in range(1, K):
        if lowrank:
            fill_factor(rows, vals, q, k, next_z)
            # U (V^T mu): V^T folds the y = 1 half onto the y = 0 half
            for z in range(W):
                v[z] = alpha[k - 1, z] + alpha[k - 1, W + z]
            for z in range(W):
                alpha[k, rows[0, z]] += vals[0, z] * v[z]
                alpha[k, rows[1, z]] += vals[1, z] * v[z]
        else:
            fill_transition(T, q, k, next_z)
            for i in range(S):
                acc = 0.0
                for j in range(S):
                    acc += T[i, j] * alpha[k - 1, j]
                alpha[k, i] = acc
        if has_em:
            for i in range(S):
                alpha[k, i] *= emission[k, i]
        c = _rescale_row(alpha, k)
        if c == 0.0:
            return ZERO_FORWARD
        norms[k] = c
    return OK


@njit(cache=True)
def backward_into(beta, norms, q, next_z, terminal, emission, lowrank, T, rows, vals, m):
    """Backward pass writing into preallocated ``beta`` and ``norms``."""
    K, W = q.shape
    S = 2 * W
    has_em = emission.shape[0] > 0
    for i in range(S):
        beta[K - 1, i] = terminal[i]
    c = _rescale_row(beta, K - 1)
    if c == 0.0:
        return ZERO_EVIDENCE
    norms[K - 1] = c
    for k in range(K - 2, -1, -1):
        if has_em:
            for i in range(S):
                m[i] = beta[k + 1, i] * emission[k + 1, i]
        else:
            for i in range(S):
                m[i] = beta[k + 1, i]
        if lowrank:
            fill_factor(rows, vals, q, k + 1, next_z)
            # V (U^T mu): U^T has two nonzeros per column, V copies onto both halves
            for z in range(W):
                u = vals[0, z] * m[rows[0, z]] + vals[1, z] * m[rows[1, z]]
                beta[k, z] = u
                beta[k, W + z] = u
        else:
            fill_transition(T, q, k + 1, next_z)
            for j in range(S):
                acc = 0.0
                for i in range(S):
                    acc += T[i, j] * m[i]
                beta[k, j] = acc
        c = _rescale_row(beta, k)
        if c == 0.0:
            return ZERO_EVIDENCE
        norms[k] = c
    return OK


@njit(cache=True)
def _scratch(W, lowrank):
    S = 2 * W
    T = np.zeros((0, 0)) if lowrank else np.zeros((S, S))
    return T, np.zeros((2, W), dtype=np.int64), np.zeros((2, W)), np.zeros(S)


@njit(cache=True)
def forward(q, next_z, init_z, emission, lowrank):
    """Forward messages; returns (alpha, norms, status)."""
    K, W = q.shape
    alpha = np.zeros((K, 2 * W))
    norms = np.ones(K)
    T, rows, vals, v = _scratch(W, lowrank)
    status = forward_into(alpha, norms, q, next_z, init_z, emission, lowrank, T, rows, vals, v)
    return alpha, norms, status


@njit(cache=True)
def backward(q, next_z, terminal, emission, lowrank):
    """Backward messages; returns (beta, norms, status)."""
    K, W = q.shape
    beta = np.zeros((K, 2 * W))
    norms = np.ones(K)
    T, rows, vals, m = _scratch(W, lowrank)
    status = backward_into(beta, norms, q, next_z, terminal, emission, lowrank, T, rows, vals, m)
    return beta, norms, status


@njit(cache=True)
def beliefs_into(belief, post, alpha, beta):
    """Normalized node beliefs alpha * beta and the per-node P(y = 1)."""
    K, S = alpha.shape
    W = S // 2
    for k in range(K):
        for i in range(S):
            belief[k, i] = alpha[k, i] * beta[k, i]
        if _rescale_row(belief, k) == 0.0:
            return ZERO_EVIDENCE
        acc = 0.0
        for z in range(W):
            acc += belief[k, W + z]
        post[k] = acc
    return OK


@njit(cache=True)
def run(q, next_z, init_z, terminal, emission, lowrank):
    """Full forward/backward pass.

    Returns (belief, posterior, loglik, status); ``belief`` is the (K, 2W)
    normalized node belief table and ``posterior`` its y = 1 marginal.  One
    workspace is shared by both passes.
    """
    K, W = q.shape
    S = 2 * W
    alpha = np.zeros((K, S))
    beta = np.empty((K, S))
    norms = np.ones(K)
    post = np.zeros(K)
    T, rows, vals, scratch = _scratch(W, lowrank)
    status = forward_into(alpha, norms, q, next_z, init_z, emission, lowrank, T, rows, vals, scratch)
    if status != OK:
        return beta, post, -np.inf, status
    contraction = 0.0
    for i in range(S):
        contraction += alpha[K - 1, i] * terminal[i]
    if not contraction > 0.0:
        return beta, post, -np.inf, ZERO_EVIDENCE
    loglik = log_total(norms) + math.log(contraction)
    status = backward_into(beta, norms, q, next_z, terminal, emission, lowrank, T, rows, vals, scratch)
    if status != OK:
        return beta, post, -np.inf, status
    # alpha is consumed in place to hold the beliefs
    status = beliefs_into(alpha, post, alpha, beta)
    return alpha, post, loglik, status


@njit(cache=True)
def run_repeated(q, next_z, init_z, terminal, emission, lowrank, n):
    """Call :func:`run` ``n`` times inside compiled code (timing harness)."""
    acc = 0.0
    for _ in range(n):
        belief, post, loglik, status = run(q, next_z, init_z, terminal, emission, lowrank)
        acc += post[0]
    return acc
