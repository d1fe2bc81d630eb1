"""Compiled inner loops for the streaming filters.

Every kernel processes one chunk of records, mutates the state array in
place and writes snapshots of the state at global steps divisible by
``log_every`` into ``log_out``.  Kernels return ``-1`` on success or the
global step at which the divergence guard fired.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GUARD = 1e12


@njit(cache=True, nogil=True)
def _sort_rows(rows, out):
    # insertion sort on lexicographic row order; +0.0 folds negative zero
    L, D = rows.shape
    order = np.arange(L)
    for i in range(1, L):
        j = i
        while j > 0:
            a = order[j - 1]
            b = order[j]
            swap = False
            for c in range(D):
                if rows[a, c] < rows[b, c]:
                    break
                if rows[a, c] > rows[b, c]:
                    swap = True
                    break
            if not swap:
                break
            order[j - 1] = b
            order[j] = a
            j -= 1
    for i in range(L):
        for c in range(D):
            out[i, c] = rows[order[i], c] + 0.0


@njit(cache=True, nogil=True)
def _sort1d(src, dst):
    L = src.shape[0]
    for i in range(L):
        v = src[i] + 0.0
        j = i
        while j > 0 and dst[j - 1] > v:
            dst[j] = dst[j - 1]
            j -= 1
        dst[j] = v


@njit(cache=True, nogil=True)
def _esp(y_sorted, e):
    # e[0..L] elementary symmetric values, one member at a time
    L = y_sorted.shape[0]
    e[:] = 0.0
    e[0] = 1.0
    for i in range(L):
        top = i + 1 if i + 1 < L else L
        for l in range(top, 0, -1):
            e[l] += y_sorted[i] * e[l - 1]


@njit(cache=True, nogil=True)
def _conv_blocks(rows_sorted, blk_off, z):
    # z[blk_off[l-1]:blk_off[l]] holds the degree-l block
    L, D = rows_sorted.shape
    z[:] = 0.0
    for i in range(L):
        top = i + 1 if i + 1 < L else L
        for l in range(top, 1, -1):
            p0 = blk_off[l - 2]
            plen = blk_off[l - 1] - p0
            c0 = blk_off[l - 1]
            for a in range(plen):
                pa = z[p0 + a]
                if pa != 0.0:
                    for b in range(D):
                        z[c0 + a + b] += pa * rows_sorted[i, b]
        for b in range(D):
            z[b] += rows_sorted[i, b]


@njit(cache=True, nogil=True)
def transform_batch(Y, blk_off):
    """Full transform of every record; ``Y`` has shape (n, L, D)."""
    n, L, D = Y.shape
    out = np.empty((n, blk_off[L]))
    rows = np.empty((L, D))
    for k in range(n):
        _sort_rows(Y[k], rows)
        _conv_blocks(rows, blk_off, out[k])
    return out


@njit(cache=True, nogil=True)
def esp_batch(Y):
    """Elementary symmetric values e_1..e_L of every row of ``Y`` (n, L)."""
    n, L = Y.shape
    out = np.empty((n, L))
    e = np.empty(L + 1)
    ys = np.empty(L)
    for k in range(n):
        _sort1d(Y[k], ys)
        _esp(ys, e)
        out[k] = e[1:]
    return out


@njit(cache=True, nogil=True)
def sym_scalar_run(psi, Y, lam, eps, k0, log_every, log_out):
    n, L = Y.shape
    e = np.empty(L + 1)
    ys = np.empty(L)
    nlog = 0
    for k in range(n):
        _sort1d(Y[k], ys)
        _esp(ys, e)
        a = 1.0
        p = psi[k]
        for l in range(L):
            a *= p
            lam[l] += eps * a * (e[l + 1] - a * lam[l])
            v = lam[l]
            if not (abs(v) <= GUARD):
                return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = lam
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def sym_vector_dense_run(psi, Y, eta, eta_off, blk_off, parent, last, eps, k0, log_every, log_out):
    """Symmetric LMS on monomial coordinates with a fresh input matrix per record.

    ``parent``/``last`` are concatenated per degree (aligned with ``eta``):
    column ``mu`` of degree l is column ``parent`` of degree l-1 convolved
    with column ``last`` of the input.
    """
    n, L, D = Y.shape
    rows = np.empty((L, D))
    z = np.empty(blk_off[L])
    maxlen = blk_off[L] - blk_off[L - 1]
    A = np.zeros((eta_off[L], maxlen))
    r = np.empty(maxlen)
    nlog = 0
    for k in range(n):
        _sort_rows(Y[k], rows)
        _conv_blocks(rows, blk_off, z)
        P = psi[k]
        for l in range(1, L + 1):
            c0 = eta_off[l - 1]
            c1 = eta_off[l]
            ln = blk_off[l] - blk_off[l - 1]
            # build design columns for this degree
            for c in range(c0, c1):
                q = last[c]
                if l == 1:
                    for m in range(D):
                        A[c, m] = P[m, q]
                else:
                    pc = eta_off[l - 2] + parent[c]
                    pl = ln - (D - 1)
                    for m in range(ln):
                        A[c, m] = 0.0
                    for a in range(pl):
                        pa = A[pc, a]
                        for b in range(D):
                            A[c, a + b] += pa * P[b, q]
            b0 = blk_off[l - 1]
            for m in range(ln):
                r[m] = z[b0 + m]
            for c in range(c0, c1):
                ec = eta[c]
                for m in range(ln):
                    r[m] -= A[c, m] * ec
            for c in range(c0, c1):
                acc = 0.0
                for m in range(ln):
                    acc += A[c, m] * r[m]
                eta[c] += eps * acc
                if not (abs(eta[c]) <= GUARD):
                    return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = eta
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def sym_vector_fixed_run(Y, eta, eta_off, blk_off, colptr, rowidx, vals, eps, k0, log_every, log_out):
    """Symmetric LMS on monomial coordinates with a constant input matrix.

    The design matrices are stored column-compressed: entries of column
    ``c`` (global monomial index) are ``rowidx/vals[colptr[c]:colptr[c+1]]``
    with rows relative to the block.
    """
    n, L, D = Y.shape
    rows = np.empty((L, D))
    z = np.empty(blk_off[L])
    nlog = 0
    for k in range(n):
        _sort_rows(Y[k], rows)
        _conv_blocks(rows, blk_off, z)
        for l in range(1, L + 1):
            c0 = eta_off[l - 1]
            c1 = eta_off[l]
            b0 = blk_off[l - 1]
            # z becomes the residual in place
            for c in range(c0, c1):
                ec = eta[c]
                for t in range(colptr[c], colptr[c + 1]):
                    z[b0 + rowidx[t]] -= vals[t] * ec
            for c in range(c0, c1):
                acc = 0.0
                for t in range(colptr[c], colptr[c + 1]):
                    acc += vals[t] * z[b0 + rowidx[t]]
                eta[c] += eps * acc
                if not (abs(eta[c]) <= GUARD):
                    return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = eta
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def direct_sgd_run(psi, Y, theta, eps, k0, log_every, log_out):
    """Gradient descent on sum_l (z_l - psi^l e_l(theta))^2 for scalar members."""
    n, L = Y.shape
    z = np.empty(L + 1)
    e = np.empty(L + 1)
    ex = np.empty(L)
    ys = np.empty(L)
    r = np.empty(L)
    grad = np.empty(L)
    nlog = 0
    for k in range(n):
        _sort1d(Y[k], ys)
        _esp(ys, z)
        _esp(theta, e)
        p = psi[k]
        a = 1.0
        for l in range(L):
            a *= p
            r[l] = a * (z[l + 1] - a * e[l + 1])  # psi^l times residual
        for j in range(L):
            # e_m of theta without member j, by deflation
            ex[0] = 1.0
            for m in range(1, L):
                ex[m] = e[m] - theta[j] * ex[m - 1]
            acc = 0.0
            for l in range(L):
                acc += r[l] * ex[l]
            grad[j] = -2.0 * acc
        for j in range(L):
            theta[j] -= eps * grad[j]
            if not (abs(theta[j]) <= GUARD):
                return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = theta
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def rem_run(psi, Y, theta, perms, logprior, noise_kind, noise_param, eps, k0, log_every, log_out):
    """Recursive EM over all permutations; ``noise_kind`` 0 Gaussian, 1 Laplacian.

    ``noise_param`` is the assumed standard deviation.
    """
    n, L, D = Y.shape
    X = perms.shape[0]
    pred = np.empty((L, D))
    ll = np.empty(X)
    grad = np.empty((L, D))
    s = np.empty(D)
    if noise_kind == 0:
        inv = 1.0 / (noise_param * noise_param)
    else:
        inv = np.sqrt(2.0) / noise_param
    nlog = 0
    for k in range(n):
        P = psi[k]
        for j in range(L):
            for a in range(D):
                acc = 0.0
                for b in range(D):
                    acc += P[a, b] * theta[j, b]
                pred[j, a] = acc
        mx = -np.inf
        for i in range(X):
            acc = 0.0
            for l in range(L):
                j = perms[i, l]
                for a in range(D):
                    d = Y[k, l, a] - pred[j, a]
                    if noise_kind == 0:
                        acc -= 0.5 * d * d * inv
                    else:
                        acc -= abs(d) * inv
            ll[i] = acc + logprior[i]
            if ll[i] > mx:
                mx = ll[i]
        tot = 0.0
        for i in range(X):
            ll[i] = np.exp(ll[i] - mx)
            tot += ll[i]
        grad[:, :] = 0.0
        for i in range(X):
            w = ll[i] / tot
            for l in range(L):
                j = perms[i, l]
                for a in range(D):
                    d = Y[k, l, a] - pred[j, a]
                    if noise_kind == 0:
                        s[a] = d * inv
                    else:
                        s[a] = (1.0 if d > 0 else (-1.0 if d < 0 else 0.0)) * inv
                # psi^T s
                for b in range(D):
                    acc = 0.0
                    for a in range(D):
                        acc += P[a, b] * s[a]
                    grad[j, b] += w * acc
        for j in range(L):
            for b in range(D):
                theta[j, b] += eps * grad[j, b]
                if not (abs(theta[j, b]) <= GUARD):
                    return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = theta.ravel()
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def classical_run(psi, Y, theta, eps, k0, log_every, log_out):
    """Labeled LMS; ``Y[k, l]`` must belong to system ``l``."""
    n, L, D = Y.shape
    r = np.empty(D)
    nlog = 0
    for k in range(n):
        P = psi[k]
        for l in range(L):
            for a in range(D):
                acc = Y[k, l, a]
                for b in range(D):
                    acc -= P[a, b] * theta[l, b]
                r[a] = acc
            for b in range(D):
                acc = 0.0
                for a in range(D):
                    acc += P[a, b] * r[a]
                theta[l, b] += eps * acc
                if not (abs(theta[l, b]) <= GUARD):
                    return k0 + k + 1
        g = k0 + k + 1
        if log_every > 0 and g % log_every == 0:
            log_out[nlog] = theta.ravel()
            nlog += 1
    return -1


@njit(cache=True, nogil=True)
def markov_path(start, cum, u):
    """Chain path driven by uniforms ``u``; ``cum`` holds row-wise cumulative transitions.

    Returns the state after each transition (length ``len(u)``).
    """
    n = u.shape[0]
    m = cum.shape[1]
    out = np.empty(n, dtype=np.int64)
    s = start
    for k in range(n):
        x = u[k]
        nxt = m - 1
        for j in range(m):
            if x < cum[s, j]:
                nxt = j
                break
        s = nxt
        out[k] = s
    return out
