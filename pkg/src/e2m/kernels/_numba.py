"""Numba-jitted kernel implementations (default fast path).

Cores and factor stacks arrive as flat float64 buffers with int64 layout
metadata, so every kernel compiles to tight scalar loops.  ``cache=True``
persists the compiled artifacts across processes.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def cp_rank_values(fstack, offsets, idx):
    n, D = idx.shape
    R = fstack.shape[1]
    out = np.ones((n, R), dtype=np.float64)
    for s in range(n):
        for d in range(D):
            row = offsets[d] + idx[s, d]
            for r in range(R):
                out[s, r] *= fstack[row, r]
    return out


@njit(cache=True)
def cp_scatter(n_rows, offsets, idx, wq):
    n, D = idx.shape
    R = wq.shape[1]
    sstack = np.zeros((n_rows, R), dtype=np.float64)
    totals = np.zeros(R, dtype=np.float64)
    for s in range(n):
        for d in range(D):
            row = offsets[d] + idx[s, d]
            for r in range(R):
                sstack[row, r] += wq[s, r]
        for r in range(R):
            totals[r] += wq[s, r]
    return sstack, totals


@njit(cache=True)
def tt_values(buf, dims, offs, idx):
    n, D = idx.shape
    maxr = 1
    for d in range(D):
        if dims[d, 2] > maxr:
            maxr = dims[d, 2]
    out = np.empty(n, dtype=np.float64)
    vec = np.empty(maxr, dtype=np.float64)
    nxt = np.empty(maxr, dtype=np.float64)
    for s in range(n):
        vec[0] = 1.0
        size = 1
        for d in range(D):
            i_ext = dims[d, 1]
            q = dims[d, 2]
            base = offs[d] + idx[s, d] * q
            stride = i_ext * q
            for b in range(q):
                acc = 0.0
                for a in range(size):
                    acc += vec[a] * buf[base + a * stride + b]
                nxt[b] = acc
            for b in range(q):
                vec[b] = nxt[b]
            size = q
        out[s] = vec[0]
    return out


@njit(cache=True)
def tt_stats(buf, dims, offs, idx, w):
    n, D = idx.shape
    maxr = 1
    for d in range(D):
        if dims[d, 0] > maxr:
            maxr = dims[d, 0]
        if dims[d, 2] > maxr:
            maxr = dims[d, 2]
    out = np.zeros(buf.size, dtype=np.float64)
    pref = np.empty((D + 1, maxr), dtype=np.float64)
    sufb = np.empty((D + 1, maxr), dtype=np.float64)
    for s in range(n):
        pref[0, 0] = 1.0
        for d in range(D):
            p = dims[d, 0]
            i_ext = dims[d, 1]
            q = dims[d, 2]
            base = offs[d] + idx[s, d] * q
            stride = i_ext * q
            for b in range(q):
                acc = 0.0
                for a in range(p):
                    acc += pref[d, a] * buf[base + a * stride + b]
                pref[d + 1, b] = acc
        # sufb[d] spans boundary d (size R_{d-1} of core d) and already
        # includes core d, so core d's numerator pairs pref[d] with sufb[d+1]
        sufb[D, 0] = 1.0
        for d in range(D - 1, -1, -1):
            p = dims[d, 0]
            i_ext = dims[d, 1]
            q = dims[d, 2]
            base = offs[d] + idx[s, d] * q
            stride = i_ext * q
            for a in range(p):
                acc = 0.0
                for b in range(q):
                    acc += buf[base + a * stride + b] * sufb[d + 1, b]
                sufb[d, a] = acc
        ws = w[s]
        for d in range(D):
            p = dims[d, 0]
            i_ext = dims[d, 1]
            q = dims[d, 2]
            base = offs[d] + idx[s, d] * q
            stride = i_ext * q
            for a in range(p):
                wa = ws * pref[d, a]
                for b in range(q):
                    pos = base + a * stride + b
                    out[pos] += wa * buf[pos] * sufb[d + 1, b]
    return out
