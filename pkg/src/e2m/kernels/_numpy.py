"""Pure-numpy kernel implementations (fallback path).

Scatter-adds use ``np.add.at``; everything else is vectorized over the
support.  Semantics match the numba backend up to summation order.
"""

from __future__ import annotations

import numpy as np


def cp_rank_values(fstack, offsets, idx):
    rows = idx + offsets[:-1][None, :]
    return np.prod(fstack[rows], axis=1)


def cp_scatter(n_rows, offsets, idx, wq):
    n, D = idx.shape
    R = wq.shape[1]
    sstack = np.zeros((n_rows, R), dtype=np.float64)
    rows = (idx + offsets[:-1][None, :]).ravel()
    np.add.at(sstack, rows, np.repeat(wq, D, axis=0))
    return sstack, wq.sum(axis=0)


def _gathered(buf, dims, offs, idx):
    from . import unflatten_tt

    cores = unflatten_tt(buf, dims, offs)
    return [core[:, idx[:, d], :] for d, core in enumerate(cores)]


def tt_chain(buf, dims, offs, idx):
    """Prefix and suffix cumulant chains for every support sample.

    Returns (prefixes, suffixes): prefixes[d] is (n, R_d) holding the chain
    through cores 0..d-1; suffixes[d] is (n, R_d) holding the chain through
    cores d..D-1, so prefixes[D][:, 0] == suffixes[0][:, 0] == TT value.
    """
    n, D = idx.shape
    gath = _gathered(buf, dims, offs, idx)
    prefixes = [np.ones((n, 1), dtype=np.float64)]
    for d in range(D):
        prefixes.append(np.einsum("np,pnq->nq", prefixes[d], gath[d]))
    suffixes = [None] * (D + 1)
    suffixes[D] = np.ones((n, 1), dtype=np.float64)
    for d in range(D - 1, -1, -1):
        suffixes[d] = np.einsum("pnq,nq->np", gath[d], suffixes[d + 1])
    return prefixes, suffixes


def tt_values(buf, dims, offs, idx):
    n, D = idx.shape
    gath = _gathered(buf, dims, offs, idx)
    vec = np.ones((n, 1), dtype=np.float64)
    for d in range(D):
        vec = np.einsum("np,pnq->nq", vec, gath[d])
    return vec[:, 0]


def tt_stats(buf, dims, offs, idx, w):
    n, D = idx.shape
    gath = _gathered(buf, dims, offs, idx)
    prefixes, suffixes = tt_chain(buf, dims, offs, idx)
    out = np.zeros_like(buf)
    for d in range(D):
        p, i_ext, q = (int(v) for v in dims[d])
        contrib = (
            w[:, None, None]
            * prefixes[d][:, :, None]
            * gath[d].transpose(1, 0, 2)
            * suffixes[d + 1][:, None, :]
        )
        acc = np.zeros((i_ext, p, q), dtype=np.float64)
        np.add.at(acc, idx[:, d], contrib)
        out[offs[d] : offs[d + 1]] = acc.transpose(1, 0, 2).reshape(-1)
    return out
