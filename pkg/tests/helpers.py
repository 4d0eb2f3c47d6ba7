"""Shared test utilities: dense reference computations and generators.

Everything here is deliberately independent of the package's sparse code
paths: dense joint tensors are built by plain broadcasting and marginalized
with np.sum, so they can serve as oracles for the accumulation kernels and
the closed-form updates.
"""

import numpy as np

from e2m.manybody import CPStats, TTStats, TuckerStats
from e2m.models import CPComponent, TTComponent, TuckerComponent, scale_tt_cores


def dense_q(comp) -> np.ndarray:
    """Joint tensor over (index domain x rank domain) of one component."""
    shape = comp.shape
    D = len(shape)
    if comp.kind == "cp":
        R = comp.rank
        q = np.ones(shape + (R,))
        for d in range(D):
            sh = [1] * (D + 1)
            sh[d] = shape[d]
            sh[D] = R
            q = q * comp.factors[d].reshape(sh)
        return q
    if comp.kind == "tucker":
        ranks = comp.ranks
        q = comp.core.reshape((1,) * D + ranks).copy()
        for d in range(D):
            sh = [1] * (2 * D)
            sh[d] = shape[d]
            sh[D + d] = ranks[d]
            q = q * comp.factors[d].reshape(sh)
        return q
    if comp.kind == "tt":
        cores = comp.cores
        if D == 1:
            return cores[0][0, :, 0].copy()
        ndim = 2 * D - 1
        q = np.ones((1,) * ndim)
        for c in range(D):
            core = cores[c]
            sh = [1] * ndim
            if c == 0:
                sh[0] = core.shape[1]
                sh[D] = core.shape[2]
                q = q * core[0].reshape(sh)
            elif c == D - 1:
                sh[D - 1] = core.shape[1]
                sh[2 * D - 2] = core.shape[0]
                q = q * core[:, :, 0].T.reshape(sh)
            else:
                sh[c] = core.shape[1]
                sh[D + c - 1] = core.shape[0]
                sh[D + c] = core.shape[2]
                q = q * core.transpose(1, 0, 2).reshape(sh)
        return q
    raise ValueError(comp.kind)


def dense_responsibility(T, model, alpha) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense per-support scalars w and the dense joint M per component."""
    t_dense = np.zeros(T.shape)
    for row, weight in zip(T.indices, T.weights):
        t_dense[tuple(row)] = weight
    p_dense = np.zeros(T.shape)
    comp_dense = []
    for eta, comp in zip(model.weights, model.components):
        cd = comp.dense()
        comp_dense.append(cd)
        p_dense += eta * cd
    mask = t_dense > 0
    z = (t_dense[mask] ** alpha * p_dense[mask] ** (1 - alpha)).sum()
    w_dense = np.zeros(T.shape)
    w_dense[mask] = t_dense[mask] ** alpha * p_dense[mask] ** (-alpha) / z
    joints = []
    for eta, comp in zip(model.weights, model.components):
        if comp.kind == "background":
            joints.append(w_dense * eta * comp.value)
            continue
        q = dense_q(comp)
        extra = q.ndim - len(T.shape)
        joints.append(w_dense.reshape(T.shape + (1,) * extra) * eta * q)
    return w_dense, joints


def stats_from_dense_m(kind, shape, ranks, M: np.ndarray):
    """Package statistics objects computed by plain dense marginalization."""
    D = len(shape)
    if kind == "cp":
        margs = [
            M.sum(axis=tuple(j for j in range(D) if j != d)) for d in range(D)
        ]
        totals = M.sum(axis=tuple(range(D)))
        return CPStats(tuple(shape), ranks[0], margs, totals, float(totals.sum()))
    if kind == "tucker":
        core_marg = M.sum(axis=tuple(range(D)))
        fmargs = [
            M.sum(axis=tuple(j for j in range(2 * D) if j not in (d, D + d)))
            for d in range(D)
        ]
        return TuckerStats(
            tuple(shape), tuple(ranks), core_marg, fmargs, float(core_marg.sum())
        )
    if kind == "tt":
        bonds = (1,) + tuple(ranks) + (1,)
        nums = []
        for c in range(D):
            kept_bonds = [D + j - 1 for j in (c, c + 1) if 1 <= j <= D - 1]
            axes = tuple(
                ax for ax in range(M.ndim) if ax != c and ax not in kept_bonds
            )
            marg = M.sum(axis=axes)
            if c == 0:
                marg = marg.reshape(1, shape[0], bonds[1])
            elif c == D - 1:
                marg = marg.T.reshape(bonds[D - 1], shape[D - 1], 1)
            else:
                marg = np.ascontiguousarray(marg.transpose(1, 0, 2))
            nums.append(marg)
        return TTStats(tuple(shape), tuple(ranks), nums, float(nums[-1].sum()))
    raise ValueError(kind)


def cross_entropy_dense(M: np.ndarray, Q: np.ndarray) -> float:
    mask = M > 0
    return float(-(M[mask] * np.log(Q[mask])).sum())


def perturb_component(comp, rng, magnitude=0.1):
    """Random feasible perturbation: jitter all parameters, renormalize."""
    if comp.kind == "cp":
        factors = [
            f * (1.0 + rng.uniform(-magnitude, magnitude, size=f.shape))
            for f in comp.factors
        ]
        tmp = CPComponent(comp.shape, factors)
        scale = tmp.total_mass() ** (-1.0 / len(comp.shape))
        return CPComponent(comp.shape, [f * scale for f in factors])
    if comp.kind == "tucker":
        core = comp.core * (
            1.0 + rng.uniform(-magnitude, magnitude, size=comp.core.shape)
        )
        factors = [
            f * (1.0 + rng.uniform(-magnitude, magnitude, size=f.shape))
            for f in comp.factors
        ]
        factors = [f / f.sum(axis=0, keepdims=True) for f in factors]
        return TuckerComponent(comp.shape, core / core.sum(), factors)
    if comp.kind == "tt":
        cores = [
            c * (1.0 + rng.uniform(-magnitude, magnitude, size=c.shape))
            for c in comp.cores
        ]
        return TTComponent(comp.shape, scale_tt_cores(cores))
    raise ValueError(comp.kind)


def half_moons(n, noise, rng):
    """Two interleaving half circles with binary labels."""
    n_upper = n // 2
    n_lower = n - n_upper
    t_upper = rng.uniform(0.0, np.pi, n_upper)
    t_lower = rng.uniform(0.0, np.pi, n_lower)
    upper = np.column_stack([np.cos(t_upper), np.sin(t_upper)])
    lower = np.column_stack([1.0 - np.cos(t_lower), 0.5 - np.sin(t_lower)])
    points = np.vstack([upper, lower]) + rng.normal(0.0, noise, (n, 2))
    labels = np.concatenate(
        [np.zeros(n_upper, dtype=np.int64), np.ones(n_lower, dtype=np.int64)]
    )
    return points, labels


def discretize_moons(points, labels, bins):
    """Fixed-grid discretization onto a (bins, bins, 2) index domain."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    grid = np.floor((points - lo) / (hi - lo + 1e-12) * bins).astype(np.int64)
    grid = np.clip(grid, 0, bins - 1)
    return np.column_stack([grid, labels])


def classical_em_cp_step(t_dense: np.ndarray, factors):
    """One textbook EM iteration for CP at alpha=1, computed densely."""
    D = t_dense.ndim
    shape = t_dense.shape
    R = factors[0].shape[1]
    q = np.ones(shape + (R,))
    for d in range(D):
        sh = [1] * (D + 1)
        sh[d] = shape[d]
        sh[D] = R
        q = q * factors[d].reshape(sh)
    p = q.sum(axis=-1)
    ratio = np.zeros(shape)
    mask = t_dense > 0
    ratio[mask] = t_dense[mask] / p[mask]
    M = ratio[..., None] * q
    mu = M.sum()
    totals = M.sum(axis=tuple(range(D)))
    updated = []
    for d in range(D):
        marg = M.sum(axis=tuple(j for j in range(D) if j != d))
        updated.append(marg / (mu ** (1.0 / D) * totals ** (1.0 - 1.0 / D)))
    return updated


def kl_dense(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * (np.log(p[mask]) - np.log(q[mask]))).sum())
