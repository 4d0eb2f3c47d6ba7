"""Combined E1+E2 responsibility statistics and closed-form M-step solvers.

The responsibility tensor is never materialized: every update needs only a
per-support scalar ``w_i = T_i^a * P_i^(-a) / Z`` (with ``Z`` the power sum
computed in the log domain) and per-component marginal sums of
``w_i * eta_k * Q_k``.  Those marginals drive the closed-form factor
updates, which return components that are exactly normalized distributions.

Per-sample contributions are accumulated over the lexicographically sorted
support with fixed chunking, so traces are reproducible run to run for a
given kernel backend.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .divergence import check_alpha
from .errors import DomainError, InternalError
from .models import (
    CPComponent,
    Component,
    MixtureModel,
    TTComponent,
    TuckerComponent,
)
from .tensors import DenseTensor, EmpiricalTensor

logger = logging.getLogger("e2m.manybody")

DEAD_RANK_TOL = 1e-15
DEAD_RANK_SCALE = 1e-12
WEIGHT_FLOOR = 1e-15
RANK_ENUM_GUARD = 4096
_CHUNK = 4096


@dataclass(frozen=True)
class Responsibilities:
    """Support-level scalars of the combined E1+E2 step.

    ``weights[i] * eta_k * Q_k`` reproduces the responsibility tensor
    entry for component k at support index i without enumerating ranks.
    ``total`` is sum_i weights[i] * P_i, which equals one up to roundoff.
    """

    weights: np.ndarray
    log_norm: float
    mixture_values: np.ndarray
    total: float


@dataclass(frozen=True)
class CPStats:
    shape: tuple[int, ...]
    rank: int
    mode_marginals: list[np.ndarray]
    rank_totals: np.ndarray
    mass: float


@dataclass(frozen=True)
class TuckerStats:
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    core_marginal: np.ndarray
    factor_marginals: list[np.ndarray]
    mass: float


@dataclass(frozen=True)
class TTStats:
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    numerators: list[np.ndarray]
    mass: float


@dataclass(frozen=True)
class BackgroundStats:
    shape: tuple[int, ...]
    mass: float


ComponentStats = CPStats | TuckerStats | TTStats | BackgroundStats


@dataclass(frozen=True)
class SufficientStats:
    per_component: list[ComponentStats]

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass for s in self.per_component])


def evaluate_support(T: EmpiricalTensor, model: MixtureModel):
    """Evaluate all components on the support, keeping reusable intermediates.

    Returns (component value arrays, mixture values, per-component cache).
    """
    idx = T.indices
    values = []
    cache: dict[int, object] = {}
    for k, comp in enumerate(model.components):
        if comp.kind == "cp":
            fstack, offsets = kernels.stack_cp(comp.factors)
            rank_values = kernels.cp_rank_values(fstack, offsets, idx)
            cache[k] = rank_values
            values.append(rank_values.sum(axis=1))
        elif comp.kind == "tt":
            packed = kernels.flatten_tt(comp.cores)
            cache[k] = packed
            values.append(kernels.tt_values(*packed, idx))
        else:
            values.append(comp.values_at(idx))
    mixture = np.zeros(T.nnz)
    for eta, v in zip(model.weights, values):
        if eta > 0:
            mixture += eta * v
    return values, mixture, cache


def _tucker_stats(
    comp: TuckerComponent, idx: np.ndarray, w_eta: np.ndarray
) -> TuckerStats:
    """Per-sample enumeration of the rank domain, bounded by the core guard."""
    comp.validate_guards()
    ranks = comp.ranks
    D = len(ranks)
    core_marginal = np.zeros(ranks)
    factor_marginals = [np.zeros((i, r)) for i, r in zip(comp.shape, ranks)]
    n = idx.shape[0]
    for start in range(0, n, _CHUNK):
        rows = slice(start, min(start + _CHUNK, n))
        nc = rows.stop - rows.start
        E = w_eta[rows].reshape((nc,) + (1,) * D) * comp.core[None]
        for d in range(D):
            gathered = comp.factors[d][idx[rows, d]]
            E = E * gathered.reshape(
                (nc,) + (1,) * d + (ranks[d],) + (1,) * (D - 1 - d)
            )
        core_marginal += E.sum(axis=0)
        for d in range(D):
            other = tuple(1 + j for j in range(D) if j != d)
            np.add.at(factor_marginals[d], idx[rows, d], E.sum(axis=other))
    return TuckerStats(
        comp.shape, ranks, core_marginal, factor_marginals,
        float(core_marginal.sum()),
    )


def _tt_stats_bruteforce(
    comp: TTComponent, idx: np.ndarray, w_eta: np.ndarray
) -> TTStats:
    """Reference TT statistics enumerating the full rank domain per sample.

    Direct marginalization of the joint responsibility over all internal
    bonds; guarded small.  Serves as the parity oracle for the cumulant path.
    """
    cores = comp.cores
    D = len(cores)
    if int(np.prod(comp.ranks)) > RANK_ENUM_GUARD:
        raise DomainError("tt rank domain too large for brute-force statistics")
    n = idx.shape[0]
    # Joint over internal bonds: axes (n, R_1, ..., R_{D-1}); bond j sits at
    # joint axis j.  Built by appending one bond axis per core.
    joint = w_eta[:, None] * cores[0][0, idx[:, 0], :]
    for c in range(1, D):
        g = cores[c][:, idx[:, c], :].transpose(1, 0, 2)  # (n, R_c, R_{c+1})
        g = g.reshape((n,) + (1,) * (c - 1) + g.shape[1:])
        joint = joint[..., None] * g
    joint = joint[..., 0]  # drop the unit right bond of the last core
    numerators = []
    for c in range(D):
        other = tuple(j for j in range(1, D) if j not in (c, c + 1))
        summed = joint.sum(axis=other)
        left = cores[c].shape[0]
        right = cores[c].shape[2]
        summed = summed.reshape(n, left, right)
        acc = np.zeros((comp.shape[c], left, right))
        np.add.at(acc, idx[:, c], summed)
        numerators.append(np.ascontiguousarray(acc.transpose(1, 0, 2)))
    return TTStats(comp.shape, comp.ranks, numerators, float(numerators[-1].sum()))


def _tt_stats_cumulants(
    comp: TTComponent, packed, idx: np.ndarray, w_eta: np.ndarray
) -> TTStats:
    buf, dims, offs = packed
    num_buf = kernels.tt_stats(buf, dims, offs, idx, w_eta)
    numerators = [a.copy() for a in kernels.unflatten_tt(num_buf, dims, offs)]
    return TTStats(comp.shape, comp.ranks, numerators, float(numerators[-1].sum()))


def accumulate_stats(
    T: EmpiricalTensor,
    model: MixtureModel,
    mixture: np.ndarray,
    cache: dict,
    alpha: float,
    tt_method: str = "cumulants",
) -> tuple[Responsibilities, SufficientStats]:
    """Turn support evaluations into responsibilities and marginal sums."""
    a = check_alpha(alpha)
    if (mixture <= 0).any():
        i = int(np.argmin(mixture))
        raise DomainError(
            "model assigns zero mass on the support at "
            f"{tuple(int(c) for c in T.indices[i])}"
        )
    log_t = np.log(T.weights)
    log_p = np.log(mixture)
    exponents = a * log_t + (1.0 - a) * log_p
    peak = float(exponents.max())
    log_norm = peak + math.log(float(np.exp(exponents - peak).sum()))
    w = np.exp(a * (log_t - log_p) - log_norm)
    idx = T.indices
    per_component: list[ComponentStats] = []
    for k, comp in enumerate(model.components):
        eta = float(model.weights[k])
        w_eta = w * eta
        if comp.kind == "cp":
            wq = w_eta[:, None] * cache[k]
            offsets = np.zeros(len(comp.shape) + 1, dtype=np.int64)
            np.cumsum(comp.shape, out=offsets[1:])
            sstack, totals = kernels.cp_scatter(
                int(offsets[-1]), offsets, idx, wq
            )
            per_component.append(
                CPStats(
                    comp.shape,
                    comp.rank,
                    kernels.unstack_cp(sstack, offsets),
                    totals,
                    float(totals.sum()),
                )
            )
        elif comp.kind == "tt":
            if tt_method == "cumulants":
                per_component.append(_tt_stats_cumulants(comp, cache[k], idx, w_eta))
            elif tt_method == "bruteforce":
                per_component.append(_tt_stats_bruteforce(comp, idx, w_eta))
            else:
                raise DomainError(f"unknown tt statistics method {tt_method!r}")
        elif comp.kind == "tucker":
            per_component.append(_tucker_stats(comp, idx, w_eta))
        elif comp.kind == "background":
            per_component.append(
                BackgroundStats(comp.shape, float(eta * comp.value * w.sum()))
            )
        else:  # pragma: no cover - component kinds are closed
            raise InternalError(f"unhandled component kind {comp.kind}")
    stats = SufficientStats(per_component)
    for k, s in enumerate(stats.per_component):
        if not math.isfinite(s.mass):
            raise InternalError(f"non-finite statistics for component {k}")
    resp = Responsibilities(w, log_norm, mixture, float((w * mixture).sum()))
    return resp, stats


def compute_responsibilities(
    T: EmpiricalTensor,
    model: MixtureModel,
    alpha: float,
    tt_method: str = "cumulants",
) -> tuple[Responsibilities, SufficientStats]:
    """One combined E1+E2 pass over the support of the empirical tensor."""
    _, mixture, cache = evaluate_support(T, model)
    return accumulate_stats(T, model, mixture, cache, alpha, tt_method)


def mstep_cp(stats: CPStats) -> CPComponent:
    """Closed-form CP factor update from mode marginals; mass one exactly."""
    mu = stats.mass
    if mu <= 0:
        raise InternalError("cp update requires positive responsibility mass")
    D = len(stats.shape)
    totals = stats.rank_totals
    dead = totals <= DEAD_RANK_TOL
    safe = np.where(dead, 1.0, totals)
    denom = mu ** (1.0 / D) * safe ** (1.0 - 1.0 / D)
    factors = [marg / denom[None, :] for marg in stats.mode_marginals]
    if dead.any():
        logger.warning(
            "cp update: %d dead rank slice(s) reinitialized", int(dead.sum())
        )
        for d in range(D):
            factors[d][:, dead] = DEAD_RANK_SCALE ** (1.0 / D) / stats.shape[d]
        rescale = CPComponent(stats.shape, factors).total_mass() ** (-1.0 / D)
        factors = [f * rescale for f in factors]
    return CPComponent(stats.shape, factors)


def mstep_tucker(stats: TuckerStats) -> TuckerComponent:
    """Closed-form Tucker update: normalized core, column-stochastic factors."""
    mu = stats.mass
    if mu <= 0:
        raise InternalError("tucker update requires positive responsibility mass")
    core = stats.core_marginal / mu
    factors = []
    for d, marg in enumerate(stats.factor_marginals):
        columns = marg.sum(axis=0)
        dead = columns <= DEAD_RANK_TOL
        factor = marg / np.where(dead, 1.0, columns)[None, :]
        if dead.any():
            logger.warning(
                "tucker update: %d dead column(s) in mode %d", int(dead.sum()), d
            )
            factor[:, dead] = 1.0 / stats.shape[d]
        factors.append(factor)
    return TuckerComponent(stats.shape, core, factors)


def mstep_tt(stats: TTStats) -> TTComponent:
    """Closed-form TT core update in the scaled convention.

    Each numerator is divided by its own (left, mode) sums, so all cores but
    the last are column-stochastic per trailing rank and the last sums to
    one; the chain mass stays exactly one even when dead slices are patched.
    """
    if stats.mass <= 0:
        raise InternalError("tt update requires positive responsibility mass")
    cores = []
    for d, num in enumerate(stats.numerators):
        denom = num.sum(axis=(0, 1))
        dead = denom <= DEAD_RANK_TOL
        core = num / np.where(dead, 1.0, denom)[None, None, :]
        if dead.any():
            logger.warning(
                "tt update: %d dead slice(s) in core %d", int(dead.sum()), d
            )
            core[:, :, dead] = 1.0 / (num.shape[0] * num.shape[1])
        cores.append(core)
    return TTComponent(stats.shape, cores)


def mstep_component(stats: ComponentStats, previous: Component) -> Component:
    """Dispatch the structure-specific update; background has no parameters."""
    if isinstance(stats, CPStats):
        return mstep_cp(stats)
    if isinstance(stats, TuckerStats):
        return mstep_tucker(stats)
    if isinstance(stats, TTStats):
        return mstep_tt(stats)
    if isinstance(stats, BackgroundStats):
        return previous
    raise InternalError(f"unhandled statistics type {type(stats).__name__}")


def update_weights(stats: SufficientStats, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Mixture-ratio update: responsibility masses, normalized and floored.

    Weights below the floor are snapped to zero (their log would poison the
    weight objective next iteration) and the rest renormalized.
    """
    masses = stats.masses
    total = float(masses.sum())
    if not total > 0 or not math.isfinite(total):
        raise InternalError(f"weight update got mass total {total}")
    eta = masses / total
    eta[eta < floor] = 0.0
    eta /= eta.sum()
    return eta


# --- test oracle -----------------------------------------------------------

_ORACLE_GUARD = 10**5


def _place(values: np.ndarray, axes: tuple[int, ...], ndim: int) -> np.ndarray:
    """Reshape ``values`` for broadcasting with its axes at ``axes``.

    ``axes`` must be increasing and match the axis order of ``values``.
    """
    shape = [1] * ndim
    for ax, extent in zip(axes, values.shape):
        shape[ax] = extent
    return values.reshape(shape)


def _oracle_shapes(kind, shape, ranks):
    D = len(shape)
    if kind == "cp":
        R = ranks[0]
        return [(R,)] + [(i, R) for i in shape]
    if kind == "tucker":
        return [tuple(ranks)] + [(i, r) for i, r in zip(shape, ranks)]
    if kind == "tt":
        bonds = (1,) + tuple(ranks) + (1,)
        return [(bonds[c], shape[c], bonds[c + 1]) for c in range(D)]
    raise DomainError(f"unknown structure kind {kind!r}")


def _oracle_marginals(kind, shape, ranks, M: np.ndarray):
    """Marginal sums of M matching each simplex block of the structure."""
    D = len(shape)
    if kind == "cp":
        marginals = [M.sum(axis=tuple(range(D)))]
        for d in range(D):
            axes = tuple(j for j in range(D) if j != d)
            marginals.append(M.sum(axis=axes))
        return marginals
    if kind == "tucker":
        marginals = [M.sum(axis=tuple(range(D)))]
        for d in range(D):
            axes = tuple(j for j in range(M.ndim) if j not in (d, D + d))
            marginals.append(M.sum(axis=axes))
        return marginals
    if kind == "tt":
        # M axes: modes 0..D-1, then internal bond j at axis D+j-1.
        marginals = []
        for c in range(D):
            kept_bond_axes = [
                D + j - 1 for j in (c, c + 1) if 1 <= j <= D - 1
            ]
            axes = tuple(
                ax
                for ax in range(M.ndim)
                if ax != c and ax not in kept_bond_axes
            )
            marg = M.sum(axis=axes)
            left = 1 if c == 0 else ranks[c - 1]
            right = 1 if c == D - 1 else ranks[c]
            # remaining axes are (mode, left bond?, right bond?) in M order
            if c == 0:
                marg = marg.reshape(1, shape[c], right)
            elif c == D - 1:
                marg = marg.T.reshape(left, shape[c], 1)
            else:
                marg = marg.transpose(1, 0, 2)
            marginals.append(np.ascontiguousarray(marg))
        return marginals
    raise DomainError(f"unknown structure kind {kind!r}")


def _oracle_dense_q(kind, shape, ranks, blocks) -> np.ndarray:
    D = len(shape)
    if kind == "cp":
        ndim = D + 1
        q = _place(blocks[0], (D,), ndim).copy()
        for d in range(D):
            q = q * _place(blocks[1 + d], (d, D), ndim)
        return q
    if kind == "tucker":
        ndim = 2 * D
        q = _place(blocks[0], tuple(range(D, 2 * D)), ndim).copy()
        for d in range(D):
            q = q * _place(blocks[1 + d], (d, D + d), ndim)
        return q
    if kind == "tt":
        if D == 1:
            return blocks[0][0, :, 0].copy()
        ndim = 2 * D - 1
        q = np.ones((1,) * ndim)
        for c in range(D):
            core = blocks[c]
            if c == 0:
                q = q * _place(core[0], (0, D), ndim)
            elif c == D - 1:
                q = q * _place(
                    core[:, :, 0].T, (D - 1, 2 * D - 2), ndim
                )
            else:
                q = q * _place(
                    core.transpose(1, 0, 2), (c, D + c - 1, D + c), ndim
                )
        return q
    raise DomainError(f"unknown structure kind {kind!r}")


def oracle_cross_entropy(M: np.ndarray, Q: np.ndarray) -> float:
    """-sum M log Q over the cells where M is positive."""
    mask = M > 0
    if (Q[mask] <= 0).any():
        return math.inf
    return float(-(M[mask] * np.log(Q[mask])).sum())


def _oracle_normalize(kind, block_id, block: np.ndarray, n_blocks: int):
    """Project a block back onto its simplex family (zero slices left alone)."""
    if kind in ("cp", "tucker"):
        if block_id == 0:
            return block / block.sum()
        s = block.sum(axis=0, keepdims=True)
        return block / np.where(s > 0, s, 1.0)
    if kind == "tt":
        if block_id == n_blocks - 1:
            return block / block.sum()
        s = block.sum(axis=(0, 1), keepdims=True)
        return block / np.where(s > 0, s, 1.0)
    raise DomainError(f"unknown structure kind {kind!r}")


@dataclass(frozen=True)
class OracleFactorization:
    """Simplex-parameterized factorization found by iterative refinement."""

    kind: str
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    blocks: list[np.ndarray]
    cross_entropy: float
    iterations: int

    def dense_q(self) -> np.ndarray:
        return _oracle_dense_q(self.kind, self.shape, self.ranks, self.blocks)


def manybody_oracle(
    M: DenseTensor,
    kind: str,
    shape: tuple[int, ...],
    ranks: tuple[int, ...],
    seed: int = 0,
    damping: float = 0.7,
    tol: float = 1e-12,
    max_iterations: int = 10**5,
) -> OracleFactorization:
    """Iteratively refine a feasible factorization that minimizes -sum M log Q.

    Damped multiplicative updates pull every simplex block toward the block
    marginal of M; used in tests to certify that the one-shot closed forms
    are global optima.  Bounded iterations, returns the best value found.
    """
    if kind == "cp":
        joint_shape = tuple(shape) + (ranks[0],)
    else:
        joint_shape = tuple(shape) + tuple(ranks)
    if M.values.size > _ORACLE_GUARD:
        raise DomainError(
            f"oracle limited to {_ORACLE_GUARD} cells, got {M.values.size}"
        )
    if tuple(M.shape) != joint_shape:
        raise DomainError(
            f"oracle tensor shape {M.shape} does not match structure {joint_shape}"
        )
    rng = np.random.default_rng(seed)
    block_shapes = _oracle_shapes(kind, shape, ranks)
    n_blocks = len(block_shapes)
    blocks = [
        _oracle_normalize(kind, b, rng.uniform(0.5, 1.5, size=s), n_blocks)
        for b, s in enumerate(block_shapes)
    ]
    targets = [
        _oracle_normalize(kind, b, m, n_blocks)
        for b, m in enumerate(_oracle_marginals(kind, shape, ranks, M.values))
    ]
    h = oracle_cross_entropy(M.values, _oracle_dense_q(kind, shape, ranks, blocks))
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        updated = [
            _oracle_normalize(
                kind, b, blk ** (1.0 - damping) * tgt**damping, n_blocks
            )
            for b, (blk, tgt) in enumerate(zip(blocks, targets))
        ]
        # cross-entropy flattens quadratically near the optimum, so demand
        # parameter convergence as well before accepting the small-decrease stop
        drift = max(
            float(np.abs(new - old).max())
            for new, old in zip(updated, blocks)
        )
        blocks = updated
        h_new = oracle_cross_entropy(
            M.values, _oracle_dense_q(kind, shape, ranks, blocks)
        )
        if h - h_new < tol and drift < 1e-9:
            h = min(h, h_new)
            break
        h = h_new
    return OracleFactorization(
        kind, tuple(shape), tuple(ranks), blocks, h, iterations
    )
