"""Low-rank mixture components and their pointwise evaluation.

Four component kinds: CP (factor matrices sharing one rank index), Tucker
(dense core plus per-mode factors), tensor train (chain of third-order
cores with unit boundary ranks), and a parameter-free uniform background.
Every component is a normalized distribution over the index domain; the
mixture is a convex combination of components.

Components are treated as immutable after construction: fitting replaces
them wholesale, and evaluation is pure, so instances are safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError
from .tensors import DenseTensor, as_index_array, check_shape, log_cardinality

MASS_ATOL = 1e-10
DENSE_GUARD = 10**6
TUCKER_CORE_GUARD = 4096
TUCKER_MODE_GUARD = 8

KINDS = ("cp", "tucker", "tt", "background")


@dataclass(frozen=True)
class CPComponent:
    """Sum of rank-one terms: value(i) = sum_r prod_d factors[d][i_d, r]."""

    shape: tuple[int, ...]
    factors: list[np.ndarray] = field(repr=False)

    kind = "cp"

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    @property
    def ranks(self) -> tuple[int, ...]:
        return (self.rank,)

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        fstack, offsets = kernels.stack_cp(self.factors)
        return kernels.cp_rank_values(fstack, offsets, idx).sum(axis=1)

    def total_mass(self) -> float:
        col_sums = np.stack([f.sum(axis=0) for f in self.factors])
        return float(np.prod(col_sums, axis=0).sum())

    def param_count(self) -> int:
        return self.rank * sum(self.shape)

    def dense(self) -> np.ndarray:
        acc = self.factors[0]
        for f in self.factors[1:]:
            acc = acc[..., None, :] * f
        return acc.sum(axis=-1)


@dataclass(frozen=True)
class TuckerComponent:
    """Dense core contracted with column-stochastic per-mode factors."""

    shape: tuple[int, ...]
    core: np.ndarray = field(repr=False)
    factors: list[np.ndarray] = field(repr=False)

    kind = "tucker"

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(self.core.shape)

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        # Contract factor rows into the core one mode at a time; the rank
        # domain is never enumerated jointly with the sample axis.
        acc = np.einsum("nr,r...->n...", self.factors[0][idx[:, 0]], self.core)
        for d in range(1, len(self.factors)):
            acc = np.einsum("nr,nr...->n...", self.factors[d][idx[:, d]], acc)
        return acc

    def total_mass(self) -> float:
        core_mass = self.core
        for f in self.factors:
            core_mass = np.tensordot(f.sum(axis=0), core_mass, axes=([0], [0]))
        return float(core_mass)

    def param_count(self) -> int:
        return int(np.prod(self.ranks)) + sum(
            i * r for i, r in zip(self.shape, self.ranks)
        )

    def dense(self) -> np.ndarray:
        acc = self.core
        for f in self.factors:
            # move the leading rank axis out, replacing it with the mode axis
            acc = np.tensordot(acc, f, axes=([0], [1]))
        return acc

    def validate_guards(self) -> None:
        if len(self.shape) > TUCKER_MODE_GUARD:
            raise DomainError(
                f"tucker supports at most {TUCKER_MODE_GUARD} modes, got {len(self.shape)}"
            )
        if int(np.prod(self.ranks)) > TUCKER_CORE_GUARD:
            raise DomainError(
                f"tucker core size {int(np.prod(self.ranks))} exceeds guard {TUCKER_CORE_GUARD}"
            )


@dataclass(frozen=True)
class TTComponent:
    """Tensor-train chain; cores[d] has shape (R_{d-1}, I_d, R_d), R_0=R_D=1.

    Cores are kept in the scaled convention: every core but the last sums
    to one over its first two axes per trailing rank, and the last core
    sums to one overall, so the total mass is structurally one.
    """

    shape: tuple[int, ...]
    cores: list[np.ndarray] = field(repr=False)

    kind = "tt"

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(int(c.shape[2]) for c in self.cores[:-1])

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        buf, dims, offs = kernels.flatten_tt(self.cores)
        return kernels.tt_values(buf, dims, offs, idx)

    def total_mass(self) -> float:
        vec = np.ones(1)
        for core in self.cores:
            vec = vec @ core.sum(axis=1)
        return float(vec[0])

    def param_count(self) -> int:
        return sum(int(np.prod(c.shape)) for c in self.cores)

    def dense(self) -> np.ndarray:
        acc = np.ones((1, 1))
        for core in self.cores:
            acc = np.einsum("...a,aib->...ib", acc, core)
        return acc[0, ..., 0]


@dataclass(frozen=True)
class BackgroundComponent:
    """Uniform distribution 1/|domain|, evaluated through the log extent."""

    shape: tuple[int, ...]

    kind = "background"
    ranks: tuple[int, ...] = ()

    @property
    def value(self) -> float:
        return math.exp(-log_cardinality(self.shape))

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        return np.full(idx.shape[0], self.value)

    def total_mass(self) -> float:
        return 1.0

    def param_count(self) -> int:
        return 0

    def dense(self) -> np.ndarray:
        return np.full(self.shape, self.value)


Component = CPComponent | TuckerComponent | TTComponent | BackgroundComponent


def scale_tt_cores(cores: list[np.ndarray]) -> list[np.ndarray]:
    """Rescale TT cores into the scaled convention without changing values.

    Sweeps the running mass vector left to right and divides it out, so the
    output chain contracts to exactly the same tensor with total mass one.
    """
    g = np.ones(1)
    scaled = []
    for d, core in enumerate(cores):
        mass = g @ core.sum(axis=1)
        if (mass <= 0).any():
            raise DomainError(f"tt core {d} carries a zero-mass rank slice")
        scaled.append(core * (g[:, None, None] / mass[None, None, :]))
        g = mass
    return scaled


def init_component(
    kind: str, shape: tuple[int, ...], ranks: tuple[int, ...], rng
) -> Component:
    """Draw a component with uniform(0, 1) entries and normalize it.

    ``rng`` is a seed or a ``numpy.random.Generator``; passing a shared
    generator makes mixture initialization draw from one stream.
    """
    dims = check_shape(shape)
    rng = np.random.default_rng(rng)
    ranks = tuple(int(r) for r in ranks)
    if any(r < 1 for r in ranks):
        raise DomainError(f"ranks must be positive, got {ranks}")
    D = len(dims)
    if kind == "background":
        if ranks:
            raise DomainError("background takes no ranks")
        return BackgroundComponent(dims)
    if kind == "cp":
        if len(ranks) != 1:
            raise DomainError(f"cp takes one rank, got {ranks}")
        R = ranks[0]
        factors = [rng.uniform(size=(i, R)) for i in dims]
        comp = CPComponent(dims, factors)
        scale = comp.total_mass() ** (-1.0 / D)
        return CPComponent(dims, [f * scale for f in factors])
    if kind == "tucker":
        if len(ranks) != D:
            raise DomainError(f"tucker takes {D} ranks, got {len(ranks)}")
        core = rng.uniform(size=ranks)
        factors = [rng.uniform(size=(i, r)) for i, r in zip(dims, ranks)]
        factors = [f / f.sum(axis=0, keepdims=True) for f in factors]
        comp = TuckerComponent(dims, core / core.sum(), factors)
        comp.validate_guards()
        return comp
    if kind == "tt":
        if len(ranks) != D - 1:
            raise DomainError(f"tt takes {D - 1} ranks, got {len(ranks)}")
        bonds = (1,) + ranks + (1,)
        cores = [
            rng.uniform(size=(bonds[d], dims[d], bonds[d + 1])) for d in range(D)
        ]
        return TTComponent(dims, scale_tt_cores(cores))
    raise DomainError(f"unknown component kind {kind!r}")


@dataclass(frozen=True)
class MixtureModel:
    """Convex combination of components over one index domain."""

    shape: tuple[int, ...]
    components: list[Component]
    weights: np.ndarray

    def __post_init__(self):
        if len(self.components) != len(self.weights):
            raise DomainError("component and weight counts differ")
        if len(self.components) == 0:
            raise DomainError("mixture needs at least one component")
        for c in self.components:
            if tuple(c.shape) != tuple(self.shape):
                raise DomainError("component shape mismatch in mixture")
        if (self.weights < 0).any():
            raise DomainError("mixture weights must be nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"weights sum {total:.12g}")

    @property
    def n_components(self) -> int:
        return len(self.components)

    def component_values_at(self, idx: np.ndarray) -> list[np.ndarray]:
        idx = as_index_array(idx, self.shape)
        return [c.values_at(idx) for c in self.components]

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        values = self.component_values_at(idx)
        out = np.zeros(len(values[0]))
        for eta, v in zip(self.weights, values):
            if eta > 0:
                out += eta * v
        return out

    def value_at(self, index) -> float:
        return float(self.values_at(np.asarray([index], dtype=np.int64))[0])

    def param_count(self) -> int:
        return sum(c.param_count() for c in self.components) + (
            self.n_components - 1
        )


@dataclass(frozen=True)
class TTCumulants:
    """Per-sample prefix/suffix chain vectors at every core boundary.

    ``prefixes[d]`` is (n, R_d): cores 0..d-1 contracted at the sample.
    ``suffixes[d]`` is (n, R_{d-1} of core d): cores d..D-1 contracted.
    ``prefixes[D]`` and ``suffixes[0]`` are the component values.
    """

    prefixes: list[np.ndarray]
    suffixes: list[np.ndarray]

    def values(self) -> np.ndarray:
        return self.prefixes[-1][:, 0]


def tt_cumulants(component: TTComponent, support: np.ndarray) -> TTCumulants:
    """Compute prefix/suffix cumulants for every support index, O(n D R^2)."""
    idx = as_index_array(support, component.shape)
    if idx.shape[0] == 0:
        raise DomainError("support must be nonempty")
    from .kernels import _numpy as knp

    buf, dims, offs = kernels.flatten_tt(component.cores)
    prefixes, suffixes = knp.tt_chain(buf, dims, offs, idx)
    return TTCumulants(prefixes, suffixes)


def materialize_dense(m: MixtureModel) -> DenseTensor:
    """Dense probability table of a mixture; guarded to small domains."""
    cells = float(np.prod([float(s) for s in m.shape]))
    if cells > DENSE_GUARD:
        raise DomainError(
            f"domain has {cells:.3g} cells, dense materialization guard is {DENSE_GUARD}"
        )
    out = np.zeros(m.shape)
    for eta, comp in zip(m.weights, m.components):
        if eta > 0:
            out += eta * comp.dense()
    return DenseTensor(m.shape, out)
