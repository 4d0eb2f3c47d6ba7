"""Sparse and small-dense nonnegative tensor containers.

Indices are zero-based everywhere inside the package; one-based conventions
only ever appear in external documentation.  The empirical tensor stores its
support as a lexicographically sorted coordinate array so that every
reduction that feeds reported numbers runs in a deterministic order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

MASS_ATOL = 1e-12


def check_shape(shape: tuple[int, ...]) -> tuple[int, ...]:
    """Validate a shape tuple (D >= 1, every extent >= 1) and return it."""
    dims = tuple(int(d) for d in shape)
    if len(dims) < 1:
        raise DomainError("shape must have at least one mode")
    for d, extent in enumerate(dims):
        if extent < 1:
            raise DomainError(f"mode {d} has invalid extent {extent}")
    return dims


def log_cardinality(shape: tuple[int, ...]) -> float:
    """Return log of the total number of cells, summed in the log domain.

    Safe for shapes whose cell count overflows an integer register.
    """
    dims = check_shape(shape)
    return float(sum(math.log(d) for d in dims))


def as_index_array(samples, shape: tuple[int, ...]) -> np.ndarray:
    """Coerce a sample collection to an (n, D) int64 array, range-checked."""
    dims = check_shape(shape)
    idx = np.asarray(samples, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx.reshape(-1, len(dims)) if len(dims) > 1 else idx.reshape(-1, 1)
    if idx.ndim != 2 or idx.shape[1] != len(dims):
        raise DomainError(
            f"samples must be rows of {len(dims)} coordinates, got shape {idx.shape}"
        )
    for d, extent in enumerate(dims):
        col = idx[:, d]
        bad = (col < 0) | (col >= extent)
        if bad.any():
            value = int(col[np.argmax(bad)])
            raise DomainError(
                f"coordinate {value} out of range [0, {extent}) in feature {d}"
            )
    return idx


@dataclass(frozen=True)
class EmpiricalTensor:
    """Normalized sparse count tensor built from categorical samples.

    ``indices`` is (nnz, D) int64 sorted lexicographically; ``weights`` holds
    the matching probability masses (all strictly positive, summing to one).
    ``sample_count`` is the number of raw samples behind the weights.
    """

    shape: tuple[int, ...]
    indices: np.ndarray
    weights: np.ndarray
    sample_count: int

    def __post_init__(self):
        total = float(self.weights.sum())
        if abs(total - 1.0) > MASS_ATOL:
            raise DomainError(f"empirical weights sum to {total}, expected 1")
        if (self.weights <= 0).any():
            raise DomainError("empirical weights must be strictly positive")
        if len(self.weights) > self.sample_count:
            raise DomainError("more support entries than samples")

    @property
    def nnz(self) -> int:
        return len(self.weights)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def entries(self) -> dict[tuple[int, ...], float]:
        """Support as a plain dict, mainly for tests and small instances."""
        return {
            tuple(int(c) for c in row): float(w)
            for row, w in zip(self.indices, self.weights)
        }


@dataclass(frozen=True)
class DenseTensor:
    """Small dense nonnegative tensor (row-major values)."""

    shape: tuple[int, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        check_shape(self.shape)
        if tuple(self.values.shape) != tuple(self.shape):
            raise DomainError(
                f"values shape {self.values.shape} does not match {self.shape}"
            )
        if (self.values < 0).any():
            raise DomainError("dense tensor has negative entries")

    @property
    def size(self) -> int:
        return int(self.values.size)


def build_empirical(samples, shape: tuple[int, ...]) -> EmpiricalTensor:
    """Accumulate categorical samples into a normalized sparse tensor.

    Duplicate samples accumulate weight; the result is invariant under
    permutations of the sample list.
    """
    dims = check_shape(shape)
    idx = as_index_array(samples, dims)
    n = idx.shape[0]
    if n == 0:
        raise DomainError("cannot build an empirical tensor from zero samples")
    uniq, counts = np.unique(idx, axis=0, return_counts=True)
    weights = counts.astype(np.float64) / float(n)
    return EmpiricalTensor(dims, np.ascontiguousarray(uniq), weights, n)


def dense_to_empirical(t: DenseTensor) -> EmpiricalTensor:
    """View a normalized dense tensor as an empirical tensor over its support.

    Used for image-style inputs where the mass did not come from counting;
    ``sample_count`` is then the number of positive cells.
    """
    flat = t.values.reshape(-1)
    total = float(flat.sum())
    if abs(total - 1.0) > 1e-8:
        raise DomainError(f"dense tensor mass {total} is not 1; normalize first")
    nz = np.flatnonzero(flat > 0)
    if nz.size == 0:
        raise DomainError("dense tensor has no positive entries")
    coords = np.stack(np.unravel_index(nz, t.shape), axis=1).astype(np.int64)
    weights = flat[nz] / total
    return EmpiricalTensor(t.shape, coords, weights, int(nz.size))


def normalize_dense(t: DenseTensor) -> DenseTensor:
    """Rescale a nonnegative dense tensor so its entries sum to one."""
    total = float(t.values.sum())
    if total <= 0:
        raise DomainError("cannot normalize an all-zero tensor")
    return DenseTensor(t.shape, t.values / total)
