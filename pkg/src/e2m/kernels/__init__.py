"""Hot inner-loop kernels with a numba fast path and a pure-numpy fallback.

The per-iteration cost of fitting is dominated by per-sample gather /
scatter-add accumulation of sufficient statistics (CP mode marginals, TT
core numerators).  Both backends implement the same four entry points:

``cp_rank_values``  per-sample per-rank products of CP factor rows
``cp_scatter``      scatter-add of weighted rank values into mode marginals
``tt_values``       per-sample TT chain evaluation
``tt_stats``        fused prefix/suffix cumulants + core-numerator scatter

Backend selection: set ``E2M_KERNELS=numpy`` or ``E2M_KERNELS=numba`` in the
environment, or call :func:`set_backend` at runtime.  The default is numba
when importable, else numpy.  Results agree across backends up to summation
order (~1e-15 relative); within one backend they are bit-reproducible.

Tucker statistics are bounded by the core-size guard and stay on the
vectorized numpy path in both backends (see manybody).
"""

from __future__ import annotations

import logging
import os

import numpy as np

logger = logging.getLogger("e2m.kernels")

_ENV_VAR = "E2M_KERNELS"

from . import _numpy  # noqa: E402

_BACKENDS = {"numpy": _numpy}

try:
    from . import _numba

    _BACKENDS["numba"] = _numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def _default_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested:
        if requested in _BACKENDS:
            return requested
        logger.warning(
            "%s=%r not available, falling back to %s",
            _ENV_VAR,
            requested,
            "numba" if _HAVE_NUMBA else "numpy",
        )
    return "numba" if _HAVE_NUMBA else "numpy"


_active = _default_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}, have {sorted(_BACKENDS)}")
    previous = _active
    _active = name
    return previous


def cp_rank_values(fstack: np.ndarray, offsets: np.ndarray, idx: np.ndarray):
    return _BACKENDS[_active].cp_rank_values(fstack, offsets, idx)


def cp_scatter(n_rows: int, offsets: np.ndarray, idx: np.ndarray, wq: np.ndarray):
    return _BACKENDS[_active].cp_scatter(n_rows, offsets, idx, wq)


def tt_values(buf: np.ndarray, dims: np.ndarray, offs: np.ndarray, idx: np.ndarray):
    return _BACKENDS[_active].tt_values(buf, dims, offs, idx)


def tt_stats(
    buf: np.ndarray,
    dims: np.ndarray,
    offs: np.ndarray,
    idx: np.ndarray,
    w: np.ndarray,
):
    return _BACKENDS[_active].tt_stats(buf, dims, offs, idx, w)


def flatten_tt(cores: list[np.ndarray]):
    """Pack ragged TT cores into (flat buffer, dims (D,3), offsets (D+1,))."""
    dims = np.array([core.shape for core in cores], dtype=np.int64)
    sizes = dims.prod(axis=1)
    offs = np.zeros(len(cores) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offs[1:])
    buf = np.empty(int(offs[-1]), dtype=np.float64)
    for d, core in enumerate(cores):
        buf[offs[d] : offs[d + 1]] = core.reshape(-1)
    return buf, dims, offs


def unflatten_tt(buf: np.ndarray, dims: np.ndarray, offs: np.ndarray):
    """Inverse of :func:`flatten_tt` (views into the buffer)."""
    return [
        buf[offs[d] : offs[d + 1]].reshape(tuple(dims[d]))
        for d in range(dims.shape[0])
    ]


def stack_cp(factors: list[np.ndarray]):
    """Pack CP factor matrices into (stacked rows, row offsets)."""
    offsets = np.zeros(len(factors) + 1, dtype=np.int64)
    np.cumsum([f.shape[0] for f in factors], out=offsets[1:])
    return np.concatenate(factors, axis=0), offsets


def unstack_cp(fstack: np.ndarray, offsets: np.ndarray):
    return [fstack[offsets[d] : offsets[d + 1]] for d in range(len(offsets) - 1)]
