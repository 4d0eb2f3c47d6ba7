"""Divergences and likelihood scores, evaluated in the log domain.

All reductions run over the support of the empirical tensor: for
``alpha > 0`` the terms with zero empirical mass vanish anyway, so the
support-restricted sums are exact.  Each product ``T^a * P^(1-a)`` is formed
as ``exp(a*log T + (1-a)*log P)`` with a log-sum-exp reduction, which keeps
supports with mass near 1e-300 (huge sample spaces) inside double range.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError
from .tensors import EmpiricalTensor

EQUAL_DIV_ATOL = 1e-10


def check_alpha(alpha: float) -> float:
    """Validate alpha in (0, 1]."""
    a = float(alpha)
    if not 0.0 < a <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {a}")
    return a


def _log_model_values(weights: np.ndarray, model_values: np.ndarray) -> np.ndarray:
    values = np.asarray(model_values, dtype=np.float64)
    if values.shape != weights.shape:
        raise DomainError(
            f"model values cover {values.shape}, support needs {weights.shape}"
        )
    if (values <= 0).any() or not np.isfinite(values).all():
        i = int(np.argmin(values))
        raise DomainError(
            "model assigns zero mass to observed sample "
            f"(support position {i}, value {values[i]})"
        )
    return np.log(values)


def log_power_sum(
    weights: np.ndarray, model_values: np.ndarray, alpha: float
) -> float:
    """Return log sum_i T_i^alpha * P_i^(1-alpha) over the support."""
    a = check_alpha(alpha)
    log_p = _log_model_values(weights, model_values)
    exponents = a * np.log(weights) + (1.0 - a) * log_p
    m = float(exponents.max())
    return m + float(np.log(np.exp(exponents - m).sum()))


def alpha_divergence(
    T: EmpiricalTensor, model_values: np.ndarray, alpha: float
) -> float:
    """Alpha-divergence from the empirical tensor to the model on the support.

    ``model_values`` must be aligned with ``T.indices``.  The ``alpha = 1``
    branch returns the KL divergence (the continuous limit of the family).
    """
    a = check_alpha(alpha)
    if a == 1.0:
        log_p = _log_model_values(T.weights, model_values)
        return float(np.sum(T.weights * (np.log(T.weights) - log_p)))
    log_s = log_power_sum(T.weights, model_values, a)
    # 1 - exp(log_s) without cancellation when the sum is close to one.
    return float(-np.expm1(log_s) / (a * (1.0 - a)))


def objective_L(T: EmpiricalTensor, model_values: np.ndarray, alpha: float) -> float:
    """Surrogate objective: log sum T^a P^(1-a) scaled by 1/(a-1).

    At ``alpha = 1`` the formula is singular; that branch reports the
    cross-entropy -sum T log P instead, which differs from the alpha->1
    limit (the KL divergence) only by the empirical entropy, a constant
    for a fixed empirical tensor.
    """
    a = check_alpha(alpha)
    if a == 1.0:
        log_p = _log_model_values(T.weights, model_values)
        return float(-np.sum(T.weights * log_p))
    return log_power_sum(T.weights, model_values, a) / (a - 1.0)


def cross_entropy(weights: np.ndarray, log_values: np.ndarray) -> float:
    """Return -sum(weights * log_values); log values are supplied pre-logged."""
    w = np.asarray(weights, dtype=np.float64)
    lv = np.asarray(log_values, dtype=np.float64)
    if w.shape != lv.shape:
        raise DomainError("weights and log values differ in shape")
    return float(-np.sum(w * lv))


class NLLResult(NamedTuple):
    total: float
    per_sample: float
    count: int


def negative_log_likelihood(
    values_at: Callable[[np.ndarray], np.ndarray], samples: np.ndarray
) -> NLLResult:
    """Negative log-likelihood of index samples under a model.

    ``values_at`` maps an (n, D) index array to the n model probabilities.
    Raises if the model puts zero mass on any sample (cannot happen when a
    background component with positive weight is present).
    """
    idx = np.asarray(samples, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[0] == 0:
        raise DomainError("samples must be a nonempty (n, D) index array")
    values = np.asarray(values_at(idx), dtype=np.float64)
    bad = ~(values > 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainError(
            f"model assigns zero mass to sample {tuple(int(c) for c in idx[i])}"
        )
    total = float(-np.log(values).sum())
    return NLLResult(total, total / idx.shape[0], idx.shape[0])
