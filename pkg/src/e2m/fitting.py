"""Outer fitting loop with guaranteed monotone objective decrease.

Each iteration evaluates the model on the support, forms responsibilities
(the combined double E-step), applies the closed-form structure updates and
the weight update, then records the surrogate objective.  The objective may
never increase by more than a roundoff allowance; a violation aborts the
run because it can only come from an implementation bug.

Randomness flows from the config seed through one generator: components are
initialized in declared order, then the mixture weights, so identical
(tensor, config) pairs reproduce traces bit for bit on a fixed kernel
backend.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import manybody
from .divergence import check_alpha
from .errors import DomainError, InternalError
from .models import MixtureModel, TTComponent, init_component
from .tensors import EmpiricalTensor

MONOTONE_SLACK = 1e-9

DEFAULT_MAX_ITERATIONS = 1200
DEFAULT_TOLERANCE = 1e-8


@dataclass(frozen=True)
class ComponentSpec:
    """Requested mixture component: kind plus its rank tuple."""

    kind: str
    ranks: tuple[int, ...] = ()

    def describe(self) -> str:
        if not self.ranks:
            return self.kind
        return f"{self.kind}{list(self.ranks)}"


@dataclass(frozen=True)
class FitConfig:
    alpha: float
    components: tuple[ComponentSpec, ...]
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    seed: int = 0
    trace_every: int = 1
    tt_method: str = "cumulants"
    collect_diagnostics: bool = False

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if not self.components:
            raise DomainError("at least one component is required")
        if self.trace_every < 1:
            raise DomainError("trace_every must be at least 1")
        object.__setattr__(self, "components", tuple(self.components))


@dataclass
class FitTrace:
    """Objective / weight history plus the reason fitting stopped."""

    iterations: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    elapsed: list[float] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    converged_reason: str = "max-iterations"
    total_iterations: int = 0

    def record(self, iteration, objective, weights, elapsed):
        self.iterations.append(int(iteration))
        self.objectives.append(float(objective))
        self.weights.append(np.array(weights, dtype=np.float64))
        self.elapsed.append(float(elapsed))

    def objective_array(self) -> np.ndarray:
        return np.array(self.objectives)

    def lines(self):
        """Line-delimited records: iteration, objective, weights, seconds."""
        for it, obj, eta, sec in zip(
            self.iterations, self.objectives, self.weights, self.elapsed
        ):
            eta_str = ",".join(repr(float(v)) for v in eta)
            yield f"{it}\t{obj!r}\t{eta_str}\t{sec:.6f}"


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None


def should_stop(trace: FitTrace, config: FitConfig) -> StopDecision:
    """Stop on small absolute objective change or on the iteration cap."""
    if not trace.objectives:
        raise DomainError("stopping rule needs at least one recorded objective")
    if len(trace.objectives) >= 2:
        delta = abs(trace.objectives[-1] - trace.objectives[-2])
        if delta < config.tolerance:
            return StopDecision(True, "tolerance")
    if trace.total_iterations >= config.max_iterations:
        return StopDecision(True, "max-iterations")
    return StopDecision(False, None)


def _objective_from_values(T, mixture_values, alpha) -> float:
    if (mixture_values <= 0).any():
        i = int(np.argmin(mixture_values))
        raise DomainError(
            "model assigns zero mass on the support at "
            f"{tuple(int(c) for c in T.indices[i])}"
        )
    log_t = np.log(T.weights)
    log_p = np.log(mixture_values)
    if alpha == 1.0:
        return float(-np.sum(T.weights * log_p))
    exponents = alpha * log_t + (1.0 - alpha) * log_p
    peak = float(exponents.max())
    log_s = peak + math.log(float(np.exp(exponents - peak).sum()))
    return log_s / (alpha - 1.0)


def validate_config(config: FitConfig, shape: tuple[int, ...]) -> None:
    """Reject infeasible component requests before any computation runs."""
    D = len(shape)
    expected = {"cp": 1, "tucker": D, "tt": D - 1, "background": 0}
    for spec in config.components:
        if spec.kind not in expected:
            raise DomainError(f"unknown component kind {spec.kind!r}")
        if len(spec.ranks) != expected[spec.kind]:
            raise DomainError(
                f"{spec.kind} needs {expected[spec.kind]} rank(s), got {list(spec.ranks)}"
            )
        if any(r < 1 for r in spec.ranks):
            raise DomainError(f"ranks must be positive, got {list(spec.ranks)}")
        if spec.kind == "tucker":
            if D > 8:
                raise DomainError("tucker components support at most 8 modes")
            if int(np.prod(spec.ranks)) > manybody.RANK_ENUM_GUARD:
                raise DomainError(
                    "tucker core size "
                    f"{int(np.prod(spec.ranks))} exceeds {manybody.RANK_ENUM_GUARD}"
                )


class _Loop:
    """Shared per-iteration bookkeeping for the two fit drivers."""

    def __init__(self, T: EmpiricalTensor, config: FitConfig):
        self.T = T
        self.config = config
        self.trace = FitTrace()
        self.started = time.perf_counter()
        self.objective = math.inf

    def start(self, mixture_values, weights):
        self.objective = _objective_from_values(
            self.T, mixture_values, self.config.alpha
        )
        self.trace.record(
            0, self.objective, weights, time.perf_counter() - self.started
        )

    def step(self, iteration, model, mixture_values, resp) -> bool:
        """Record one completed iteration; returns True when fitting is done."""
        new_objective = _objective_from_values(
            self.T, mixture_values, self.config.alpha
        )
        if not math.isfinite(new_objective):
            raise InternalError(
                f"objective became {new_objective} at iteration {iteration}"
            )
        if new_objective > self.objective + MONOTONE_SLACK:
            raise InternalError(
                f"objective increased from {self.objective!r} to "
                f"{new_objective!r} at iteration {iteration}"
            )
        self.trace.total_iterations = iteration
        converged = abs(new_objective - self.objective) < self.config.tolerance
        exhausted = iteration == self.config.max_iterations
        if iteration % self.config.trace_every == 0 or converged or exhausted:
            self.trace.record(
                iteration,
                new_objective,
                model.weights,
                time.perf_counter() - self.started,
            )
            if self.config.collect_diagnostics:
                self.trace.diagnostics.append(
                    {
                        "responsibility_total": resp.total,
                        "component_masses": tuple(
                            c.total_mass() for c in model.components
                        ),
                        "weight_sum": float(model.weights.sum()),
                        "min_support_value": float(mixture_values.min()),
                    }
                )
        self.objective = new_objective
        if converged:
            self.trace.converged_reason = "tolerance"
            return True
        if exhausted:
            self.trace.converged_reason = "max-iterations"
            return True
        return False


def fit(T: EmpiricalTensor, config: FitConfig) -> tuple[MixtureModel, FitTrace]:
    """Fit a mixture of low-rank components to an empirical tensor.

    Returns the final model and the iteration trace.  The trace always
    contains the initial model's objective, so with ``trace_every=1`` its
    length is the number of iterations plus one.
    """
    validate_config(config, T.shape)
    rng = np.random.default_rng(config.seed)
    components = [
        init_component(spec.kind, T.shape, spec.ranks, rng)
        for spec in config.components
    ]
    raw = rng.uniform(size=len(components))
    model = MixtureModel(T.shape, components, raw / raw.sum())

    loop = _Loop(T, config)
    _, mixture, cache = manybody.evaluate_support(T, model)
    loop.start(mixture, model.weights)

    for iteration in range(1, config.max_iterations + 1):
        resp, stats = manybody.accumulate_stats(
            T, model, mixture, cache, config.alpha, config.tt_method
        )
        new_components = []
        for comp, comp_stats, eta in zip(
            model.components, stats.per_component, model.weights
        ):
            if eta <= 0 or comp_stats.mass <= manybody.WEIGHT_FLOOR:
                # dropped components keep their parameters
                new_components.append(comp)
            else:
                new_components.append(manybody.mstep_component(comp_stats, comp))
        eta = manybody.update_weights(stats)
        # The background term guarantees strict positivity on the support;
        # zeroing it via the generic weight floor would void that guarantee
        # (small alpha drives its exact-arithmetic weight to zero only
        # asymptotically), so keep it pinned at the floor instead.
        for k, comp in enumerate(model.components):
            if (
                comp.kind == "background"
                and eta[k] <= 0.0
                and stats.per_component[k].mass > 0.0
            ):
                eta[k] = manybody.WEIGHT_FLOOR
        eta = eta / eta.sum()
        model = MixtureModel(T.shape, new_components, eta)
        _, mixture, cache = manybody.evaluate_support(T, model)
        if loop.step(iteration, model, mixture, resp):
            break
    return model, loop.trace


def fit_tt_scalable(
    T: EmpiricalTensor, config: FitConfig
) -> tuple[TTComponent, FitTrace]:
    """Specialized driver for a single tensor-train component.

    Runs the prefix/suffix cumulant recursion per support sample, so an
    iteration costs O(D * nnz * R^2) regardless of the domain size.  For a
    train mixed with other components (e.g. a background term) use
    :func:`fit`, which composes the weight updates; this driver covers the
    pure-train case and is trace-compatible with it.
    """
    if len(config.components) != 1 or config.components[0].kind != "tt":
        raise DomainError("scalable driver requires exactly one tt component")
    validate_config(config, T.shape)
    rng = np.random.default_rng(config.seed)
    component = init_component("tt", T.shape, config.components[0].ranks, rng)
    model = MixtureModel(T.shape, [component], np.array([1.0]))

    loop = _Loop(T, config)
    _, mixture, cache = manybody.evaluate_support(T, model)
    loop.start(mixture, model.weights)

    for iteration in range(1, config.max_iterations + 1):
        resp, stats = manybody.accumulate_stats(
            T, model, mixture, cache, config.alpha, "cumulants"
        )
        component = manybody.mstep_tt(stats.per_component[0])
        model = MixtureModel(T.shape, [component], np.array([1.0]))
        _, mixture, cache = manybody.evaluate_support(T, model)
        if loop.step(iteration, model, mixture, resp):
            break
    return component, loop.trace
