"""Evaluation protocols: density scoring, conditional classification, and
rank/alpha grid search with validation-based selection.

Grid cells are enumerated in a fixed sorted order and repeated over distinct
seeds; selection looks only at validation scores, and only the selected
cell's test scores are highlighted in the report.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .divergence import NLLResult, negative_log_likelihood
from .errors import DomainError
from .fitting import ComponentSpec, FitConfig, fit
from .models import MixtureModel
from .tensors import as_index_array, build_empirical

# Alpha values searched when tuning; biased toward the KL end of the range.
ALPHA_GRID = (0.15, 0.5, 0.75, 0.85, 0.9, 0.95, 1.0)

DEFAULT_REPEATS = 5


def evaluate_density(model: MixtureModel, samples) -> NLLResult:
    """Total and per-sample negative log-likelihood of samples under a model."""
    idx = as_index_array(samples, model.shape)
    return negative_log_likelihood(model.values_at, idx)


def classify(model: MixtureModel, features) -> np.ndarray:
    """Assign each feature row to the class maximizing the joint density.

    The final mode of the model is the class mode.  Ties break toward the
    smallest class index, so predictions are deterministic and invariant
    under positive rescaling of the class-slice values.
    """
    feats = np.asarray(features, dtype=np.int64)
    if feats.ndim == 1:
        feats = feats[None, :]
    n_classes = model.shape[-1]
    if feats.shape[1] != len(model.shape) - 1:
        raise DomainError(
            f"expected {len(model.shape) - 1} feature columns, got {feats.shape[1]}"
        )
    scores = np.empty((feats.shape[0], n_classes))
    full = np.empty((feats.shape[0], len(model.shape)), dtype=np.int64)
    full[:, :-1] = feats
    for c in range(n_classes):
        full[:, -1] = c
        scores[:, c] = model.values_at(full)
    return scores.argmax(axis=1)


def accuracy(model: MixtureModel, labeled_samples) -> float:
    labeled = as_index_array(labeled_samples, model.shape)
    predictions = classify(model, labeled[:, :-1])
    return float((predictions == labeled[:, -1]).mean())


def count_parameters(shape, specs: tuple[ComponentSpec, ...]) -> int:
    """Free-parameter tally used for the budget cap (before normalization)."""
    D = len(shape)
    total = 0
    for spec in specs:
        if spec.kind == "cp":
            total += spec.ranks[0] * sum(shape)
        elif spec.kind == "tucker":
            total += int(np.prod(spec.ranks)) + sum(
                i * r for i, r in zip(shape, spec.ranks)
            )
        elif spec.kind == "tt":
            bonds = (1,) + tuple(spec.ranks) + (1,)
            total += sum(bonds[d] * shape[d] * bonds[d + 1] for d in range(D))
        elif spec.kind == "background":
            pass
        else:
            raise DomainError(f"unknown component kind {spec.kind!r}")
    return total + len(specs) - 1


def rank_candidates(
    kind: str, shape, budget: int, count: int = 8
) -> tuple[int, ...]:
    """Equally spaced uniform-rank candidates whose parameter count fits the budget.

    Ranks are uniform across the structure's rank tuple.  Mixture searches
    conventionally keep the five smallest of the eight candidates per
    structure.
    """
    if kind == "background":
        return ()
    max_rank = 0
    r = 1
    while True:
        specs = (_uniform_spec(kind, shape, r),)
        if count_parameters(shape, specs) > budget:
            break
        max_rank = r
        r += 1
        if r > 4096:
            break
    if max_rank < 1:
        raise DomainError(
            f"no feasible {kind} rank under parameter budget {budget}"
        )
    grid = np.unique(np.linspace(1, max_rank, count).round().astype(int))
    return tuple(int(v) for v in grid)


def _uniform_spec(kind: str, shape, rank: int) -> ComponentSpec:
    D = len(shape)
    if kind == "cp":
        return ComponentSpec("cp", (rank,))
    if kind == "tucker":
        return ComponentSpec("tucker", (rank,) * D)
    if kind == "tt":
        return ComponentSpec("tt", (rank,) * (D - 1))
    if kind == "background":
        return ComponentSpec("background", ())
    raise DomainError(f"unknown component kind {kind!r}")


@dataclass(frozen=True)
class GridSpec:
    """Search space: alphas crossed with per-structure uniform ranks."""

    alphas: tuple[float, ...]
    structures: tuple[str, ...]
    rank_lists: tuple[tuple[int, ...], ...]
    budget: int
    repeats: int = DEFAULT_REPEATS
    base_seed: int = 0
    max_iterations: int = 200
    tolerance: float = 1e-7

    def __post_init__(self):
        if not self.alphas:
            raise DomainError("alpha candidate list is empty")
        if len(self.structures) != len(self.rank_lists):
            raise DomainError("one rank list per structure is required")
        if self.budget <= 0:
            raise DomainError("parameter budget must be positive")
        if self.repeats < 1:
            raise DomainError("repeats must be at least 1")

    def cells(self, shape) -> list[tuple[float, tuple[ComponentSpec, ...]]]:
        """Budget-filtered (alpha, component specs) combinations, sorted."""
        rank_axes = []
        for kind, ranks in zip(self.structures, self.rank_lists):
            if kind == "background":
                rank_axes.append((0,))
            else:
                if not ranks:
                    raise DomainError(f"no rank candidates for structure {kind!r}")
                rank_axes.append(tuple(sorted(ranks)))
        cells = []
        for alpha in sorted(self.alphas):
            for combo in product(*rank_axes):
                specs = tuple(
                    _uniform_spec(kind, shape, rank)
                    for kind, rank in zip(self.structures, combo)
                )
                if count_parameters(shape, specs) <= self.budget:
                    cells.append((float(alpha), specs))
        if not cells:
            raise DomainError(
                f"no grid cells satisfy the parameter budget {self.budget}"
            )
        return cells


@dataclass(frozen=True)
class CellScore:
    alpha: float
    specs: tuple[ComponentSpec, ...]
    seed: int
    valid_nll: float
    valid_accuracy: float
    test_nll: float
    test_accuracy: float

    def describe(self) -> str:
        parts = "+".join(s.describe() for s in self.specs)
        return f"alpha={self.alpha:g} {parts}"


@dataclass
class EvalReport:
    """Scores per (cell, seed), plus the validation-selected cell summary."""

    rows: list[CellScore]
    metric: str
    selected: tuple[float, tuple[ComponentSpec, ...]]
    selected_test_mean: float
    selected_test_std: float

    def selected_describe(self) -> str:
        parts = "+".join(s.describe() for s in self.selected[1])
        return f"alpha={self.selected[0]:g} {parts}"

    def to_table(self, sep: str = "\t") -> str:
        header = sep.join(
            [
                "cell",
                "seed",
                "valid_nll",
                "valid_accuracy",
                "test_nll",
                "test_accuracy",
            ]
        )
        out = [header]
        for row in self.rows:
            out.append(
                sep.join(
                    [
                        row.describe(),
                        str(row.seed),
                        repr(row.valid_nll),
                        repr(row.valid_accuracy),
                        repr(row.test_nll),
                        repr(row.test_accuracy),
                    ]
                )
            )
        grouped = _group_rows(self.rows)
        for _, rows in sorted(
            grouped.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))
        ):
            out.append(
                sep.join(
                    [
                        rows[0].describe() + " [aggregate]",
                        "-",
                        repr(float(np.mean([r.valid_nll for r in rows]))),
                        repr(float(np.mean([r.valid_accuracy for r in rows]))),
                        repr(float(np.mean([r.test_nll for r in rows]))),
                        repr(float(np.mean([r.test_accuracy for r in rows]))),
                    ]
                )
            )
        return "\n".join(out)

    def to_text(self) -> str:
        lines = [
            f"metric: {self.metric}",
            f"selected: {self.selected_describe()}",
            f"selected_test_{self.metric}_mean: {self.selected_test_mean!r}",
            f"selected_test_{self.metric}_std: {self.selected_test_std!r}",
            "",
            self.to_table(),
        ]
        return "\n".join(lines)


def _group_rows(rows: list[CellScore]) -> dict:
    grouped: dict = {}
    for row in rows:
        grouped.setdefault((row.alpha, row.specs), []).append(row)
    return grouped


def _score_cell(args):
    shape, train, valid, test, alpha, specs, seed, max_iterations, tolerance = args
    T = build_empirical(train, shape)
    config = FitConfig(
        alpha=alpha,
        components=specs,
        max_iterations=max_iterations,
        tolerance=tolerance,
        seed=seed,
    )
    model, _ = fit(T, config)
    try:
        valid_nll = evaluate_density(model, valid).per_sample
    except DomainError:
        valid_nll = math.inf
    try:
        test_nll = evaluate_density(model, test).per_sample
    except DomainError:
        test_nll = math.inf
    return CellScore(
        alpha,
        specs,
        seed,
        valid_nll,
        accuracy(model, valid),
        test_nll,
        accuracy(model, test),
    )


def grid_search(
    train,
    valid,
    test,
    shape,
    grid: GridSpec,
    metric: str = "nll",
    jobs: int = 1,
) -> EvalReport:
    """Fit every grid cell on train data, select on validation, report test.

    ``metric`` is "nll" (lower is better) or "accuracy" (higher is better).
    Models without a background component may put zero mass on held-out
    samples; their NLL is scored as infinity rather than raising, so such
    cells simply lose the selection.
    """
    if metric not in ("nll", "accuracy"):
        raise DomainError(f"metric must be nll or accuracy, got {metric!r}")
    train = as_index_array(train, shape)
    valid = as_index_array(valid, shape)
    test = as_index_array(test, shape)
    tasks = [
        (
            shape,
            train,
            valid,
            test,
            alpha,
            specs,
            grid.base_seed + repeat,
            grid.max_iterations,
            grid.tolerance,
        )
        for alpha, specs in grid.cells(shape)
        for repeat in range(grid.repeats)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_score_cell, tasks))
    else:
        rows = [_score_cell(t) for t in tasks]

    def mean_validation(cell_rows):
        if metric == "nll":
            return float(np.mean([r.valid_nll for r in cell_rows]))
        return -float(np.mean([r.valid_accuracy for r in cell_rows]))

    grouped = _group_rows(rows)
    # deterministic tie-break: better score first, then alpha closer to one
    selected = min(
        grouped.items(),
        key=lambda item: (mean_validation(item[1]), -item[0][0]),
    )[0]
    chosen = grouped[selected]
    if metric == "nll":
        test_scores = [r.test_nll for r in chosen]
    else:
        test_scores = [r.test_accuracy for r in chosen]
    return EvalReport(
        rows=rows,
        metric=metric,
        selected=selected,
        selected_test_mean=float(np.mean(test_scores)),
        selected_test_std=float(np.std(test_scores)),
    )
