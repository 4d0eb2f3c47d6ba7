"""File formats and dataset plumbing.

Covers categorical CSV ingestion (first-appearance category coding),
train/valid/test splitting, the versioned plain-text model format
("e2m-model v1"), trace persistence, dense numeric grid files, and the
synthetic low-rank dataset generators used for recovery experiments.

Model files are human-readable text with full-precision decimal floats
(``repr``), so a save/load round trip reproduces every parameter bit for
bit and a second save is byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .models import (
    BackgroundComponent,
    CPComponent,
    MixtureModel,
    TTComponent,
    TuckerComponent,
    init_component,
    materialize_dense,
    scale_tt_cores,
)
from .tensors import DenseTensor, check_shape

MODEL_MAGIC = "e2m-model v1"


@dataclass(frozen=True)
class CategoricalSchema:
    """Feature names and per-feature category order (index = code)."""

    feature_names: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    target_feature: int | None = None

    def __post_init__(self):
        for name, cats in zip(self.feature_names, self.categories):
            if len(cats) == 0:
                raise DomainError(f"feature {name!r} has no categories")
            if len(set(cats)) != len(cats):
                raise DomainError(f"feature {name!r} has duplicate categories")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.categories)

    def encode_rows(self, rows: list[list[str]]) -> np.ndarray:
        lookup = [
            {cat: i for i, cat in enumerate(cats)} for cats in self.categories
        ]
        out = np.empty((len(rows), len(self.feature_names)), dtype=np.int64)
        for r, row in enumerate(rows):
            for d, cell in enumerate(row):
                try:
                    out[r, d] = lookup[d][cell]
                except KeyError:
                    raise DomainError(
                        f"row {r + 1}: unknown category {cell!r} for feature "
                        f"{self.feature_names[d]!r}"
                    ) from None
        return out


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if any(f <= 0 for f in self.fractions):
            raise DomainError("split fractions must be positive")
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise DomainError(f"split fractions sum to {sum(self.fractions)}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth generator: low-rank component mixed with uniform noise."""

    kind: str
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    background_weight: float = 0.10
    seed: int = 0
    sample_counts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("cp", "tt"):
            raise DomainError(f"synthetic kind must be cp or tt, got {self.kind!r}")
        if not 0.0 <= self.background_weight < 1.0:
            raise DomainError("background weight must lie in [0, 1)")
        check_shape(self.shape)


def read_csv_rows(
    path, has_header: bool = False, delimiter: str = ","
) -> tuple[tuple[str, ...], list[list[str]]]:
    """Raw string cells of a CSV plus feature names (synthesized if no header)."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=delimiter)
        rows = [[cell.strip() for cell in row] for row in reader if row]
    if not rows:
        raise DomainError(f"{path}: file is empty")
    if has_header:
        names = tuple(rows[0])
        rows = rows[1:]
        if not rows:
            raise DomainError(f"{path}: no data rows after header")
    else:
        names = tuple(f"f{d}" for d in range(len(rows[0])))
    return names, rows


def load_csv(
    path, has_header: bool = False, delimiter: str = ","
) -> tuple[np.ndarray, CategoricalSchema]:
    """Read a categorical table; categories are coded by first appearance.

    Rejects ragged rows and empty cells with the offending row number.
    Duplicate rows are preserved (multiset semantics).
    """
    names, rows = read_csv_rows(path, has_header, delimiter)
    width = len(names)
    categories: list[list[str]] = [[] for _ in range(width)]
    seen: list[dict[str, int]] = [{} for _ in range(width)]
    samples = np.empty((len(rows), width), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DomainError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {width}"
            )
        for d, cell in enumerate(row):
            if cell == "":
                raise DomainError(f"{path}: row {r + 1} has an empty cell")
            code = seen[d].get(cell)
            if code is None:
                code = len(categories[d])
                seen[d][cell] = code
                categories[d].append(cell)
            samples[r, d] = code
    schema = CategoricalSchema(
        names, tuple(tuple(c) for c in categories), target_feature=width - 1
    )
    return samples, schema


def split(
    samples: np.ndarray, spec: SplitSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint multiset partition: floor(f1*N) / floor(f2*N) / remainder."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    if n < 3:
        raise DomainError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.fractions[0] * n))
    n_valid = int(np.floor(spec.fractions[1] * n))
    train = samples[order[:n_train]]
    valid = samples[order[n_train : n_train + n_valid]]
    test = samples[order[n_train + n_valid :]]
    return train, valid, test


# --- model files -------------------------------------------------------------


def _write_matrix(lines: list[str], matrix: np.ndarray):
    for row in matrix:
        lines.append(" ".join(repr(float(v)) for v in row))


def save_model(path, model: MixtureModel, schema: CategoricalSchema | None = None):
    """Serialize a mixture to the versioned plain-text format."""
    lines = [MODEL_MAGIC]
    lines.append("shape " + " ".join(str(i) for i in model.shape))
    lines.append(
        "weights " + " ".join(repr(float(v)) for v in model.weights)
    )
    lines.append(f"components {model.n_components}")
    for k, comp in enumerate(model.components):
        lines.append(f"component {k} {comp.kind}")
        if comp.kind == "cp":
            lines.append(f"rank {comp.rank}")
            for d, factor in enumerate(comp.factors):
                lines.append(f"factor {d} {factor.shape[0]} {factor.shape[1]}")
                _write_matrix(lines, factor)
        elif comp.kind == "tucker":
            lines.append("ranks " + " ".join(str(r) for r in comp.ranks))
            core2d = comp.core.reshape(-1, comp.ranks[-1])
            lines.append(f"core {core2d.shape[0]} {core2d.shape[1]}")
            _write_matrix(lines, core2d)
            for d, factor in enumerate(comp.factors):
                lines.append(f"factor {d} {factor.shape[0]} {factor.shape[1]}")
                _write_matrix(lines, factor)
        elif comp.kind == "tt":
            lines.append("ranks " + " ".join(str(r) for r in comp.ranks))
            for d, core in enumerate(comp.cores):
                p, i, q = core.shape
                lines.append(f"core {d} {p} {i} {q}")
                _write_matrix(lines, core.reshape(p * i, q))
        elif comp.kind == "background":
            pass
        else:  # pragma: no cover
            raise DomainError(f"cannot serialize component kind {comp.kind!r}")
    if schema is not None:
        lines.append(f"schema {len(schema.feature_names)}")
        for name, cats in zip(schema.feature_names, schema.categories):
            lines.append("\t".join(["feature", name, *cats]))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


class _ModelReader:
    def __init__(self, path):
        with open(path, encoding="utf-8") as handle:
            self.lines = handle.read().splitlines()
        self.pos = 0
        self.path = path

    def next_line(self) -> str:
        if self.pos >= len(self.lines):
            raise DomainError(f"{self.path}: truncated model file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, keyword: str) -> list[str]:
        line = self.next_line()
        parts = line.split()
        if not parts or parts[0] != keyword:
            raise DomainError(
                f"{self.path}: expected {keyword!r}, found {line!r}"
            )
        return parts[1:]

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            cells = self.next_line().split()
            if len(cells) != cols:
                raise DomainError(
                    f"{self.path}: matrix row has {len(cells)} values, expected {cols}"
                )
            out[r] = [float(c) for c in cells]
        return out


def read_model_file(path) -> tuple[MixtureModel, CategoricalSchema | None]:
    """Parse and validate a model file; returns the embedded schema if any."""
    reader = _ModelReader(path)
    magic = reader.next_line()
    if magic != MODEL_MAGIC:
        raise DomainError(
            f"{path}: unsupported model version {magic!r}, expected {MODEL_MAGIC!r}"
        )
    shape = tuple(int(v) for v in reader.expect("shape"))
    check_shape(shape)
    D = len(shape)
    weights = np.array([float(v) for v in reader.expect("weights")])
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-12:
        raise DomainError(f"{path}: weights sum {total:g}")
    if (weights < 0).any():
        raise DomainError(f"{path}: negative mixture weight")
    (n_components,) = (int(v) for v in reader.expect("components"))
    if n_components != len(weights):
        raise DomainError(f"{path}: weight count does not match components")
    components = []
    for k in range(n_components):
        header = reader.expect("component")
        if int(header[0]) != k:
            raise DomainError(f"{path}: component {k} out of order")
        kind = header[1]
        if kind == "cp":
            (rank,) = (int(v) for v in reader.expect("rank"))
            factors = []
            for d in range(D):
                meta = [int(v) for v in reader.expect("factor")]
                if meta != [d, shape[d], rank]:
                    raise DomainError(f"{path}: cp factor header mismatch {meta}")
                factors.append(reader.matrix(shape[d], rank))
            comp = CPComponent(shape, factors)
        elif kind == "tucker":
            ranks = tuple(int(v) for v in reader.expect("ranks"))
            meta = [int(v) for v in reader.expect("core")]
            core = reader.matrix(meta[0], meta[1]).reshape(ranks)
            factors = []
            for d in range(D):
                fmeta = [int(v) for v in reader.expect("factor")]
                if fmeta != [d, shape[d], ranks[d]]:
                    raise DomainError(f"{path}: tucker factor header mismatch {fmeta}")
                factors.append(reader.matrix(shape[d], ranks[d]))
            comp = TuckerComponent(shape, core, factors)
        elif kind == "tt":
            ranks = tuple(int(v) for v in reader.expect("ranks"))
            bonds = (1,) + ranks + (1,)
            cores = []
            for d in range(D):
                meta = [int(v) for v in reader.expect("core")]
                if meta != [d, bonds[d], shape[d], bonds[d + 1]]:
                    raise DomainError(f"{path}: tt core header mismatch {meta}")
                cores.append(
                    reader.matrix(bonds[d] * shape[d], bonds[d + 1]).reshape(
                        bonds[d], shape[d], bonds[d + 1]
                    )
                )
            comp = TTComponent(shape, cores)
        elif kind == "background":
            comp = BackgroundComponent(shape)
        else:
            raise DomainError(f"{path}: unknown component kind {kind!r}")
        if kind != "background":
            for arr in (
                comp.factors
                if kind == "cp"
                else ([comp.core] + comp.factors if kind == "tucker" else comp.cores)
            ):
                if (np.asarray(arr) < 0).any():
                    raise DomainError(f"{path}: negative factor value in component {k}")
            mass = comp.total_mass()
            if abs(mass - 1.0) > 1e-8:
                raise DomainError(
                    f"{path}: component {k} mass {mass:.12g} is not normalized"
                )
        components.append(comp)
    schema = None
    line = reader.next_line()
    if line.startswith("schema"):
        n_features = int(line.split()[1])
        names, cats = [], []
        for _ in range(n_features):
            parts = reader.next_line().split("\t")
            if parts[0] != "feature" or len(parts) < 3:
                raise DomainError(f"{path}: malformed schema line")
            names.append(parts[1])
            cats.append(tuple(parts[2:]))
        schema = CategoricalSchema(
            tuple(names), tuple(cats), target_feature=n_features - 1
        )
        if schema.shape != shape:
            raise DomainError(f"{path}: schema shape {schema.shape} != {shape}")
        line = reader.next_line()
    if line != "end":
        raise DomainError(f"{path}: expected end marker, found {line!r}")
    return MixtureModel(shape, components, weights), schema


def load_model(path) -> MixtureModel:
    return read_model_file(path)[0]


# --- traces and dense grids ---------------------------------------------------


def save_trace(path, trace):
    """Persist a fit trace as line-delimited records."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# iteration\tobjective\tweights\telapsed_seconds\n")
        for line in trace.lines():
            handle.write(line + "\n")
        handle.write(f"# converged: {trace.converged_reason}\n")


def load_trace_objectives(path) -> np.ndarray:
    """Objective column of a persisted trace."""
    objectives = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#") or not line.strip():
                continue
            objectives.append(float(line.split("\t")[1]))
    return np.array(objectives)


def read_dense_grid(path) -> DenseTensor:
    """Read a dense tensor: 'shape I1 ... ID' header, then whitespace values."""
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        if not header or header[0] != "shape":
            raise DomainError(f"{path}: first line must be 'shape I1 ... ID'")
        shape = check_shape(tuple(int(v) for v in header[1:]))
        cells = handle.read().split()
        values = np.array(cells, dtype=np.float64) if cells else np.empty(0)
    expected = int(np.prod(shape))
    if values.size != expected:
        raise DomainError(
            f"{path}: expected {expected} values for shape {shape}, got {values.size}"
        )
    if (values < 0).any():
        raise DomainError(f"{path}: negative values in dense grid")
    return DenseTensor(shape, values.reshape(shape))


def write_dense_grid(path, t: DenseTensor):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("shape " + " ".join(str(i) for i in t.shape) + "\n")
        flat = t.values.reshape(-1, t.shape[-1])
        for row in flat:
            handle.write(" ".join(repr(float(v)) for v in row) + "\n")


# --- synthetic generators -----------------------------------------------------


def synth_lowrank(spec: SyntheticSpec):
    """Ground-truth low-rank mixture plus an i.i.d. sampler over its cells.

    Factor entries are absolute values of standard normal draws; the
    low-rank part is normalized and mixed with the uniform background at the
    requested weight.  The sampler draws by inverse CDF over the dense
    materialization, so the domain is guarded to a million cells.
    """
    model_ss, sampler_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(model_ss)
    dims = spec.shape
    D = len(dims)
    if spec.kind == "cp":
        if len(spec.ranks) != 1:
            raise DomainError("cp synthesis takes one rank")
        R = spec.ranks[0]
        factors = [np.abs(rng.standard_normal((i, R))) for i in dims]
        comp = CPComponent(dims, factors)
        scale = comp.total_mass() ** (-1.0 / D)
        comp = CPComponent(dims, [f * scale for f in factors])
    else:
        if len(spec.ranks) != D - 1:
            raise DomainError(f"tt synthesis takes {D - 1} ranks")
        bonds = (1,) + spec.ranks + (1,)
        cores = [
            np.abs(rng.standard_normal((bonds[d], dims[d], bonds[d + 1])))
            for d in range(D)
        ]
        comp = TTComponent(dims, scale_tt_cores(cores))
    eta_bg = spec.background_weight
    model = MixtureModel(
        dims,
        [comp, BackgroundComponent(dims)],
        np.array([1.0 - eta_bg, eta_bg]),
    )
    dense = materialize_dense(model)
    cdf = np.cumsum(dense.values.reshape(-1))
    cdf /= cdf[-1]
    sampler_rng = np.random.default_rng(sampler_ss)

    def sampler(n: int) -> np.ndarray:
        positions = np.searchsorted(cdf, sampler_rng.random(int(n)), side="right")
        positions = np.minimum(positions, cdf.size - 1)
        return np.stack(np.unravel_index(positions, dims), axis=1).astype(np.int64)

    return model, sampler


def write_samples_csv(path, samples: np.ndarray):
    """Write integer-coded samples as plain CSV rows."""
    samples = np.asarray(samples, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as handle:
        for row in samples:
            handle.write(",".join(str(int(v)) for v in row) + "\n")


def identity_schema(shape: tuple[int, ...]) -> CategoricalSchema:
    """Schema mapping the string form of each code to itself.

    Written next to synthetic models so files produced by the sampler can be
    decoded consistently regardless of first-appearance order.
    """
    return CategoricalSchema(
        tuple(f"f{d}" for d in range(len(shape))),
        tuple(tuple(str(i) for i in range(extent)) for extent in shape),
        target_feature=len(shape) - 1,
    )
