"""Command-line entry point.

Subcommands: fit, eval, classify, synth, grid, reconstruct.  Metrics go to
stdout as key=value lines; files written on disk are the source of truth.
Exit codes: 0 success, 1 usage error, 2 data/domain error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from . import data_io, tasks
from .errors import DomainError, InternalError
from .fitting import ComponentSpec, FitConfig, fit
from .tensors import build_empirical, dense_to_empirical, normalize_dense


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_int_list(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(int(p) for p in parts)


def _parse_sections(path, section: str):
    """Flat key=value file with repeated [section] blocks."""
    top: dict[str, str] = {}
    blocks: list[dict[str, str]] = []
    current = top
    with open(path, encoding="utf-8") as handle:
        for ln, raw in enumerate(handle, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                if line != f"[{section}]":
                    raise DomainError(f"{path}:{ln}: unexpected section {line}")
                current = {}
                blocks.append(current)
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise DomainError(f"{path}:{ln}: expected 'key = value'")
            current[key.strip()] = value.strip()
    return top, blocks


def _component_specs(blocks, path) -> tuple[ComponentSpec, ...]:
    specs = []
    for block in blocks:
        kind = block.get("kind")
        if kind is None:
            raise DomainError(f"{path}: component section is missing 'kind'")
        ranks_text = block.get("ranks", block.get("rank", ""))
        specs.append(ComponentSpec(kind, _parse_int_list(ranks_text)))
    if not specs:
        raise DomainError(f"{path}: no [component] sections found")
    return tuple(specs)


def load_fit_config(path) -> FitConfig:
    top, blocks = _parse_sections(path, "component")
    if "alpha" not in top:
        raise DomainError(f"{path}: missing required key 'alpha'")
    return FitConfig(
        alpha=float(top["alpha"]),
        components=_component_specs(blocks, path),
        max_iterations=int(top.get("max_iterations", 1200)),
        tolerance=float(top.get("tolerance", 1e-8)),
        seed=int(top.get("seed", 0)),
        trace_every=int(top.get("trace_every", 1)),
        tt_method=top.get("tt_method", "cumulants"),
    )


def _load_encoded(path, args, schema):
    """Rows of ``path`` encoded with ``schema`` (or first appearance if None)."""
    if schema is None:
        samples, schema = data_io.load_csv(path, args.header, args.delimiter)
        return samples, schema
    _, rows = data_io.read_csv_rows(path, args.header, args.delimiter)
    width = len(schema.feature_names)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DomainError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {width}"
            )
    return schema.encode_rows(rows), schema


def cmd_fit(args) -> int:
    config = load_fit_config(args.config)
    samples, schema = data_io.load_csv(args.data, args.header, args.delimiter)
    T = build_empirical(samples, schema.shape)
    model, trace = fit(T, config)
    data_io.save_model(args.out_model, model, schema)
    data_io.save_trace(args.out_trace, trace)
    print(f"objective={trace.objectives[-1]!r}")
    print("eta=" + ",".join(repr(float(v)) for v in model.weights))
    print(f"iterations={trace.total_iterations}")
    print(f"converged={trace.converged_reason}")
    return 0


def cmd_eval(args) -> int:
    model, schema = data_io.read_model_file(args.model)
    samples, _ = _load_encoded(args.data, args, schema)
    score = tasks.evaluate_density(model, samples)
    print(f"nll_total={score.total!r}")
    print(f"nll_per_sample={score.per_sample!r}")
    print(f"count={score.count}")
    return 0


def cmd_classify(args) -> int:
    model, schema = data_io.read_model_file(args.model)
    d_full = len(model.shape)
    _, rows = data_io.read_csv_rows(args.data, args.header, args.delimiter)
    width = len(rows[0])
    if width not in (d_full, d_full - 1):
        raise DomainError(
            f"{args.data}: rows have {width} columns; expected {d_full} "
            f"(labeled) or {d_full - 1} (features only)"
        )
    labeled = width == d_full
    if schema is None:
        encoded, _ = data_io.load_csv(args.data, args.header, args.delimiter)
    else:
        feature_schema = schema if labeled else data_io.CategoricalSchema(
            schema.feature_names[:-1], schema.categories[:-1]
        )
        encoded = feature_schema.encode_rows(rows)
    features = encoded[:, : d_full - 1]
    predictions = tasks.classify(model, features)
    class_names = None
    if schema is not None:
        class_names = schema.categories[-1]
    for p in predictions:
        print(class_names[p] if class_names else int(p))
    if labeled:
        labels = encoded[:, -1]
        print(f"accuracy={float((predictions == labels).mean())!r}")
    return 0


def cmd_synth(args) -> int:
    spec = data_io.SyntheticSpec(
        kind=args.kind,
        shape=_parse_int_list(args.shape),
        ranks=_parse_int_list(args.rank),
        background_weight=args.bg,
        seed=args.seed,
    )
    model, sampler = data_io.synth_lowrank(spec)
    samples = sampler(args.n)
    data_io.write_samples_csv(args.out, samples)
    if args.out_true:
        data_io.save_model(
            args.out_true, model, data_io.identity_schema(spec.shape)
        )
    print(f"samples={args.n}")
    print(f"shape={','.join(str(i) for i in spec.shape)}")
    return 0


def cmd_grid(args) -> int:
    train, schema = data_io.load_csv(args.train, args.header, args.delimiter)
    valid, _ = _load_encoded(args.valid, args, schema)
    test, _ = _load_encoded(args.test, args, schema)
    top, blocks = _parse_sections(args.grid, "structure")
    budget_text = top.get("budget", "auto")
    budget = (
        max(1, train.shape[0] // 2) if budget_text == "auto" else int(budget_text)
    )
    structures = []
    rank_lists = []
    n_lowrank = sum(1 for b in blocks if b.get("kind") != "background")
    for block in blocks:
        kind = block.get("kind")
        if kind is None:
            raise DomainError(f"{args.grid}: structure section missing 'kind'")
        structures.append(kind)
        ranks_text = block.get("ranks", "auto")
        if kind == "background":
            rank_lists.append(())
        elif ranks_text == "auto":
            candidates = tasks.rank_candidates(kind, schema.shape, budget)
            if n_lowrank > 1:
                candidates = candidates[:5]
            rank_lists.append(candidates)
        else:
            rank_lists.append(_parse_int_list(ranks_text))
    alphas = tuple(
        float(a)
        for a in top.get(
            "alphas", ",".join(str(a) for a in tasks.ALPHA_GRID)
        ).replace(",", " ").split()
    )
    grid = tasks.GridSpec(
        alphas=alphas,
        structures=tuple(structures),
        rank_lists=tuple(rank_lists),
        budget=budget,
        repeats=int(top.get("repeats", tasks.DEFAULT_REPEATS)),
        base_seed=int(top.get("seed", 0)),
        max_iterations=int(top.get("max_iterations", 200)),
        tolerance=float(top.get("tolerance", 1e-7)),
    )
    report = tasks.grid_search(
        train, valid, test, schema.shape, grid, args.metric, jobs=args.jobs
    )
    with open(args.out_report, "w", encoding="utf-8") as handle:
        handle.write(report.to_text() + "\n")
    with open(args.out_report + ".tsv", "w", encoding="utf-8") as handle:
        handle.write(report.to_table() + "\n")
    print(f"selected={report.selected_describe()}")
    print(f"test_{args.metric}_mean={report.selected_test_mean!r}")
    print(f"test_{args.metric}_std={report.selected_test_std!r}")
    return 0


def cmd_reconstruct(args) -> int:
    dense = normalize_dense(data_io.read_dense_grid(args.dense))
    T = dense_to_empirical(dense)
    config = load_fit_config(args.config)
    model, trace = fit(T, config)
    if args.out_trace:
        data_io.save_trace(args.out_trace, trace)
    if args.out_model:
        data_io.save_model(args.out_model, model)
    print(f"objective={trace.objectives[-1]!r}")
    print(f"iterations={trace.total_iterations}")
    print(f"converged={trace.converged_reason}")
    return 0


def _add_csv_flags(parser):
    parser.add_argument("--header", action="store_true", help="first row is a header")
    parser.add_argument("--delimiter", default=",", help="CSV delimiter")


def build_parser() -> _Parser:
    parser = _Parser(prog="e2m", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a mixture to categorical CSV data")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-trace", required=True)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="negative log-likelihood of data under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="argmax class predictions per row")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("synth", help="sample from a synthetic low-rank truth")
    p.add_argument("--kind", required=True, choices=("cp", "tt"))
    p.add_argument("--shape", required=True)
    p.add_argument("--rank", required=True)
    p.add_argument("--bg", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("grid", help="rank/alpha grid search with validation")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--metric", choices=("nll", "accuracy"), default="nll")
    p.add_argument("--out-report", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_csv_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("reconstruct", help="fit a dense normalized tensor")
    p.add_argument("--dense", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-trace")
    p.add_argument("--out-model")
    p.set_defaults(func=cmd_reconstruct)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
