"""Command-line interface.

One subcommand per workflow: refine predictions from files, generate
comparisons with any ranker source, and run the sweep, baseline, noise,
and bound-validation protocols. Exit codes: 0 success, 2 bad usage or
arguments, 3 malformed data, 4 numeric failure, 5 network trouble.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from collections import deque
from pathlib import Path

from .core import (
    ComparisonOutcome,
    Dataset,
    load_dataset_csv,
    load_references_csv,
    pra,
    save_dataset_csv,
)
from .errors import DataError, NumericError, TransportError, ValidationError
from .experiments import (
    DEFAULT_ALPHAS,
    SweepGrid,
    make_synthetic_dataset,
    run_baseline_delta,
    run_noise_sweep,
    run_oracle_sweep,
    validate_bound,
    write_baseline_csv,
    write_bound_csv,
    write_noise_csv,
    write_sweep_csv,
)
from .fusion import fuse, regularize_rank_variance
from .rank import SolverConfig, solve_rank_estimate
from .rankers import (
    LlmRankerConfig,
    OracleRankerConfig,
    generate_comparisons,
    interactive_rank,
    llm_rank_batch,
    load_comparisons_csv,
    load_replay_transport,
    make_oracle_ranker,
    save_comparisons_csv,
)
from .seeding import derive_rng

logger = logging.getLogger(__name__)

REFINE_HEADER = (
    "id",
    "y_reg",
    "var_reg",
    "y_rank",
    "var_rank",
    "y_fused",
    "var_fused",
    "clamped",
)


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    """Parse "a,b,c" or an inclusive "start:step:stop" range."""
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError("expected start:step:stop")
            start, step, stop = (float(p) for p in parts)
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            values = []
            i = 0
            while True:
                v = round(start + i * step, 10)
                if v > stop + 1e-9:
                    break
                values.append(min(v, stop))
                i += 1
            return tuple(values)
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ValidationError(f"cannot parse {what} {text!r}: {exc}") from exc


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ValidationError(f"cannot parse {what} {text!r}") from exc


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_table(path: str | Path) -> tuple[list[str], dict[str, str], dict[str, float]]:
    """Read any CSV with an ``id`` column; returns (ids, texts, labels).

    ``texts`` has entries only when a ``text`` column exists, ``labels``
    only when a ``y`` column exists.
    """
    path = Path(path)
    try:
        with open(path, newline="") as handle:
            rows = [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = [cell.strip() for cell in rows[0]]
    if "id" not in header:
        raise DataError(f"{path}: missing required column 'id'")
    id_pos = header.index("id")
    text_pos = header.index("text") if "text" in header else None
    y_pos = header.index("y") if "y" in header else None
    ids: list[str] = []
    texts: dict[str, str] = {}
    labels: dict[str, float] = {}
    for offset, row in enumerate(rows[1:]):
        row_num = offset + 2
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {row_num} has {len(row)} cells, header has {len(header)}"
            )
        qid = row[id_pos].strip()
        ids.append(qid)
        if text_pos is not None:
            texts[qid] = row[text_pos]
        if y_pos is not None:
            try:
                y = float(row[y_pos])
            except ValueError as exc:
                raise DataError(
                    f"{path}: row {row_num}: cannot parse y value {row[y_pos]!r}"
                ) from exc
            if not math.isfinite(y):
                raise DataError(f"{path}: row {row_num}: non-finite y value")
            labels[qid] = y
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    if not ids:
        raise DataError(f"{path}: no data rows")
    return ids, texts, labels


def _load_predictions(path: str | Path) -> list[tuple[str, float, float]]:
    path = Path(path)
    try:
        with open(path, newline="") as handle:
            rows = [row for row in csv.reader(handle) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file, expected a header row")
    header = [cell.strip() for cell in rows[0]]
    for required in ("id", "y_reg", "var_reg"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    id_pos, y_pos, var_pos = (header.index(c) for c in ("id", "y_reg", "var_reg"))
    out: list[tuple[str, float, float]] = []
    seen: set[str] = set()
    for offset, row in enumerate(rows[1:]):
        row_num = offset + 2
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {row_num} has {len(row)} cells, header has {len(header)}"
            )
        pid = row[id_pos].strip()
        if pid in seen:
            raise DataError(f"{path}: duplicate prediction id {pid!r}")
        seen.add(pid)
        try:
            y_reg = float(row[y_pos])
            var_reg = float(row[var_pos])
        except ValueError as exc:
            raise DataError(f"{path}: row {row_num}: cannot parse prediction values") from exc
        if not (math.isfinite(y_reg) and math.isfinite(var_reg)):
            raise DataError(f"{path}: row {row_num}: non-finite prediction values")
        if var_reg <= 0:
            raise DataError(f"{path}: row {row_num}: var_reg must be positive")
        out.append((pid, y_reg, var_reg))
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def _dataset_from_args(args: argparse.Namespace) -> Dataset:
    if args.dataset is not None:
        return load_dataset_csv(args.dataset)
    return make_synthetic_dataset(
        n=args.synthetic_n,
        d=args.synthetic_d,
        noise_sd=args.synthetic_noise_sd,
        seed=args.synthetic_seed,
    )


def _add_dataset_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--dataset",
        default=None,
        help="dataset CSV (header with y target, optional id/text, numeric features); "
        "omit to use the built-in synthetic benchmark",
    )
    parser.add_argument("--synthetic-n", type=int, default=260, help="synthetic rows")
    parser.add_argument("--synthetic-d", type=int, default=12, help="synthetic features")
    parser.add_argument(
        "--synthetic-noise-sd", type=float, default=2.2, help="synthetic label noise"
    )
    parser.add_argument("--synthetic-seed", type=int, default=7, help="synthetic data seed")


# ---------------------------------------------------------------------------
# Subcommands


class _Estimate:
    """Minimal value/variance carrier for fusion."""

    __slots__ = ("value", "variance")

    def __init__(self, value: float, variance: float):
        self.value = value
        self.variance = variance


def cmd_refine(args: argparse.Namespace) -> None:
    predictions = _load_predictions(args.predictions)
    references = load_references_csv(args.references)
    comparison_map = load_comparisons_csv(args.comparisons, references.labels_by_id())
    known = {pid for pid, _, _ in predictions}
    for qid in comparison_map:
        if qid not in known:
            raise DataError(
                f"{args.comparisons}: comparisons reference unknown prediction id {qid!r}"
            )
    solver = SolverConfig()
    refined = 0
    lines = [",".join(REFINE_HEADER)]
    for pid, y_reg, var_reg in predictions:
        comparisons = comparison_map.get(pid)
        if comparisons is None or comparisons.is_empty:
            lines.append(
                ",".join([pid, _fmt(y_reg), _fmt(var_reg), "", "", _fmt(y_reg), _fmt(var_reg), ""])
            )
            continue
        estimate = solve_rank_estimate(comparisons, solver)
        rank_var = estimate.variance
        if args.clamp_c > 0:
            rank_var = regularize_rank_variance(rank_var, var_reg, args.clamp_c)
        fused = fuse(
            _Estimate(y_reg, var_reg), _Estimate(estimate.value, rank_var)
        )
        refined += 1
        lines.append(
            ",".join(
                [
                    pid,
                    _fmt(y_reg),
                    _fmt(var_reg),
                    _fmt(estimate.value),
                    _fmt(rank_var),
                    _fmt(fused.value),
                    _fmt(fused.variance),
                    "true" if estimate.clamped else "false",
                ]
            )
        )
    with open(args.out, "w", newline="") as handle:
        handle.write("\n".join(lines) + "\n")
    print(f"refined {refined} of {len(predictions)} predictions -> {args.out}")


def cmd_rank(args: argparse.Namespace) -> None:
    needed = {
        "oracle": ("queries", "references"),
        "file": ("comparisons", "references"),
        "interactive": ("queries", "references"),
        "llm": ("queries", "references"),
    }[args.source]
    missing = [name for name in needed if getattr(args, name) is None]
    if missing:
        flags = ", ".join("--" + name for name in missing)
        raise ValidationError(f"--source {args.source} requires {flags}")
    if args.source == "oracle":
        _rank_oracle(args)
    elif args.source == "file":
        _rank_file(args)
    elif args.source == "interactive":
        _rank_interactive(args)
    else:
        _rank_llm(args)


def _rank_oracle(args: argparse.Namespace) -> None:
    queries = load_references_csv(args.queries)
    references = load_references_csv(args.references)
    ranker = make_oracle_ranker(OracleRankerConfig(accuracy=args.accuracy, seed=args.seed))
    outcomes = []
    for query in queries.references:
        rng = derive_rng("refs", args.seed, query.id)
        comparisons = generate_comparisons(
            query.id, query.label, references, args.k, ranker, rng
        )
        outcomes.extend(comparisons.outcomes)
    save_comparisons_csv(outcomes, args.out)
    print(f"wrote {len(outcomes)} comparisons -> {args.out}")


def _rank_file(args: argparse.Namespace) -> None:
    references = load_references_csv(args.references)
    comparison_map = load_comparisons_csv(args.comparisons, references.labels_by_id())
    outcomes = [out for comps in comparison_map.values() for out in comps.outcomes]
    save_comparisons_csv(outcomes, args.out)
    print(f"validated {len(outcomes)} comparisons -> {args.out}")


def _rank_interactive(args: argparse.Namespace) -> None:
    query_ids, query_texts, _ = _load_table(args.queries)
    references = load_references_csv(args.references)
    _, ref_texts, _ = _load_table(args.references)
    outcomes = []
    for qid in query_ids:
        comparisons = interactive_rank(
            qid,
            references,
            property_name=args.property,
            query_text=query_texts.get(qid),
            ref_texts=ref_texts,
        )
        outcomes.extend(comparisons.outcomes)
    save_comparisons_csv(outcomes, args.out)
    print(f"collected {len(outcomes)} comparisons -> {args.out}")


def _rank_llm(args: argparse.Namespace) -> None:
    query_ids, query_texts, _ = _load_table(args.queries)
    ref_ids, ref_texts, ref_labels = _load_table(args.references)
    for qid in query_ids:
        if qid not in query_texts or not query_texts[qid]:
            raise DataError(f"{args.queries}: query {qid!r} has no text to rank by")
    for rid in ref_ids:
        if rid not in ref_texts or not ref_texts[rid]:
            raise DataError(f"{args.references}: reference {rid!r} has no text to rank by")

    template = (
        Path(args.prompt_template).read_text()
        if args.prompt_template
        else LlmRankerConfig.__dataclass_fields__["prompt_template"].default
    )
    examples = Path(args.examples).read_text() if args.examples else ""
    config = LlmRankerConfig(
        endpoint_url=args.endpoint,
        model_name=args.model,
        prompt_template=template,
        api_key_env_var=args.api_key_env,
        property_description=args.property,
        examples=examples,
        batch_size=args.batch_size,
        max_retries=args.max_retries,
    )
    if args.replay:
        transport = load_replay_transport(args.replay)
    else:
        if not os.environ.get(config.api_key_env_var):
            raise TransportError(
                f"environment variable {config.api_key_env_var} is not set; "
                "the API key is only ever read from it"
            )
        transport = None

    pairs: list[tuple[str, str]] = []
    id_queue: dict[tuple[str, str], deque[tuple[str, str]]] = {}
    for qid in query_ids:
        chosen = list(ref_ids)
        if args.k and args.k < len(chosen):
            rng = derive_rng("refs", args.seed, qid)
            order = rng.permutation(len(chosen))
            chosen = [chosen[i] for i in order[: args.k]]
        for rid in chosen:
            pair = (query_texts[qid], ref_texts[rid])
            pairs.append(pair)
            id_queue.setdefault(pair, deque()).append((qid, rid))

    text_outcomes = llm_rank_batch(pairs, config, transport)
    outcomes = []
    for out in text_outcomes:
        queue = id_queue.get((out.query_id, out.ref_id))
        if not queue:
            continue
        qid, rid = queue.popleft()
        outcomes.append(ComparisonOutcome(query_id=qid, ref_id=rid, query_above=out.query_above))
    save_comparisons_csv(outcomes, args.out)
    print(f"ranked {len(outcomes)} of {len(pairs)} pairs -> {args.out}")
    if args.truth:
        # Reference labels are already known; the truth file only has to
        # cover the queries (it may restate or override references).
        labels = {**ref_labels, **load_references_csv(args.truth).labels_by_id()}
        score = pra(outcomes, labels)
        print(f"PRA against truth: {score:.4f} over {len(outcomes)} pairs")


def cmd_sweep(args: argparse.Namespace) -> None:
    dataset = _dataset_from_args(args)
    grid = SweepGrid(
        accuracies=_parse_float_list(args.accuracies, "accuracies"),
        ks=_parse_int_list(args.ks, "ks"),
        seeds=args.seeds,
        train_size=args.train_size,
        clamp_c=args.clamp_c,
    )
    records = run_oracle_sweep(
        dataset, grid, master_seed=args.seed, threads=args.threads
    )
    write_sweep_csv(records, args.out)
    print(f"wrote {len(records)} sweep records -> {args.out}")


def cmd_baseline(args: argparse.Namespace) -> None:
    dataset = _dataset_from_args(args)
    grid = SweepGrid(
        accuracies=_parse_float_list(args.accuracies, "accuracies"),
        ks=(args.k,),
        seeds=args.seeds,
        train_size=args.train_size,
        clamp_c=args.clamp_c,
    )
    records = run_baseline_delta(
        dataset, grid, args.method, master_seed=args.seed, threads=args.threads
    )
    write_baseline_csv(records, args.out)
    print(f"wrote {len(records)} baseline records -> {args.out}")


def cmd_noise(args: argparse.Namespace) -> None:
    dataset = _dataset_from_args(args)
    result = run_noise_sweep(
        dataset,
        bs=_parse_float_list(args.bs, "bs"),
        k=args.k,
        accuracy=args.accuracy,
        seeds=args.seeds,
        train_size=args.train_size,
        master_seed=args.seed,
    )
    write_noise_csv(result, args.out)
    print(
        f"rank variance mean {result.rank_var_mean:.3f}, sd {result.rank_var_sd:.3f}; "
        f"wrote {len(result.records)} records -> {args.out}"
    )


def cmd_validate_bound(args: argparse.Namespace) -> None:
    alphas = _parse_float_list(args.alphas, "alphas")
    results = validate_bound(alphas, n_samples=args.samples, seed=args.seed)
    write_bound_csv(results, args.samples, args.out)
    worst = max(abs(ratio - alpha) for alpha, ratio in results)
    print(f"max |empirical - alpha| = {worst:.5f} over {len(results)} alphas -> {args.out}")


def cmd_make_synthetic(args: argparse.Namespace) -> None:
    dataset = make_synthetic_dataset(
        n=args.n, d=args.d, noise_sd=args.noise_sd, seed=args.seed
    )
    save_dataset_csv(dataset, args.out)
    print(f"wrote {len(dataset)} rows -> {args.out}")


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankrefine",
        description="Refine regression predictions with pairwise-ranking evidence.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "refine",
        help="fuse regressor predictions with comparisons from files",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--predictions", required=True, help="CSV with id,y_reg,var_reg")
    p.add_argument("--references", required=True, help="CSV with id,y for the references")
    p.add_argument("--comparisons", required=True, help="CSV with query_id,ref_id,outcome")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument(
        "--clamp-c",
        type=float,
        default=0.0,
        help="clamp rank variance below at c * var_reg (0 disables)",
    )
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser(
        "rank",
        help="generate a comparisons CSV from a ranker source",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument(
        "--source",
        required=True,
        choices=("oracle", "file", "interactive", "llm"),
        help="where comparisons come from",
    )
    p.add_argument("--queries", help="CSV of queries (id column; text/y as the source needs)")
    p.add_argument("--references", help="CSV of references (id,y; text for llm/interactive)")
    p.add_argument("--comparisons", help="existing comparisons CSV (file source)")
    p.add_argument("--out", required=True, help="output comparisons CSV")
    p.add_argument("--k", type=int, default=20, help="references compared per query")
    p.add_argument("--seed", type=int, default=0, help="sampling / oracle seed")
    p.add_argument("--accuracy", type=float, default=0.8, help="oracle accuracy")
    p.add_argument("--property", default="the property of interest", help="property name")
    p.add_argument("--endpoint", default="", help="chat-completion endpoint URL (llm)")
    p.add_argument("--model", default="", help="model name (llm)")
    p.add_argument(
        "--api-key-env",
        default="RANKREFINE_API_KEY",
        help="environment variable holding the API key (llm)",
    )
    p.add_argument("--prompt-template", default=None, help="prompt template file (llm)")
    p.add_argument("--examples", default=None, help="few-shot examples file (llm)")
    p.add_argument("--batch-size", type=int, default=20, help="pairs per request (llm)")
    p.add_argument("--max-retries", type=int, default=3, help="retries per pair (llm)")
    p.add_argument(
        "--replay",
        default=None,
        help="JSON file of recorded responses; answers come from it instead of the network (llm)",
    )
    p.add_argument("--truth", default=None, help="CSV with id,y to score PRA against (llm)")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser(
        "sweep",
        help="run the oracle-ranker sweep over (seed, accuracy, k)",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_dataset_options(p)
    p.add_argument(
        "--accuracies",
        default="0.50:0.05:1.00",
        help="comma list or start:step:stop range of oracle accuracies",
    )
    p.add_argument("--ks", default="10,20,30", help="comma list of comparison counts")
    p.add_argument("--seeds", type=int, default=5, help="number of re-split seeds")
    p.add_argument("--train-size", type=int, default=50, help="training rows per split")
    p.add_argument(
        "--clamp-c", type=float, default=0.0, help="rank-variance clamp factor (0 disables)"
    )
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (default: RANKREFINE_THREADS or 1)",
    )
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "baseline",
        help="compare fusion against projection or neighbor smoothing",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_dataset_options(p)
    p.add_argument("--method", required=True, choices=("projection", "rbr"))
    p.add_argument("--accuracies", default="0.50:0.05:1.00", help="oracle accuracies")
    p.add_argument("--k", type=int, default=30, help="comparisons per query")
    p.add_argument("--seeds", type=int, default=5, help="number of re-split seeds")
    p.add_argument("--train-size", type=int, default=50, help="training rows per split")
    p.add_argument(
        "--clamp-c", type=float, default=0.0, help="rank-variance clamp factor (0 disables)"
    )
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser(
        "noise",
        help="perturb rank variances and measure the effect on beta",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_dataset_options(p)
    p.add_argument("--bs", default="0,1,2,3,5,10", help="perturbation half-widths")
    p.add_argument("--k", type=int, default=30, help="comparisons per query")
    p.add_argument("--accuracy", type=float, default=0.8, help="oracle accuracy")
    p.add_argument("--seeds", type=int, default=5, help="number of re-split seeds")
    p.add_argument("--train-size", type=int, default=50, help="training rows per split")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser(
        "validate-bound",
        help="Monte-Carlo check of the fusion error-ratio guarantee",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument(
        "--alphas",
        default=",".join(str(a) for a in DEFAULT_ALPHAS),
        help="target error ratios",
    )
    p.add_argument("--samples", type=int, default=1_000_000, help="Monte-Carlo draws")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_validate_bound)

    p = sub.add_parser(
        "make-synthetic",
        help="write the synthetic benchmark dataset as CSV",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--n", type=int, default=260, help="rows")
    p.add_argument("--d", type=int, default=12, help="features")
    p.add_argument("--noise-sd", type=float, default=2.2, help="label noise sd")
    p.add_argument("--seed", type=int, default=7, help="data seed")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_make_synthetic)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code is None or exc.code == 0:
            return 0
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
