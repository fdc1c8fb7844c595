"""Reproducible experiment protocols built on the library primitives.

Each run routine derives every random choice from a master seed through
named substreams keyed by seed index, query id, and purpose ("split",
"forest", "oracle", "refs", "noise", "bound"). Cells of a sweep therefore
never share generator state: results are byte-identical whether a sweep
runs serially, threaded, or one cell at a time, and different protocols
that reuse a cell (the noise study at b=0, the baseline deltas) reproduce
its numbers exactly.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import forest as forest_mod
from .baselines import FeasibleInterval, projection_refine, rbr_refine
from .core import Dataset, ReferenceSet, RegressorEstimate, SplitSpec, mae, resplit
from .errors import ValidationError
from .forest import ForestConfig, TrainedForest
from .fusion import fuse, regularize_rank_variance, required_rank_variance
from .rank import RankEstimate, SolverConfig, solve_rank_estimate
from .rankers import OracleRankerConfig, generate_comparisons, make_oracle_ranker
from .seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "RANKREFINE_THREADS"
NOISE_VARIANCE_FLOOR = 1e-9
MIN_BOUND_SAMPLES = 10_000

DEFAULT_ACCURACIES = tuple(round(0.50 + 0.05 * i, 2) for i in range(11))
DEFAULT_KS = (10, 20, 30)
DEFAULT_ALPHAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)


def thread_count(requested: int | None = None) -> int:
    """Worker count: explicit argument, else the RANKREFINE_THREADS variable, else 1."""
    if requested is not None:
        if requested < 1:
            raise ValidationError(f"thread count must be >= 1, got {requested}")
        return requested
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV_VAR, raw)
        return 1
    if value < 1:
        logger.warning("ignoring non-positive %s=%d", THREADS_ENV_VAR, value)
        return 1
    return value


def _run_cells(tasks: Sequence[Callable[[], object]], threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Synthetic data


def synthetic_target(features: np.ndarray) -> np.ndarray:
    """The fixed noiseless response surface of the synthetic benchmark.

    1.2*x0 + 3*x1*x2 over features in [-1, 1]; coordinates beyond the third
    are distractors. The product term carries most of the signal, so a small
    training split leaves plenty of headroom for comparison feedback to
    correct the regressor.
    """
    X = np.asarray(features, dtype=float)
    y = 1.2 * X[:, 0]
    if X.shape[1] > 2:
        y = y + 3.0 * X[:, 1] * X[:, 2]
    return y


def make_synthetic_dataset(
    n: int = 260,
    d: int = 12,
    noise_sd: float = 2.2,
    seed: int = 7,
) -> Dataset:
    """A regression benchmark with known structure and additive Gaussian noise.

    Features are uniform on [-1, 1]^d. Deterministic in (n, d, noise_sd,
    seed). Large enough for a 50-row training split plus a test split by
    construction.
    """
    if n < 60:
        raise ValidationError(f"n must be >= 60, got {n}")
    if d < 1:
        raise ValidationError(f"d must be >= 1, got {d}")
    if not (math.isfinite(noise_sd) and noise_sd >= 0.0):
        raise ValidationError(f"noise_sd must be non-negative, got {noise_sd!r}")
    rng = derive_rng("synthetic", seed, n, d, float(noise_sd))
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    y = synthetic_target(X) + noise_sd * rng.standard_normal(n)
    ids = tuple(f"s{i:04d}" for i in range(n))
    return Dataset(ids=ids, features=X, y=y, name="synthetic")


# ---------------------------------------------------------------------------
# Fusion bound validation


def validate_bound(
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Monte-Carlo check of the error-ratio guarantee of fusion.

    For each target ratio alpha, draws Gaussian regressor errors (variance
    one) and independent Gaussian rank-estimate errors at the variance that
    should shrink the MAE by exactly alpha, fuses them with the production
    weights, and reports (alpha, measured MAE ratio). The measured ratio
    converges to alpha at the usual 1/sqrt(n) Monte-Carlo rate.
    """
    if n_samples < MIN_BOUND_SAMPLES:
        raise ValidationError(
            f"n_samples must be >= {MIN_BOUND_SAMPLES} for a meaningful check, got {n_samples}"
        )
    results: list[tuple[float, float]] = []
    for alpha in alphas:
        alpha = float(alpha)
        rank_var = required_rank_variance(alpha, 1.0)  # validates alpha
        weights = fuse(
            RegressorEstimate(0.0, 1.0), RegressorEstimate(0.0, rank_var)
        )
        rng = derive_rng("bound", seed, alpha)
        reg_err = rng.standard_normal(n_samples)
        rank_err = rng.standard_normal(n_samples) * math.sqrt(rank_var)
        fused_err = weights.weight_reg * reg_err + weights.weight_rank * rank_err
        ratio = float(np.mean(np.abs(fused_err)) / np.mean(np.abs(reg_err)))
        results.append((alpha, ratio))
    return results


# ---------------------------------------------------------------------------
# Oracle sweep over (seed, accuracy, k)


@dataclass(frozen=True)
class SweepGrid:
    """The cells of an oracle sweep and the shared pipeline settings."""

    accuracies: tuple[float, ...] = DEFAULT_ACCURACIES
    ks: tuple[int, ...] = DEFAULT_KS
    seeds: int = 5
    train_size: int = 50
    clamp_c: float = 0.0

    def __post_init__(self) -> None:
        if not self.accuracies:
            raise ValidationError("at least one accuracy is required")
        for a in self.accuracies:
            if not (math.isfinite(a) and 0.5 <= a <= 1.0):
                raise ValidationError(f"accuracy must lie in [0.5, 1.0], got {a!r}")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValidationError("every k must be >= 1")
        if self.seeds < 1:
            raise ValidationError(f"seeds must be >= 1, got {self.seeds}")
        if self.train_size < 2:
            raise ValidationError(f"train_size must be >= 2, got {self.train_size}")
        if not (math.isfinite(self.clamp_c) and self.clamp_c >= 0.0):
            raise ValidationError(f"clamp_c must be >= 0 (0 disables), got {self.clamp_c!r}")


@dataclass(frozen=True)
class SweepRecord:
    """One cell of a sweep: a (dataset, seed, accuracy, k) pipeline run."""

    dataset: str
    seed: int
    accuracy: float
    k: int
    mae_reg: float
    mae_post: float
    beta: float
    mean_rank_variance: float
    clamp_rate: float


@dataclass(frozen=True)
class _SeedContext:
    """Everything about one re-split that does not depend on accuracy or k."""

    seed_index: int
    train: Dataset
    test: Dataset
    references: ReferenceSet
    model: TrainedForest
    reg_values: np.ndarray
    reg_variances: np.ndarray
    mae_reg: float


def _build_seed_context(
    dataset: Dataset,
    seed_index: int,
    master_seed: int,
    train_size: int,
    forest_config: ForestConfig,
) -> _SeedContext:
    split = SplitSpec(train_size=train_size, seed=derive_seed("split", master_seed, seed_index))
    train, test = resplit(dataset, split)
    config = replace(forest_config, seed=derive_seed("forest-seed", master_seed, seed_index))
    model = forest_mod.fit(train, config)
    reg_values, reg_variances = forest_mod.predict_with_variance_matrix(
        model, test.features
    )
    return _SeedContext(
        seed_index=seed_index,
        train=train,
        test=test,
        references=train.to_reference_set(),
        model=model,
        reg_values=reg_values,
        reg_variances=reg_variances,
        mae_reg=mae(reg_values, test.y),
    )


def _query_comparisons(
    ctx: _SeedContext,
    accuracy: float,
    k: int,
    master_seed: int,
):
    """Comparison sets for every test query at one (accuracy, k) cell.

    The reference permutation for a query depends only on (master seed, seed
    index, query id), so cells at the same seed share reference samples: a
    larger k extends a smaller k's sample and a higher accuracy flips a
    subset of a lower accuracy's outcomes rather than redrawing everything.
    """
    oracle = make_oracle_ranker(
        OracleRankerConfig(
            accuracy=accuracy, seed=derive_seed("oracle-seed", master_seed, ctx.seed_index)
        )
    )
    sets = []
    for qid, y_true in zip(ctx.test.ids, ctx.test.y):
        rng = derive_rng("refs", master_seed, ctx.seed_index, qid)
        sets.append(generate_comparisons(qid, float(y_true), ctx.references, k, oracle, rng))
    return sets


def _rank_estimates(
    comparison_sets,
    solver_config: SolverConfig,
) -> list[RankEstimate]:
    return [solve_rank_estimate(comps, solver_config) for comps in comparison_sets]


def _fused_values(
    ctx: _SeedContext,
    estimates: Sequence[RankEstimate],
    clamp_c: float,
    rank_variances: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse each test query; returns (fused values, rank variances used)."""
    fused = np.empty(len(estimates))
    used = np.empty(len(estimates))
    for i, est in enumerate(estimates):
        reg = RegressorEstimate(float(ctx.reg_values[i]), float(ctx.reg_variances[i]))
        rank_var = float(rank_variances[i]) if rank_variances is not None else est.variance
        if clamp_c > 0.0:
            rank_var = regularize_rank_variance(rank_var, reg.variance, clamp_c)
        result = fuse(reg, RegressorEstimate(est.value, rank_var))
        fused[i] = result.value
        used[i] = rank_var
    return fused, used


def _cell_record(
    ctx: _SeedContext,
    dataset_name: str,
    accuracy: float,
    k: int,
    clamp_c: float,
    master_seed: int,
    solver_config: SolverConfig,
) -> SweepRecord:
    comps = _query_comparisons(ctx, accuracy, k, master_seed)
    estimates = _rank_estimates(comps, solver_config)
    fused, used_vars = _fused_values(ctx, estimates, clamp_c)
    mae_post = mae(fused, ctx.test.y)
    return SweepRecord(
        dataset=dataset_name,
        seed=ctx.seed_index,
        accuracy=accuracy,
        k=k,
        mae_reg=ctx.mae_reg,
        mae_post=mae_post,
        beta=mae_post / ctx.mae_reg,
        mean_rank_variance=float(np.mean(used_vars)),
        clamp_rate=float(np.mean([est.clamped for est in estimates])),
    )


def run_oracle_sweep(
    dataset: Dataset,
    grid: SweepGrid = SweepGrid(),
    forest_config: ForestConfig = ForestConfig(),
    solver_config: SolverConfig = SolverConfig(),
    master_seed: int = 0,
    threads: int | None = None,
) -> list[SweepRecord]:
    """Run the full (seed, accuracy, k) grid of simulated-ranker pipelines.

    Order of records: seeds outermost, then accuracies, then ks, matching
    the construction order of the grid. Deterministic in (dataset, grid,
    configs, master_seed) regardless of the thread count.
    """
    workers = thread_count(threads)
    contexts = {
        i: _build_seed_context(dataset, i, master_seed, grid.train_size, forest_config)
        for i in range(grid.seeds)
    }
    tasks = []
    for i in range(grid.seeds):
        for accuracy in grid.accuracies:
            for k in grid.ks:
                tasks.append(
                    lambda ctx=contexts[i], a=accuracy, kk=k: _cell_record(
                        ctx, dataset.name, a, kk, grid.clamp_c, master_seed, solver_config
                    )
                )
    return _run_cells(tasks, workers)


# ---------------------------------------------------------------------------
# Baseline comparisons


@dataclass(frozen=True)
class BaselineDeltaRecord:
    """Paired error ratios of fusion and a baseline on the identical cell."""

    dataset: str
    seed: int
    accuracy: float
    k: int
    beta_fused: float
    beta_baseline: float
    delta: float


def run_baseline_delta(
    dataset: Dataset,
    grid: SweepGrid,
    method: str,
    forest_config: ForestConfig = ForestConfig(),
    solver_config: SolverConfig = SolverConfig(),
    master_seed: int = 0,
    threads: int | None = None,
) -> list[BaselineDeltaRecord]:
    """Compare fusion against a baseline refiner on shared comparisons.

    ``method`` is "projection" (clamp into the comparisons' feasible
    interval) or "rbr" (neighbor smoothing; it ignores comparisons, so its
    column is constant across accuracies). Both routes see exactly the same
    splits, forests, and comparison draws as ``run_oracle_sweep``, so the
    fused betas here match that sweep's records cell for cell. ``delta``
    is beta_fused - beta_baseline (negative favors fusion).
    """
    if method not in ("projection", "rbr"):
        raise ValidationError(f"method must be 'projection' or 'rbr', got {method!r}")
    workers = thread_count(threads)
    contexts = {
        i: _build_seed_context(dataset, i, master_seed, grid.train_size, forest_config)
        for i in range(grid.seeds)
    }
    rbr_betas: dict[tuple[int, int], float] = {}
    if method == "rbr":
        for i, ctx in contexts.items():
            train_values = forest_mod.predict_matrix(ctx.model, ctx.train.features).mean(axis=0)
            for k in grid.ks:
                refined = np.array(
                    [
                        rbr_refine(
                            ctx.test.features[q],
                            float(ctx.reg_values[q]),
                            ctx.train,
                            train_values,
                            k,
                        )
                        for q in range(len(ctx.test))
                    ]
                )
                rbr_betas[(i, k)] = mae(refined, ctx.test.y) / ctx.mae_reg

    def cell(ctx: _SeedContext, accuracy: float, k: int) -> BaselineDeltaRecord:
        comps = _query_comparisons(ctx, accuracy, k, master_seed)
        estimates = _rank_estimates(comps, solver_config)
        fused, _ = _fused_values(ctx, estimates, grid.clamp_c)
        beta_fused = mae(fused, ctx.test.y) / ctx.mae_reg
        if method == "projection":
            projected = np.array(
                [
                    projection_refine(float(ctx.reg_values[q]), comps[q])
                    for q in range(len(ctx.test))
                ]
            )
            inconsistent = float(
                np.mean(
                    [FeasibleInterval.from_comparisons(c).is_empty for c in comps]
                )
            )
            if inconsistent:
                logger.info(
                    "projection: %.0f%% inconsistent intervals at seed=%d accuracy=%.2f k=%d",
                    100 * inconsistent,
                    ctx.seed_index,
                    accuracy,
                    k,
                )
            beta_baseline = mae(projected, ctx.test.y) / ctx.mae_reg
        else:
            beta_baseline = rbr_betas[(ctx.seed_index, k)]
        return BaselineDeltaRecord(
            dataset=dataset.name,
            seed=ctx.seed_index,
            accuracy=accuracy,
            k=k,
            beta_fused=beta_fused,
            beta_baseline=beta_baseline,
            delta=beta_fused - beta_baseline,
        )

    tasks = []
    for i in range(grid.seeds):
        for accuracy in grid.accuracies:
            for k in grid.ks:
                tasks.append(lambda ctx=contexts[i], a=accuracy, kk=k: cell(ctx, a, kk))
    return _run_cells(tasks, workers)


# ---------------------------------------------------------------------------
# Sensitivity to mis-stated rank variances


@dataclass(frozen=True)
class NoiseRecord:
    seed: int
    b: float
    beta: float


@dataclass(frozen=True)
class NoiseSweepResult:
    """Betas under additive perturbation of the rank variances.

    ``rank_var_mean``/``rank_var_sd`` describe the unperturbed variance
    estimates pooled over seeds and queries, which is the scale against
    which the perturbation half-widths b should be read.
    """

    records: tuple[NoiseRecord, ...]
    rank_var_mean: float
    rank_var_sd: float

    def mean_beta(self, b: float) -> float:
        betas = [r.beta for r in self.records if r.b == b]
        if not betas:
            raise ValidationError(f"no records at b={b!r}")
        return float(np.mean(betas))


def run_noise_sweep(
    dataset: Dataset,
    bs: Sequence[float],
    k: int = 30,
    accuracy: float = 0.8,
    seeds: int = 5,
    train_size: int = 50,
    forest_config: ForestConfig = ForestConfig(),
    solver_config: SolverConfig = SolverConfig(),
    master_seed: int = 0,
) -> NoiseSweepResult:
    """Measure how fusion degrades as rank variances are mis-stated.

    Each query's estimated rank variance is shifted by b*u with u uniform on
    [-1, 1] (keyed by query, independent of b) and floored at a small
    positive epsilon before fusing. b=0 leaves every variance bit-identical
    to the unperturbed pipeline, so its betas reproduce the oracle sweep's.
    """
    for b in bs:
        if not (math.isfinite(b) and b >= 0.0):
            raise ValidationError(f"perturbation half-width must be >= 0, got {b!r}")
    if not bs:
        raise ValidationError("at least one perturbation half-width is required")
    records: list[NoiseRecord] = []
    pooled_vars: list[float] = []
    for i in range(seeds):
        ctx = _build_seed_context(dataset, i, master_seed, train_size, forest_config)
        comps = _query_comparisons(ctx, accuracy, k, master_seed)
        estimates = _rank_estimates(comps, solver_config)
        raw_vars = np.array([est.variance for est in estimates])
        pooled_vars.extend(raw_vars.tolist())
        draws = np.array(
            [
                derive_rng("noise", master_seed, i, qid).uniform(-1.0, 1.0)
                for qid in ctx.test.ids
            ]
        )
        for b in bs:
            perturbed = np.maximum(raw_vars + float(b) * draws, NOISE_VARIANCE_FLOOR)
            fused, _ = _fused_values(ctx, estimates, clamp_c=0.0, rank_variances=perturbed)
            records.append(
                NoiseRecord(seed=i, b=float(b), beta=mae(fused, ctx.test.y) / ctx.mae_reg)
            )
    pooled = np.array(pooled_vars)
    return NoiseSweepResult(
        records=tuple(records),
        rank_var_mean=float(np.mean(pooled)),
        rank_var_sd=float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0,
    )


# ---------------------------------------------------------------------------
# CSV output


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    # repr keeps full float precision so reruns produce byte-identical files.
    def cell(value: object) -> str:
        if isinstance(value, float):
            return repr(value)
        return str(value)

    with open(path, "w", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(cell(v) for v in row) + "\n")


def write_sweep_csv(records: Sequence[SweepRecord], path: str | Path) -> None:
    _write_csv(
        path,
        [
            "dataset",
            "seed",
            "accuracy",
            "k",
            "mae_reg",
            "mae_post",
            "beta",
            "mean_rank_variance",
            "clamp_rate",
        ],
        (
            (
                r.dataset,
                r.seed,
                r.accuracy,
                r.k,
                r.mae_reg,
                r.mae_post,
                r.beta,
                r.mean_rank_variance,
                r.clamp_rate,
            )
            for r in records
        ),
    )


def write_bound_csv(
    results: Sequence[tuple[float, float]], n_samples: int, path: str | Path
) -> None:
    _write_csv(
        path,
        ["alpha", "empirical_beta", "n_samples"],
        ((alpha, ratio, n_samples) for alpha, ratio in results),
    )


def write_baseline_csv(records: Sequence[BaselineDeltaRecord], path: str | Path) -> None:
    _write_csv(
        path,
        ["dataset", "seed", "accuracy", "k", "beta_fused", "beta_baseline", "delta"],
        (
            (r.dataset, r.seed, r.accuracy, r.k, r.beta_fused, r.beta_baseline, r.delta)
            for r in records
        ),
    )


def write_noise_csv(result: NoiseSweepResult, path: str | Path) -> None:
    """Mean beta per perturbation half-width, averaged over seeds."""
    bs = sorted({r.b for r in result.records})
    _write_csv(path, ["b", "beta"], ((b, result.mean_beta(b)) for b in bs))
