"""Likelihood solver: hand-checked values, grid-search agreement, clamping."""

import math

import numpy as np
import pytest
from scipy.special import expit

from rankrefine.core import ComparisonOutcome, ComparisonSet
from rankrefine.errors import ValidationError
from rankrefine.rank import (
    RankEstimate,
    SolverConfig,
    bt_nll,
    fisher_variance,
    search_domain,
    solve_rank_estimate,
)


def _comparison_set(below=(), above=()):
    """Build a ComparisonSet whose references sit below/above the query."""
    labels = {}
    outcomes = []
    for j, label in enumerate(below):
        rid = f"b{j}"
        labels[rid] = float(label)
        outcomes.append(ComparisonOutcome("q", rid, True))
    for j, label in enumerate(above):
        rid = f"a{j}"
        labels[rid] = float(label)
        outcomes.append(ComparisonOutcome("q", rid, False))
    return ComparisonSet.from_outcomes(outcomes, labels)


def _grid_minimum(cs, lo, hi, step=1e-4):
    grid = np.arange(lo, hi + step, step)
    values = [bt_nll(float(g), cs) for g in grid]
    return float(grid[int(np.argmin(values))])


class TestNll:
    def test_single_below_at_zero(self):
        # One reference below, candidate equal to it: -log sigmoid(0) = log 2.
        cs = _comparison_set(below=[0.0])
        assert bt_nll(0.0, cs) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_symmetric_pair(self):
        cs = _comparison_set(below=[-1.0], above=[1.0])
        expected = 2.0 * math.log1p(math.exp(-1.0))
        assert bt_nll(0.0, cs) == pytest.approx(expected, rel=1e-14)

    def test_three_reference_hand_value(self):
        cs = _comparison_set(below=[0.0, 1.0], above=[2.0])
        expected = (
            math.log1p(math.exp(-1.5))
            + math.log1p(math.exp(-0.5))
            + math.log1p(math.exp(-0.5))
        )
        assert bt_nll(1.5, cs) == pytest.approx(expected, rel=1e-14)

    def test_no_overflow_for_extreme_candidates(self):
        cs = _comparison_set(below=[0.0], above=[1.0])
        assert math.isfinite(bt_nll(1e4, cs))
        assert math.isfinite(bt_nll(-1e4, cs))

    def test_convex_along_grid(self):
        cs = _comparison_set(below=[-2.0, 0.5], above=[1.0, 3.0])
        xs = np.linspace(-6.0, 8.0, 400)
        vals = np.array([bt_nll(float(x), cs) for x in xs])
        # Second differences of a strictly convex function stay positive.
        assert np.all(np.diff(vals, 2) > -1e-12)


class TestSearchDomain:
    def test_widened_by_margin(self):
        cs = _comparison_set(below=[0.0], above=[4.0])
        lo, hi = search_domain(cs, margin_factor=1.0)
        assert (lo, hi) == (-4.0, 8.0)

    def test_degenerate_range_uses_unit_width(self):
        cs = _comparison_set(below=[2.0, 2.0])
        lo, hi = search_domain(cs, margin_factor=1.0)
        assert (lo, hi) == (1.0, 3.0)


class TestSolver:
    def test_symmetric_case_solves_to_midpoint(self):
        cs = _comparison_set(below=[-1.0], above=[1.0])
        est = solve_rank_estimate(cs)
        assert est.value == pytest.approx(0.0, abs=1e-7)
        assert not est.clamped
        assert est.nll_at_solution == pytest.approx(bt_nll(est.value, cs), rel=1e-15)

    def test_agrees_with_grid_search(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            k = int(rng.integers(2, 11))
            labels = rng.uniform(-5.0, 5.0, size=k)
            split = int(rng.integers(1, k))  # both sides non-empty
            cs = _comparison_set(below=labels[:split], above=labels[split:])
            est = solve_rank_estimate(cs)
            lo, hi = search_domain(cs, 1.0)
            assert abs(est.value - _grid_minimum(cs, lo, hi)) <= 1e-3
            assert not est.clamped

    def test_one_sided_below_clamps_high(self):
        cs = _comparison_set(below=[0.0, 1.0, 2.0])
        est = solve_rank_estimate(cs)
        _, hi = search_domain(cs, 1.0)
        assert est.clamped
        assert est.value == hi

    def test_one_sided_above_clamps_low(self):
        cs = _comparison_set(above=[0.0, 1.0])
        est = solve_rank_estimate(cs)
        lo, _ = search_domain(cs, 1.0)
        assert est.clamped
        assert est.value == lo

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        labels = rng.uniform(-3.0, 3.0, size=6)
        for shift in (-10.0, 2.5, 100.0):
            base = _comparison_set(below=labels[:3], above=labels[3:])
            moved = _comparison_set(below=labels[:3] + shift, above=labels[3:] + shift)
            a = solve_rank_estimate(base)
            b = solve_rank_estimate(moved)
            assert b.value - a.value == pytest.approx(shift, abs=1e-6)
            assert b.variance == pytest.approx(a.variance, rel=1e-6)

    def test_empty_comparisons_rejected(self):
        with pytest.raises(ValidationError):
            solve_rank_estimate(_comparison_set())

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            SolverConfig(tolerance=0.0)
        with pytest.raises(ValidationError):
            SolverConfig(max_iterations=0)
        with pytest.raises(ValidationError):
            SolverConfig(variance_cap=-1.0)


class TestFisherVariance:
    def test_symmetric_pair_hand_value(self):
        cs = _comparison_set(below=[-1.0], above=[1.0])
        s = expit(1.0)
        expected = 1.0 / (2.0 * s * (1.0 - s))
        assert fisher_variance(0.0, cs) == pytest.approx(expected, rel=1e-9)
        assert fisher_variance(0.0, cs) == pytest.approx(2.5430806, rel=1e-6)

    def test_coincident_references_give_four_over_k(self):
        for k in (1, 2, 5, 10):
            below = [0.0] * (k // 2)
            above = [0.0] * (k - k // 2)
            cs = _comparison_set(below=below, above=above)
            assert fisher_variance(0.0, cs) == pytest.approx(4.0 / k, rel=1e-12)

    def test_grows_with_reference_distance(self):
        gaps = [0.5, 1.0, 2.0, 4.0, 8.0]
        variances = [
            fisher_variance(0.0, _comparison_set(below=[-g], above=[g])) for g in gaps
        ]
        assert all(a < b for a, b in zip(variances, variances[1:]))

    def test_saturated_gaps_hit_the_cap(self):
        # Gaps of 400 leave a tiny but representable curvature; the variance
        # is capped by magnitude rather than via the underflow branch.
        cs = _comparison_set(below=[-400.0], above=[400.0])
        assert fisher_variance(0.0, cs) == 1e12

    def test_underflow_capped_with_log_warning(self, caplog):
        # Past a gap of ~745 the sigmoid product is exactly zero in float64.
        cs = _comparison_set(below=[-800.0], above=[800.0])
        with caplog.at_level("WARNING", logger="rankrefine.rank"):
            v = fisher_variance(0.0, cs)
        assert v == 1e12
        assert any(r.levelname == "WARNING" for r in caplog.records)

    def test_solver_fills_variance_from_curvature(self):
        cs = _comparison_set(below=[-1.0], above=[1.0])
        est = solve_rank_estimate(cs)
        assert est.variance == pytest.approx(
            fisher_variance(est.value, cs), rel=1e-9
        )

    def test_estimate_is_plain_record(self):
        est = RankEstimate(1.0, 2.0, False, 3.0)
        assert (est.value, est.variance, est.clamped) == (1.0, 2.0, False)
