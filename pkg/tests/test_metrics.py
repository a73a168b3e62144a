import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mambarate.errors import ConstantInput, EmptyInput, NoSystemIds, TooFewPoints
from mambarate.metrics import (
    MetricReport,
    ScorePair,
    average_ranks,
    evaluate_pairs,
    format_csv,
    format_table,
    kendall_tau,
    mse,
    pearson,
    report,
    spearman,
    system_level,
)
from oracles import brute_average_ranks, brute_kendall, brute_spearman, pearson_direct


def pairs_from(pred, ref, systems=None):
    systems = systems or [None] * len(pred)
    return [ScorePair(f"u{i}", s, float(p), float(r)) for i, (p, r, s) in enumerate(zip(pred, ref, systems))]


class TestMSE:
    def test_identical(self, rng):
        x = rng.normal(size=10)
        assert mse(x, x) == 0.0

    def test_offset(self, rng):
        x = rng.normal(size=10)
        assert mse(x + 0.5, x) == pytest.approx(0.25, abs=1e-15)

    def test_formula(self, rng):
        x, y = rng.normal(size=20), rng.normal(size=20)
        assert mse(x, y) == pytest.approx(sum((a - b) ** 2 for a, b in zip(x, y)) / 20, rel=1e-13)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mse([], [])

    def test_accepts_pairs(self):
        assert mse(pairs_from([1, 2], [1, 4])) == 2.0


class TestPearson:
    def test_affine(self, rng):
        x = rng.normal(size=15)
        assert pearson(2 * x + 1, x) == pytest.approx(1.0, abs=1e-12)
        assert pearson(-x, x) == pytest.approx(-1.0, abs=1e-12)

    def test_direct_formula(self, rng):
        x, y = rng.normal(size=30), rng.normal(size=30)
        assert pearson(x, y) == pytest.approx(pearson_direct(list(x), list(y)), abs=1e-12)

    def test_constant(self):
        with pytest.raises(ConstantInput):
            pearson([1, 2, 3], [2, 2, 2])

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            pearson([1.0], [2.0])

    @given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**32 - 1))
    def test_positive_affine_invariance(self, scale, shift, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=12), r.normal(size=12)
        assert pearson(scale * x + shift, y) == pytest.approx(pearson(x, y), abs=1e-12)


class TestRanks:
    def test_average_ranks_with_ties(self):
        np.testing.assert_array_equal(average_ranks([10, 20, 20, 5]), [2, 3.5, 3.5, 1])

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=10))
    def test_matches_brute_force(self, xs):
        np.testing.assert_array_equal(average_ranks(xs), brute_average_ranks(xs))


class TestSpearman:
    def test_monotone(self, rng):
        x = rng.normal(size=20)
        assert spearman(np.exp(x), x) == pytest.approx(1.0, abs=1e-12)
        assert spearman(-(x**3), x) == pytest.approx(-1.0, abs=1e-12)

    def test_ties_against_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 11))
            x = rng.integers(0, 4, n).astype(float)
            y = rng.integers(0, 4, n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert spearman(x, y) == pytest.approx(brute_spearman(list(x), list(y)), abs=1e-12)


class TestKendall:
    def test_identical_order(self):
        assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0

    def test_three_point_example(self):
        # pairs: (1,2) concordant, (1,3) concordant, (2,3) discordant
        assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)

    def test_ties_against_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            x = rng.integers(0, 3, n).astype(float)
            y = rng.integers(0, 3, n).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            for variant in ("a", "b"):
                assert kendall_tau(x, y, variant) == pytest.approx(
                    brute_kendall(list(x), list(y), variant), abs=1e-12
                )

    def test_larger_inputs_against_oracle(self, rng):
        x = rng.integers(0, 20, 200).astype(float)
        y = x + rng.integers(-5, 6, 200)
        assert kendall_tau(x, y) == pytest.approx(brute_kendall(list(x), list(y)), abs=1e-12)

    def test_constant(self):
        with pytest.raises(ConstantInput):
            kendall_tau([1, 1, 1], [1, 2, 3])

    def test_bad_variant(self):
        with pytest.raises(ValueError):
            kendall_tau([1, 2], [1, 2], variant="c")

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=2, max_size=9))
    def test_monotone_invariance(self, pts):
        x = np.array([p[0] for p in pts], dtype=float)
        y = np.array([p[1] for p in pts], dtype=float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            return
        assert kendall_tau(np.exp(x), y**3) == pytest.approx(kendall_tau(x, y), abs=1e-12)
        assert spearman(np.exp(x), y**3) == pytest.approx(spearman(x, y), abs=1e-12)


class TestSystemLevel:
    def test_hand_computed_means(self):
        pairs = pairs_from([1.0, 3.0, 4.0, 5.0], [2.0, 2.5, 3.0, 4.0], ["A", "A", "B", "B"])
        out = system_level(pairs)
        assert [(p.system_id, p.predicted, p.reference) for p in out] == [
            ("A", 2.0, 2.25),
            ("B", 4.5, 3.5),
        ]

    def test_skips_missing_with_warning(self, caplog):
        pairs = pairs_from([1, 2, 3], [1, 2, 3], ["A", None, "A"])
        with caplog.at_level(logging.WARNING):
            out = system_level(pairs)
        assert len(out) == 1 and out[0].predicted == 2.0
        assert "without a system id" in caplog.text

    def test_no_systems(self):
        with pytest.raises(NoSystemIds):
            system_level(pairs_from([1, 2], [1, 2]))

    def test_single_system_correlations_undefined(self):
        out = system_level(pairs_from([1, 2], [2, 3], ["A", "A"]))
        assert len(out) == 1
        with pytest.raises(TooFewPoints):
            spearman(out)
        rep = report(out, "system")
        assert rep.mse == 1.0 and rep.lcc is None and rep.srcc is None and rep.ktau is None

    def test_utterance_metrics_ignore_system_ids(self, rng):
        pred, ref = rng.uniform(1, 5, 9), rng.uniform(1, 5, 9)
        with_ids = evaluate_pairs(pairs_from(pred, ref, ["A", None, "B"] * 3))
        without = evaluate_pairs(pairs_from(pred, ref))
        assert with_ids[0] == without[0]
        assert len(with_ids) == 2 and len(without) == 1


def test_table_layout():
    reports = [
        MetricReport("utterance", 6, 0.057, 0.922, 0.899, 0.782),
        MetricReport("system", 3, 0.04, 0.963, None, 0.929),
    ]
    expected = (
        "metric         U       S\n"
        "MSE ↓      0.057   0.040\n"
        "LCC ↑      0.922   0.963\n"
        "SRCC ↑     0.899     n/a\n"
        "KTAU ↑     0.782   0.929\n"
        "n              6       3\n"
    )
    assert format_table(reports) == expected


def test_csv_layout():
    reports = [MetricReport("utterance", 2, 0.5, 1.0, 1.0, None)]
    assert format_csv(reports) == "level,n,mse,lcc,srcc,ktau\nutterance,2,0.5,1.0,1.0,\n"
