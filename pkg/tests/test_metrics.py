import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misrank.errors import EmptyInput, KOutOfRange, NoPositives, NonFiniteScore, SingleClassInput
from misrank.metrics import (
    default_k, ndcg, neg_log_loss, precision_at_k, r_precision, rank, ranking_outcome, roc_auc,
)


def ranked_from(scores, truth):
    keys = [f"k{i:04d}" for i in range(len(scores))]
    return rank(dict(zip(keys, scores))), dict(zip(keys, truth))


class TestRank:
    def test_order(self):
        assert rank({"a": 0.2, "b": 0.9}).keys == ("b", "a")

    def test_ties_by_key(self):
        assert rank({"b": 0.5, "a": 0.5}).keys == ("a", "b")

    @pytest.mark.parametrize("bad", [float("nan"), float("inf")])
    def test_non_finite(self, bad):
        with pytest.raises(NonFiniteScore):
            rank({"a": bad})


class TestRPrecision:
    def test_example(self):
        r, t = ranked_from([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert r_precision(r, t) == 0.5
        assert ranking_outcome(r, t).R == 2 and ranking_outcome(r, t).r == 1

    def test_perfect(self):
        r, t = ranked_from([0.9, 0.8, 0.1], [1, 1, 0])
        assert r_precision(r, t) == 1.0

    def test_no_positives(self):
        r, t = ranked_from([0.9, 0.8], [0, 0])
        with pytest.raises(NoPositives):
            r_precision(r, t)

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
    def test_swap_down_across_boundary_never_helps(self, items):
        scores, truth = zip(*items)
        if not any(truth):
            return
        r, t = ranked_from([float(s) for s in scores], truth)
        hits = r.hits(t)
        R = int(hits.sum())
        base = r_precision(r, t)
        for i in range(R):
            for j in range(R, len(hits)):
                if hits[i] and not hits[j]:
                    swapped = hits.copy()
                    swapped[i], swapped[j] = False, True
                    assert swapped[:R].sum() / R <= base


class TestPrecisionAtK:
    def test_k_equals_R(self):
        r, t = ranked_from([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert precision_at_k(r, t, 2) == r_precision(r, t)

    def test_full_list_is_prevalence(self):
        r, t = ranked_from([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert precision_at_k(r, t, 4) == 0.5

    def test_top_one(self):
        r, t = ranked_from([0.9, 0.1], [1, 0])
        assert precision_at_k(r, t, 1) == 1.0

    @pytest.mark.parametrize("k", [0, 5])
    def test_out_of_range(self, k):
        r, t = ranked_from([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        with pytest.raises(KOutOfRange):
            precision_at_k(r, t, k)

    def test_default_k(self):
        assert default_k(1) == 1 and default_k(100) == 1 and default_k(101) == 2 and default_k(3667) == 37


class TestRocAuc:
    def test_perfect(self):
        assert roc_auc([3, 2, 1, 0], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert roc_auc([1, 1, 1, 1], [1, 0, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(SingleClassInput):
            roc_auc([1, 2], [1, 1])

    def test_mapping_form(self):
        assert roc_auc({"a": 0.1, "b": 0.9}, {"a": False, "b": True}) == 1.0

    @settings(max_examples=100)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=30, unique=True), st.data())
    def test_negation_symmetry(self, scores, data):
        truth = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
        if len(set(truth)) < 2:
            return
        assert abs(roc_auc(scores, truth) - (1 - roc_auc([-s for s in scores], truth))) <= 1e-12


class TestNdcg:
    def test_ideal(self):
        r, t = ranked_from([0.9, 0.8, 0.1], [1, 1, 0])
        assert ndcg(r, t) == 1.0

    def test_positive_second_of_two(self):
        r, t = ranked_from([0.9, 0.1], [0, 1])
        assert ndcg(r, t) == pytest.approx(1 / math.log2(3), abs=1e-15)

    def test_no_positives(self):
        r, t = ranked_from([0.9, 0.1], [0, 0])
        with pytest.raises(NoPositives):
            ndcg(r, t)


class TestLogLoss:
    def test_half(self):
        assert neg_log_loss([0.5] * 4, [1, 0, 1, 0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_confident_clamped(self):
        v = neg_log_loss([1.0, 0.0], [1, 0])
        assert 0 <= v <= -math.log1p(-1e-12)
        assert math.isfinite(neg_log_loss([0.0], [1]))

    def test_empty(self):
        with pytest.raises(EmptyInput):
            neg_log_loss([], [])


class TestInvariance:
    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(-30, 30), st.booleans()), min_size=2, max_size=40))
    def test_monotone_transform(self, items):
        scores, truth = zip(*items)
        if not any(truth) or all(truth):
            return
        r1, t = ranked_from(list(scores), truth)
        r2, _ = ranked_from([2.0 ** s * 3 + 1 for s in scores], truth)
        assert r1.keys == r2.keys
        for fn in (r_precision, ndcg):
            assert fn(r1, t) == fn(r2, t)
        assert roc_auc(list(scores), truth) == roc_auc([2.0 ** s * 3 + 1 for s in scores], truth)
