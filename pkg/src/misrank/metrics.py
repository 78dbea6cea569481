"""Ranking and probabilistic evaluation measures.

All ranking measures take the ranked list produced by :func:`rank`, so ties
are resolved the same way everywhere: equal scores are ordered by record key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, KOutOfRange, NoPositives, NonFiniteScore, SingleClassInput

PROB_EPS = 1e-12


@dataclass(frozen=True)
class RankedList:
    keys: tuple
    scores: tuple

    def __len__(self) -> int:
        return len(self.keys)

    def __iter__(self):
        return iter(zip(self.keys, self.scores))

    def hits(self, truth: Mapping) -> np.ndarray:
        return np.fromiter((bool(truth[k]) for k in self.keys), dtype=bool, count=len(self.keys))


def rank(scores: Mapping) -> RankedList:
    for key, s in scores.items():
        if not math.isfinite(s):
            raise NonFiniteScore(f"score for {key!r} is {s}")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedList(tuple(k for k, _ in ordered), tuple(float(s) for _, s in ordered))


@dataclass(frozen=True)
class RankingOutcome:
    R: int
    r: int

    @property
    def r_precision(self) -> float:
        return self.r / self.R


def ranking_outcome(ranked: RankedList, truth: Mapping) -> RankingOutcome:
    hits = ranked.hits(truth)
    R = int(hits.sum())
    return RankingOutcome(R, int(hits[:R].sum()))


def r_precision(ranked: RankedList, truth: Mapping) -> float:
    out = ranking_outcome(ranked, truth)
    if out.R == 0:
        raise NoPositives("R-precision is undefined without positives")
    return out.r_precision


def precision_at_k(ranked: RankedList, truth: Mapping, k: int) -> float:
    if not 1 <= k <= len(ranked):
        raise KOutOfRange(f"k={k} outside 1..{len(ranked)}")
    return float(ranked.hits(truth)[:k].sum()) / k


def roc_auc(scores, truth) -> float:
    """Mann-Whitney AUC: P(random positive outscores random negative), ties = 1/2.

    ``scores``/``truth`` are aligned sequences or same-keyed mappings.
    """
    if isinstance(scores, Mapping):
        keys = list(scores)
        s = np.array([scores[k] for k in keys], dtype=float)
        y = np.array([bool(truth[k]) for k in keys])
    else:
        s = np.asarray(scores, dtype=float)
        y = np.asarray(truth, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("ROC-AUC needs both classes")
    ranks = rankdata(s)  # average ranks resolve ties as 1/2
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ndcg(ranked: RankedList, truth: Mapping) -> float:
    """Binary-gain NDCG over the full list with a log2(rank + 1) discount."""
    hits = ranked.hits(truth)
    R = int(hits.sum())
    if R == 0:
        raise NoPositives("NDCG is undefined without positives")
    discounts = 1.0 / np.log2(np.arange(2, len(hits) + 2))
    return float(discounts[hits].sum() / discounts[:R].sum())


def neg_log_loss(probabilities: Sequence, truth: Sequence) -> float:
    p = np.clip(np.asarray(probabilities, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(truth, dtype=float)
    if p.size == 0:
        raise EmptyInput("log loss of an empty set")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def default_k(n: int) -> int:
    """Cutoff for precision@k in experiment reports: the top 1% of the test year."""
    return max(1, math.ceil(0.01 * n))
