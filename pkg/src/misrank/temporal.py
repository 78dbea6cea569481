"""Chronological folds, restatement-date label maturation and inner CV splits.

A fold trains on ``window`` consecutive fiscal years that end ``gap`` years
before the test year. Under ``hard`` labels a training positive counts as
known only if its restatement year is strictly before the test year; the
remaining positives are flipped to negative for that fold. Test-year labels
are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InsufficientHistory, MissingRestatementDate, TooFewPositives, UsageError
from .panel import Panel

LABEL_MODES = ("naive", "hard")


@dataclass(frozen=True)
class FoldSpec:
    test_year: int
    window: int = 3
    gap: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise UsageError("window must be at least 1 year")
        if self.gap < 0:
            raise UsageError("gap must be non-negative")

    @property
    def train_years(self) -> tuple:
        last = self.test_year - self.gap - 1
        return tuple(range(last - self.window + 1, last + 1))

    def plan_line(self, mode: str) -> str:
        ys = self.train_years
        return f"{self.test_year},{self.gap},{ys[0]},{ys[-1]},{mode}"


FOLD_PLAN_HEADER = "test_year,gap,train_year_min,train_year_max,mode"


def generate_folds(available_years: Iterable[int], window: int = 3, gap: int = 0) -> list:
    """One fold per test year whose full training window is available."""
    years = sorted(set(available_years))
    if not years:
        raise InsufficientHistory("no years available")
    first, last = years[0], years[-1]
    if last - first + 1 < window + gap + 1:
        raise InsufficientHistory(
            f"{first}-{last} spans {last - first + 1} years; need {window + gap + 1} for window={window}, gap={gap}"
        )
    return [FoldSpec(y, window, gap) for y in range(first + window + gap, last + 1)]


def fold_plan_csv(folds: Sequence[FoldSpec], mode: str) -> str:
    return FOLD_PLAN_HEADER + "\n" + "".join(f.plan_line(mode) + "\n" for f in folds)


@dataclass(frozen=True)
class EffectiveLabelSet:
    labels: Mapping  # record key -> effective label
    flip_log: frozenset

    def __getitem__(self, key) -> bool:
        return self.labels[key]

    def __len__(self) -> int:
        return len(self.labels)

    def keys(self) -> list:
        return list(self.labels)

    def positives(self) -> list:
        return [k for k, v in self.labels.items() if v]


def is_known(restatement_year: Optional[int], test_year: int) -> bool:
    return restatement_year is not None and restatement_year < test_year


def mature_labels(panel: Panel, fold: FoldSpec, mode: str = "naive") -> EffectiveLabelSet:
    if mode not in LABEL_MODES:
        raise UsageError(f"label mode must be one of {LABEL_MODES}, got {mode!r}")
    labels, flipped = {}, set()
    for rec in panel.in_years(fold.train_years):
        label = rec.label.misstated
        if label and mode == "hard":
            ry = rec.label.restatement_year
            if ry is None:
                raise MissingRestatementDate(f"positive record ({rec.company}, {rec.fiscal_year}) has no restatement year")
            if not is_known(ry, fold.test_year):
                label = False
                flipped.add(rec.key)
        labels[rec.key] = label
    return EffectiveLabelSet(labels, frozenset(flipped))


def flip_fraction_by_offset(panel: Panel, fold: FoldSpec) -> dict:
    """Share of true positives already restated, per training-year offset.

    Offset ``k`` refers to fiscal year ``test_year - gap - k``; the value is
    ``None`` when that year has no positives.
    """
    out = {}
    for k in range(1, fold.window + 1):
        year = fold.test_year - fold.gap - k
        known = total = 0
        for rec in panel.in_years([year]):
            if not rec.label.misstated:
                continue
            if rec.label.restatement_year is None:
                raise MissingRestatementDate(f"positive record ({rec.company}, {rec.fiscal_year}) has no restatement year")
            total += 1
            known += is_known(rec.label.restatement_year, fold.test_year)
        out[k] = known / total if total else None
    return out


def inner_cv_splits(train_keys: Sequence, effective_labels, k: int = 5, seed: int = 0) -> list:
    """Stratified k-fold over ``train_keys``; returns (train_part, validation_part) pairs.

    Keys of each class are shuffled with ``seed`` and dealt round-robin,
    positives first, so each part holds floor or ceil of its class share.
    """
    if k < 2:
        raise UsageError("inner CV needs k >= 2")
    keys = list(train_keys)
    pos = [key for key in keys if effective_labels[key]]
    neg = [key for key in keys if not effective_labels[key]]
    if len(pos) < k:
        raise TooFewPositives(k, len(pos))
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(k)]
    offset = 0
    for group in (pos, neg):
        order = rng.permutation(len(group))
        for j, i in enumerate(order):
            parts[(offset + j) % k].append(group[i])
        offset += len(group)
    splits = []
    for i in range(k):
        held = set(parts[i])
        train = [key for key in keys if key not in held]
        valid = [key for key in keys if key in held]
        splits.append((train, valid))
    return splits


def fold_seed(global_seed: int, test_year: int) -> int:
    """Independent per-fold seed derived from (global seed, test year)."""
    return int(np.random.SeedSequence([global_seed, test_year]).generate_state(1)[0])
