"""Experiment configuration, per-fold pipeline and persisted reports."""

from __future__ import annotations

import csv
import io
import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import finfeat, textfeat
from .errors import ConfigError, NoPositives, SingleClassInput
from .ingest import load_panel
from .metrics import default_k, ndcg, precision_at_k, r_precision, rank, roc_auc
from .models import DEFAULT_C_GRID, LOSSES, ModelConfig, decision_scores, grid_search, train
from .panel import Panel, record_key_str
from .temporal import (
    LABEL_MODES,
    FoldSpec,
    flip_fraction_by_offset,
    fold_plan_csv,
    fold_seed,
    generate_folds,
    mature_labels,
)

logger = logging.getLogger(__name__)

FEATURE_SETS = ("financial", "text", "combined", "company_id_only")
METRICS_HEADER = (
    "test_year", "feature_set", "label_mode", "loss", "C", "r_precision",
    "precision_at_k", "roc_auc", "ndcg", "flip_fraction_overall",
)
RANKING_HEADER = ("rank", "record_key", "score", "gold_label")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    panel_path: str
    output_dir: str
    filings_dir: Optional[str] = None
    feature_set: tuple = ("financial",)
    window: int = 3
    gap: int = 0
    label_mode: str = "naive"
    losses: tuple = LOSSES
    C: tuple = DEFAULT_C_GRID
    inner_k: int = 5
    min_df: int = 2
    max_size: int = 200_000
    alpha: float = 0.5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for fs in self.feature_set:
            if fs not in FEATURE_SETS:
                raise ConfigError(f"unknown feature_set {fs!r}; choose from {', '.join(FEATURE_SETS)}")
        if not self.feature_set:
            raise ConfigError("feature_set is empty")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {', '.join(LABEL_MODES)}")
        for loss in self.losses:
            if loss not in LOSSES:
                raise ConfigError(f"unknown loss {loss!r}")
        if not self.losses or not self.C or any(c <= 0 for c in self.C):
            raise ConfigError("losses and C must be non-empty, C positive")
        if self.window < 1 or self.gap < 0 or self.inner_k < 2 or self.workers < 1:
            raise ConfigError("need window >= 1, gap >= 0, inner_k >= 2, workers >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.min_df < 1 or self.max_size < 1:
            raise ConfigError("min_df and max_size must be at least 1")
        if any(fs in ("text", "combined") for fs in self.feature_set) and not self.filings_dir:
            raise ConfigError("text and combined feature sets need filings_dir")

    def grid(self) -> list:
        return [ModelConfig(loss=loss, C=float(c)) for loss in self.losses for c in self.C]


_LIST_KEYS = {"feature_set": str, "losses": str, "C": float}
_SCALAR_KEYS = {
    "panel_path": str, "output_dir": str, "filings_dir": str, "window": int, "gap": int,
    "label_mode": str, "inner_k": int, "min_df": int, "max_size": int, "alpha": float,
    "seed": int, "workers": int,
}


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated.

    Relative paths resolve against ``base_dir`` when given.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _LIST_KEYS:
                values[key] = tuple(_LIST_KEYS[key](v.strip()) for v in value.split(",") if v.strip())
            elif key in _SCALAR_KEYS:
                values[key] = _SCALAR_KEYS[key](value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    for required in ("panel_path", "output_dir"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    if base_dir is not None:
        for key in ("panel_path", "output_dir", "filings_dir"):
            if key in values and not os.path.isabs(values[key]):
                values[key] = str(Path(base_dir) / values[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# features


class FeatureBuilder:
    """Builds per-fold design matrices; every statistic is fit on training rows only."""

    def __init__(self, panel: Panel, min_df: int = 2, max_size: int = 200_000, alpha: float = 0.5):
        self.panel = panel
        self.min_df = min_df
        self.max_size = max_size
        self.alpha = alpha
        self._fin = None
        self._row = {r.key: i for i, r in enumerate(panel.records)}
        self._tokens = None

    def raw_financial(self, records) -> np.ndarray:
        if self._fin is None:
            self._fin = finfeat.derive_matrix(self.panel, self.panel.records)
        return self._fin[[self._row[r.key] for r in records]]

    def token_streams(self, records) -> list:
        if self._tokens is None:
            self._tokens = {
                r.key: textfeat.normalize_tokens(r.mdna_text)
                for r in self.panel.records if r.mdna_text is not None
            }
        return [self._tokens.get(r.key) for r in records]

    def financial(self, train, test, fold_name=""):
        scaler = finfeat.fit_scaler(self.raw_financial(train), fitted_on=fold_name)
        return (
            finfeat.apply_scaler(scaler, self.raw_financial(train)),
            finfeat.apply_scaler(scaler, self.raw_financial(test)),
            {"scaler": scaler},
        )

    def text(self, train, test):
        train_terms = [textfeat.doc_terms(d) if d is not None else None for d in self.token_streams(train)]
        vocab = textfeat.build_vocab([t for t in train_terms if t is not None], self.min_df, self.max_size)
        test_docs = self.token_streams(test)
        return (
            textfeat.vectorize_many(train_terms, vocab),
            textfeat.vectorize_many(test_docs, vocab),
            {"vocab": vocab},
        )

    def company_id(self, train, test):
        companies = sorted({r.company for r in train})
        col = {c: i for i, c in enumerate(companies)}

        def onehot(records):
            rows, cols = [], []
            for i, r in enumerate(records):
                if r.company in col:
                    rows.append(i)
                    cols.append(col[r.company])
            return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(records), len(companies)))

        return onehot(train), onehot(test), {"companies": companies}

    def build(self, feature_set: str, train, test, fold_name=""):
        if feature_set == "financial":
            return self.financial(train, test, fold_name)
        if feature_set == "text":
            return self.text(train, test)
        if feature_set == "company_id_only":
            return self.company_id(train, test)
        if feature_set == "combined":
            ftr, fte, fart = self.financial(train, test, fold_name)
            ttr, tte, tart = self.text(train, test)
            return (
                textfeat.combine(ttr, ftr, self.alpha),
                textfeat.combine(tte, fte, self.alpha),
                {**fart, **tart},
            )
        raise ConfigError(f"unknown feature_set {feature_set!r}")


def fold_records(panel: Panel, fold: FoldSpec):
    return panel.in_years(fold.train_years), panel.in_years([fold.test_year])


# --------------------------------------------------------------------------
# evaluation


@dataclass
class FoldResult:
    fold: FoldSpec
    feature_set: str
    label_mode: str
    best: ModelConfig
    tuning: tuple
    ranking: list  # (key, score, gold)
    metrics: dict
    flip_fraction_overall: Optional[float]
    known_by_offset: dict

    def metrics_row(self) -> list:
        m = self.metrics
        return [
            self.fold.test_year, self.feature_set, self.label_mode, self.best.loss, _fmt(self.best.C),
            _fmt(m["r_precision"]), _fmt(m["precision_at_k"]), _fmt(m["roc_auc"]), _fmt(m["ndcg"]),
            _fmt(self.flip_fraction_overall),
        ]


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _maybe(fn, *args):
    try:
        return fn(*args)
    except (NoPositives, SingleClassInput):
        return None


def evaluate_fold(builder: FeatureBuilder, fold: FoldSpec, feature_set: str, label_mode: str,
                  grid: Sequence[ModelConfig], inner_k: int, seed: int) -> FoldResult:
    panel = builder.panel
    effective = mature_labels(panel, fold, label_mode)
    train_recs, test_recs = fold_records(panel, fold)
    Xtr, Xte, _ = builder.build(feature_set, train_recs, test_recs, fold_name=str(fold.test_year))
    keys = [r.key for r in train_recs]
    fseed = fold_seed(seed, fold.test_year)

    tuned = grid_search(keys, Xtr, effective, grid, inner_k, fseed)
    y = np.array([effective[k] for k in keys])
    model = train(Xtr, y, tuned.best, seed=fseed)
    scores = decision_scores(model, Xte)

    test_keys = [r.key for r in test_recs]
    gold = {r.key: r.label.misstated for r in test_recs}
    ranked = rank(dict(zip(test_keys, scores.tolist())))
    metrics = {
        "r_precision": _maybe(r_precision, ranked, gold),
        "precision_at_k": precision_at_k(ranked, gold, default_k(len(ranked))),
        "roc_auc": _maybe(roc_auc, dict(zip(test_keys, scores.tolist())), gold),
        "ndcg": _maybe(ndcg, ranked, gold),
    }

    true_pos = sum(r.label.misstated for r in train_recs)
    flip_overall = len(effective.flip_log) / true_pos if true_pos else None
    known = flip_fraction_by_offset(panel, fold) if label_mode == "hard" else {}
    return FoldResult(
        fold=fold,
        feature_set=feature_set,
        label_mode=label_mode,
        best=tuned.best,
        tuning=tuned.losses,
        ranking=[(k, s, gold[k]) for k, s in ranked],
        metrics=metrics,
        flip_fraction_overall=flip_overall,
        known_by_offset=known,
    )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    folds: list
    results: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for res in self.results:
            writer.writerow(res.metrics_row())
        return buf.getvalue()

    def mean(self, metric: str, feature_set: Optional[str] = None, test_years=None) -> float:
        vals = [
            res.metrics[metric] for res in self.results
            if (feature_set is None or res.feature_set == feature_set)
            and (test_years is None or res.fold.test_year in test_years)
            and res.metrics[metric] is not None
        ]
        return float(np.mean(vals)) if vals else float("nan")


_WORKER = {}


def _init_worker(panel, min_df, max_size, alpha):
    _WORKER["builder"] = FeatureBuilder(panel, min_df, max_size, alpha)


def _run_task(args):
    return evaluate_fold(_WORKER["builder"], *args)


def evaluate(panel: Panel, config: ExperimentConfig) -> ExperimentReport:
    """Run every (fold, feature set) pair in memory; nothing is written."""
    folds = generate_folds(panel.years(), config.window, config.gap)
    grid = config.grid()
    tasks = [
        (fold, fs, config.label_mode, grid, config.inner_k, config.seed)
        for fold in folds for fs in config.feature_set
    ]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers, initializer=_init_worker,
            initargs=(panel, config.min_df, config.max_size, config.alpha),
        ) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        builder = FeatureBuilder(panel, config.min_df, config.max_size, config.alpha)
        results = [evaluate_fold(builder, *task) for task in tasks]
    results.sort(key=lambda r: (r.fold.test_year, config.feature_set.index(r.feature_set)))
    return ExperimentReport(config, folds, results)


# --------------------------------------------------------------------------
# persistence


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ranking_path(out: Path, feature_sets: Sequence[str], feature_set: str, test_year: int) -> Path:
    if len(feature_sets) == 1:
        return out / "rankings" / f"{test_year}.csv"
    return out / "rankings" / feature_set / f"{test_year}.csv"


def write_report(report: ExperimentReport, output_dir) -> None:
    out = Path(output_dir)
    cfg = report.config
    _atomic_write(out / "fold_plan.csv", fold_plan_csv(report.folds, cfg.label_mode))
    for res in report.results:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RANKING_HEADER)
        for i, (key, score, gold) in enumerate(res.ranking, start=1):
            writer.writerow([i, record_key_str(key), repr(float(score)), int(gold)])
        _atomic_write(ranking_path(out, cfg.feature_set, res.feature_set, res.fold.test_year), buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("test_year", "feature_set", "loss", "C", "mean_val_log_loss"))
    for res in report.results:
        for config, loss in res.tuning:
            writer.writerow([res.fold.test_year, res.feature_set, config.loss, _fmt(config.C), _fmt(loss)])
    _atomic_write(out / "tuning.csv", buf.getvalue())

    if cfg.label_mode == "hard":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("test_year", "offset", "train_year", "known_fraction"))
        seen = set()
        for res in report.results:
            if res.fold.test_year in seen:
                continue
            seen.add(res.fold.test_year)
            for k, frac in sorted(res.known_by_offset.items()):
                writer.writerow([res.fold.test_year, k, res.fold.test_year - res.fold.gap - k, _fmt(frac)])
        _atomic_write(out / "flip_fractions.csv", buf.getvalue())

    _atomic_write(out / "config.txt", format_config(cfg))
    # metrics last: its presence marks a complete run
    _atomic_write(out / "metrics.csv", report.metrics_csv())


def run_experiment(config: ExperimentConfig, panel: Optional[Panel] = None) -> ExperimentReport:
    """Load inputs, evaluate every fold, then persist all outputs.

    Outputs are only written once every fold has succeeded.
    """
    if panel is None:
        needs_text = any(fs in ("text", "combined") for fs in config.feature_set)
        panel = load_panel(config.panel_path, config.filings_dir if needs_text else None)
    report = evaluate(panel, config)
    write_report(report, config.output_dir)
    return report


# --------------------------------------------------------------------------
# featurize / report helpers


def export_fold_features(panel: Panel, config: ExperimentConfig, fold: FoldSpec, feature_set: str, out_dir) -> dict:
    """Write one fold's train/test matrices, keys and fitted transforms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    builder = FeatureBuilder(panel, config.min_df, config.max_size, config.alpha)
    effective = mature_labels(panel, fold, config.label_mode)
    train_recs, test_recs = fold_records(panel, fold)
    Xtr, Xte, artifacts = builder.build(feature_set, train_recs, test_recs, str(fold.test_year))
    paths = {}
    for name, X in (("train", Xtr), ("test", Xte)):
        paths[name] = out / f"{name}.npz"
        sp.save_npz(paths[name], sp.csr_matrix(X))
    key_rows = [("record_key", "label")]
    key_rows += [(record_key_str(r.key), int(effective[r.key])) for r in train_recs]
    _atomic_write(out / "train_keys.csv", "".join(f"{a},{b}\n" for a, b in key_rows))
    key_rows = [("record_key", "label")] + [(record_key_str(r.key), int(r.label.misstated)) for r in test_recs]
    _atomic_write(out / "test_keys.csv", "".join(f"{a},{b}\n" for a, b in key_rows))
    if "vocab" in artifacts:
        _atomic_write(out / "vocab.tsv", artifacts["vocab"].export())
    if "scaler" in artifacts:
        s = artifacts["scaler"]
        lines = ["feature,median,mean,std"] + [
            f"{n},{s.medians[i]!r},{s.means[i]!r},{s.stds[i]!r}" for i, n in enumerate(finfeat.FEATURE_NAMES)
        ]
        _atomic_write(out / "scaler.csv", "\n".join(lines) + "\n")
    return paths


def read_metrics(run_dir) -> list:
    with open(Path(run_dir) / "metrics.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def compare_runs(run_dirs: Sequence, metric: str = "r_precision") -> str:
    """Per-year comparison table of ``metric`` across runs, with deltas to the first run."""
    names = [Path(d).name or str(d) for d in run_dirs]
    tables = []
    for d in run_dirs:
        rows = read_metrics(d)
        tables.append({(int(r["test_year"]), r["feature_set"]): r[metric] for r in rows})
    keys = sorted(set().union(*tables))
    header = ["test_year", "feature_set"] + names + [f"delta_{n}_minus_{names[0]}" for n in names[1:]]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    sums = [[] for _ in names]
    for key in keys:
        vals = [t.get(key, "") for t in tables]
        nums = [float(v) if v not in ("", None) else None for v in vals]
        for i, v in enumerate(nums):
            if v is not None:
                sums[i].append(v)
        deltas = [
            repr(nums[i] - nums[0]) if nums[i] is not None and nums[0] is not None else ""
            for i in range(1, len(names))
        ]
        writer.writerow([key[0], key[1]] + vals + deltas)
    means = [float(np.mean(s)) if s else None for s in sums]
    mean_deltas = [
        repr(means[i] - means[0]) if means[i] is not None and means[0] is not None else ""
        for i in range(1, len(names))
    ]
    writer.writerow(["mean", "all"] + [repr(m) if m is not None else "" for m in means] + mean_deltas)
    return buf.getvalue()
