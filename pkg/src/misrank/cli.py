"""Command-line entry point: ``misrank {synth,ingest,featurize,run,report}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error. Every
failure prints a single ``misrank: error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import DataError, MisrankError, NotFound, UsageError
from .experiment import (
    FEATURE_SETS,
    compare_runs,
    export_fold_features,
    load_config,
    run_experiment,
)
from .ingest import (
    FilingFetcher,
    RawFiling,
    align,
    load_financial_table,
    read_filings_dir,
    write_filing,
    write_financial_table,
)
from .panel import format_stats_table, panel_stats
from .synth import DELAY_MODES, SynthParams, generate_panel, start_rate_for_prevalence, write_synthetic
from .temporal import FoldSpec, fold_plan_csv, generate_folds

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("misrank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# synth


def _synth_params(args) -> SynthParams:
    values = {}
    for f in dataclasses.fields(SynthParams):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = tuple(v) if f.name == "year_range" else v
    if args.prevalence is not None:
        if "episode_start_rate" in values:
            raise UsageError("give either --episode-start-rate or --prevalence, not both")
        mean_len = values.get("episode_length_mean", SynthParams.episode_length_mean)
        values["episode_start_rate"] = start_rate_for_prevalence(args.prevalence, mean_len)
    return SynthParams(**values)


def cmd_synth(args) -> int:
    params = _synth_params(args)
    panel, episodes = generate_panel(params)
    paths = write_synthetic(args.out, panel, episodes, params)
    print(format_stats_table(panel_stats(panel)).rstrip("\n"))
    log.info("wrote %d records and %d episodes to %s", len(panel), len(episodes), paths["panel"].parent)
    return EXIT_OK


# --------------------------------------------------------------------------
# ingest


def _fetch_missing(records, filings_dir: Path, args) -> None:
    have = read_filings_dir(filings_dir) if filings_dir.is_dir() else {}
    fetcher = FilingFetcher(args.fetch, args.contact, rate=args.rate)
    for rec in records:
        if rec.key in have:
            continue
        try:
            filing = fetcher.fetch(rec.company, rec.fiscal_year)
        except NotFound:
            log.warning("no filing for %s %d", rec.company, rec.fiscal_year)
            continue
        write_filing(filings_dir, filing)


def cmd_ingest(args) -> int:
    records = load_financial_table(args.panel)
    texts = {}
    if args.fetch:
        if not args.filings or not args.contact:
            raise UsageError("--fetch needs --filings and --contact")
        _fetch_missing(records, Path(args.filings), args)
    if args.filings:
        texts = read_filings_dir(args.filings)
    result = align(records, texts, args.label_source)
    if args.filings:
        log.info("matched %d filings; %d filings had no panel row", result.matched, len(result.ignored_keys))
    if args.out:
        write_financial_table(result.panel.records, args.out)
    print(format_stats_table(panel_stats(result.panel)).rstrip("\n"))
    return EXIT_OK


# --------------------------------------------------------------------------
# featurize / run / report


def _panel_for(config, feature_sets):
    from .ingest import load_panel

    needs_text = any(fs in ("text", "combined") for fs in feature_sets)
    return load_panel(config.panel_path, config.filings_dir if needs_text else None)


def cmd_featurize(args) -> int:
    config = load_config(args.config)
    feature_sets = [args.feature_set] if args.feature_set else list(config.feature_set)
    panel = _panel_for(config, feature_sets)
    folds = generate_folds(panel.years(), config.window, config.gap)
    if args.test_year is not None:
        wanted = FoldSpec(args.test_year, config.window, config.gap)
        if wanted not in folds:
            raise UsageError(f"test year {args.test_year} has no feasible fold")
        folds = [wanted]
    out = Path(args.out)
    for fold in folds:
        for fs in feature_sets:
            export_fold_features(panel, config, fold, fs, out / fs / str(fold.test_year))
    log.info("exported %d fold(s) x %d feature set(s) to %s", len(folds), len(feature_sets), out)
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {k: v for k, v in (("workers", args.workers), ("output_dir", args.output_dir)) if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    if args.plan_only:
        panel = _panel_for(config, ())
        print(fold_plan_csv(generate_folds(panel.years(), config.window, config.gap), config.label_mode), end="")
        return EXIT_OK
    report = run_experiment(config)
    print(report.metrics_csv(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    table = compare_runs(args.runs, args.metric)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="misrank", description="Temporal evaluation of misstatement rankers.")
    parser.add_argument("--version", action="version", version=f"misrank {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labelled panel")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-companies", dest="n_companies", type=int)
    p.add_argument("--year-range", dest="year_range", type=int, nargs=2, metavar=("FIRST", "LAST"))
    p.add_argument("--episode-start-rate", dest="episode_start_rate", type=float)
    p.add_argument("--prevalence", type=float, help="target share of positive reports; sets the start rate")
    p.add_argument("--episode-length-mean", dest="episode_length_mean", type=float)
    p.add_argument("--delay-p", dest="delay_p", type=float)
    p.add_argument("--delay-mode", dest="delay_mode", choices=DELAY_MODES)
    p.add_argument("--fin-shift", dest="fin_shift", type=float)
    p.add_argument("--leak-strength", dest="leak_strength", type=float)
    p.add_argument("--base-vocab-size", dest="base_vocab_size", type=int)
    p.add_argument("--signature-drift", dest="signature_drift", type=float)
    p.add_argument("--text-length", dest="text_length", type=int, help="tokens per document, 0 for no text")
    p.add_argument("--n-risk-words", dest="n_risk_words", type=int)
    p.add_argument("--risk-rate", dest="risk_rate", type=float)
    p.add_argument("--company-mentions", dest="company_mentions", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="build and validate a panel, print per-year label counts")
    p.add_argument("panel", help="financial table CSV")
    p.add_argument("--filings", help="directory of raw filings named {company}_{year}.txt")
    p.add_argument("--out", help="write the aligned panel table here")
    p.add_argument("--label-source", default="SYNTH", help="label provenance tag")
    p.add_argument("--fetch", metavar="ENDPOINT", help="download missing filings into --filings first")
    p.add_argument("--contact", help="contact identity sent with every request")
    p.add_argument("--rate", type=float, default=8.0, help="max requests per second")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="export per-fold feature matrices and vocabularies")
    p.add_argument("config", help="experiment config file")
    p.add_argument("--out", required=True)
    p.add_argument("--test-year", type=int, help="only this fold")
    p.add_argument("--feature-set", choices=FEATURE_SETS, help="override the config's feature sets")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("run", help="run a temporal experiment from a config file")
    p.add_argument("config", help="experiment config file")
    p.add_argument("--workers", type=int, help="override the config's worker count")
    p.add_argument("--output-dir", help="override the config's output directory")
    p.add_argument("--plan-only", action="store_true", help="print the fold plan and exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compare metrics across runs")
    p.add_argument("runs", nargs="+", help="run output directories; the first is the baseline")
    p.add_argument("--metric", default="r_precision",
                   choices=("r_precision", "precision_at_k", "roc_auc", "ndcg", "flip_fraction_overall"))
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


def _one_line(exc: BaseException) -> str:
    text = " ".join(str(exc).split()) or type(exc).__name__
    return f"{type(exc).__name__}: {text}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"misrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        code = EXIT_USAGE
        msg = _one_line(exc)
    except (DataError, OSError, UnicodeDecodeError) as exc:
        code = EXIT_DATA
        msg = _one_line(exc)
    except MisrankError as exc:
        code = EXIT_INTERNAL
        msg = _one_line(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        code = EXIT_INTERNAL
        msg = f"internal error: {_one_line(exc)}"
    print(f"misrank: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
