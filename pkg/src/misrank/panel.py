"""Company-year filing records, labels and validated panels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional

from .errors import DuplicateKey, InvalidLabel, UsageError

# Raw COMPUSTAT mnemonics, in panel-file column order.
RAW_FIELDS = (
    "act", "ap", "at", "ceq", "che", "cogs", "csho", "dlc", "invt", "dltis",
    "dltt", "ni", "ppegt", "dp", "rect", "ib", "ivao", "re", "ivst", "lct",
    "lt", "pstk", "sale", "sstk", "txp", "txt", "xint", "prcc_f",
)

MIN_YEAR, MAX_YEAR = 1900, 2100

RecordKey = tuple  # (company, fiscal_year)


def record_key_str(key: RecordKey) -> str:
    return f"{key[0]}_{key[1]}"


def parse_record_key(text: str) -> RecordKey:
    company, _, year = text.rpartition("_")
    return company, int(year)


def check_company(company: str) -> str:
    if not isinstance(company, str) or not company or company != company.strip():
        raise UsageError(f"invalid company id {company!r}")
    return company


def check_year(year: int) -> int:
    if isinstance(year, bool) or int(year) != year or not MIN_YEAR <= year <= MAX_YEAR:
        raise UsageError(f"fiscal year out of range: {year!r}")
    return int(year)


@dataclass(frozen=True)
class MisstatementLabel:
    misstated: bool = False
    restatement_year: Optional[int] = None

    def __post_init__(self):
        if not self.misstated and self.restatement_year is not None:
            raise InvalidLabel("negative label cannot carry a restatement year")
        if self.restatement_year is not None:
            check_year(self.restatement_year)


@dataclass(frozen=True)
class FilingRecord:
    company: str
    fiscal_year: int
    financials: Mapping[str, Optional[float]] = field(default_factory=dict)
    mdna_text: Optional[str] = None
    label: MisstatementLabel = MisstatementLabel()

    def __post_init__(self):
        check_company(self.company)
        check_year(self.fiscal_year)
        unknown = set(self.financials) - set(RAW_FIELDS)
        if unknown:
            raise UsageError(f"unknown financial fields: {sorted(unknown)}")
        full = {}
        for name in RAW_FIELDS:
            value = self.financials.get(name)
            if value is not None:
                value = float(value)
                if math.isnan(value):
                    value = None
            full[name] = value
        for name in ("prcc_f", "csho"):
            if full[name] is not None and full[name] < 0:
                raise UsageError(f"{name} must be non-negative for ({self.company}, {self.fiscal_year})")
        object.__setattr__(self, "financials", full)

    @property
    def key(self) -> RecordKey:
        return (self.company, self.fiscal_year)

    @property
    def misstated(self) -> bool:
        return self.label.misstated

    def with_text(self, text: Optional[str]) -> "FilingRecord":
        return FilingRecord(self.company, self.fiscal_year, self.financials, text, self.label)


@dataclass(frozen=True)
class Panel:
    """Immutable collection of filings sorted by (company, fiscal_year).

    Build instances through :func:`build_panel`, which validates keys and labels.
    """

    records: tuple
    label_source_tag: str = "SYNTH"
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {r.key: r for r in self.records})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[FilingRecord]:
        return iter(self.records)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._index

    def get(self, company: str, year: int) -> Optional[FilingRecord]:
        return self._index.get((company, year))

    def years(self) -> list:
        return sorted({r.fiscal_year for r in self.records})

    def companies(self) -> list:
        return sorted({r.company for r in self.records})

    def in_years(self, years: Iterable[int]) -> list:
        wanted = set(years)
        return [r for r in self.records if r.fiscal_year in wanted]


def build_panel(records: Iterable[FilingRecord], label_source_tag: str = "SYNTH") -> Panel:
    records = list(records)
    if not records:
        raise UsageError("cannot build a panel from zero records")
    seen = set()
    for r in records:
        if r.key in seen:
            raise DuplicateKey(*r.key)
        seen.add(r.key)
        ry = r.label.restatement_year
        if ry is not None and ry < r.fiscal_year:
            raise InvalidLabel(
                f"restatement year {ry} precedes fiscal year {r.fiscal_year} for {r.company}"
            )
    records.sort(key=lambda r: r.key)
    return Panel(tuple(records), label_source_tag)


@dataclass(frozen=True)
class YearStats:
    year: int
    pos: int
    neg: int

    @property
    def total(self) -> int:
        return self.pos + self.neg

    @property
    def ratio(self) -> Optional[float]:
        # negatives per positive; absent when no positives
        return self.neg / self.pos if self.pos else None


def panel_stats(panel: Panel) -> dict:
    """Per-year positive/negative counts, keyed by fiscal year."""
    counts: dict = {}
    for r in panel.records:
        pos, neg = counts.get(r.fiscal_year, (0, 0))
        counts[r.fiscal_year] = (pos + 1, neg) if r.misstated else (pos, neg + 1)
    return {y: YearStats(y, p, n) for y, (p, n) in sorted(counts.items())}


def prevalence(panel: Panel) -> float:
    return sum(r.misstated for r in panel.records) / len(panel)


def format_stats_table(stats: Mapping[int, YearStats]) -> str:
    lines = ["year,pos,neg,total,neg_pos_ratio"]
    for s in stats.values():
        ratio = "" if s.ratio is None else f"{s.ratio:.1f}"
        lines.append(f"{s.year},{s.pos},{s.neg},{s.total},{ratio}")
    pos = sum(s.pos for s in stats.values())
    neg = sum(s.neg for s in stats.values())
    ratio = f"{neg / pos:.1f}" if pos else ""
    lines.append(f"all,{pos},{neg},{pos + neg},{ratio}")
    return "\n".join(lines)
