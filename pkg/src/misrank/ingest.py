"""Panel files, filings directories, MD&A extraction and text alignment."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import requests

from .errors import NetworkError, NotFound, ParseError, RateLimited, SchemaError, SectionNotFound, UsageError
from .panel import RAW_FIELDS, FilingRecord, MisstatementLabel, Panel, build_panel, check_company, check_year

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ("company_id", "fiscal_year", "misstated", "restatement_year") + RAW_FIELDS


@dataclass(frozen=True)
class RawFiling:
    company: str
    fiscal_year: int
    body: str

    def __post_init__(self):
        check_company(self.company)
        check_year(self.fiscal_year)
        if not self.body:
            raise UsageError("filing body is empty")


# --------------------------------------------------------------------------
# financial panel files


def _parse_int(text, row, column):
    try:
        return int(text)
    except ValueError:
        raise ParseError(row, column, f"expected integer, got {text!r}") from None


def parse_financial_table(stream) -> list:
    """Parse a panel CSV (text stream or string) into FilingRecords."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("panel file has no header row") from None
    missing = [c for c in PANEL_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    pos = {name: header.index(name) for name in PANEL_COLUMNS}

    records = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        cell = {name: row[i].strip() for name, i in pos.items()}

        financials = {}
        for name in RAW_FIELDS:
            text = cell[name]
            if text == "":
                continue
            try:
                value = float(text)
            except ValueError:
                raise ParseError(rowno, name, f"non-numeric value {text!r}") from None
            if not math.isfinite(value):
                raise ParseError(rowno, name, f"non-finite value {text!r}")
            financials[name] = value

        flag = cell["misstated"]
        if flag not in ("0", "1"):
            raise ParseError(rowno, "misstated", f"expected 0 or 1, got {flag!r}")
        restated = cell["restatement_year"]
        label = MisstatementLabel(
            misstated=flag == "1",
            restatement_year=_parse_int(restated, rowno, "restatement_year") if restated else None,
        )
        try:
            records.append(FilingRecord(
                company=cell["company_id"],
                fiscal_year=_parse_int(cell["fiscal_year"], rowno, "fiscal_year"),
                financials=financials,
                label=label,
            ))
        except (UsageError, ValueError) as exc:
            raise ParseError(rowno, "record", str(exc)) from None
    return records


def load_financial_table(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_financial_table(fh)


def _fmt_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def write_financial_table(records: Iterable[FilingRecord], path) -> None:
    """Write records in the panel CSV format (text is not included)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PANEL_COLUMNS)
        for r in records:
            ry = r.label.restatement_year
            writer.writerow(
                [r.company, r.fiscal_year, int(r.misstated), "" if ry is None else ry]
                + [_fmt_number(r.financials[name]) for name in RAW_FIELDS]
            )
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# filings directories


def filing_filename(company: str, year: int) -> str:
    return f"{company}_{year}.txt"


def read_filings_dir(directory) -> dict:
    """Map (company, year) -> raw filing body for every `{company}_{year}.txt`."""
    out = {}
    for path in sorted(Path(directory).glob("*.txt")):
        company, sep, year = path.stem.rpartition("_")
        if not sep or not year.isdigit():
            logger.warning("skipping unrecognised filing name %s", path.name)
            continue
        out[(company, int(year))] = path.read_text(encoding="utf-8")
    return out


def write_filing(directory, filing: RawFiling) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / filing_filename(filing.company, filing.fiscal_year)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(filing.body, encoding="utf-8")
    os.replace(tmp, path)
    return path


# --------------------------------------------------------------------------
# MD&A extraction

_SEP = r"[\s.:\-–—]*"
# "Item 7" not followed by a digit or "A" (that would be 7A or 70)
_ITEM7 = re.compile(
    r"\bitem\s*7(?![0-9a-z])" + _SEP
    + r"(?:management\W{0,3}s\s+discussion(?:\s+and\s+analysis"
    r"(?:\s+of\s+financial\s+condition\s+and\s+results\s+of\s+operations)?)?" + _SEP + r")?",
    re.I,
)
_ITEM7_END = re.compile(r"\bitem\s*(?:7a|8)(?![0-9a-z])", re.I)

_TAG = re.compile(r"<[^<>]*>")
_ENTITY = re.compile(r"&(?:#\d+|#x[0-9a-f]+|[a-z]+);", re.I)
_ATTACHMENT = re.compile(r"<(script|style|xbrl|ix:header)\b.*?</\1\s*>", re.I | re.S)
_WS = re.compile(r"\s+")
_ENTITIES = {"&amp;": "&", "&nbsp;": " ", "&lt;": " ", "&gt;": " ", "&quot;": '"', "&#39;": "'", "&apos;": "'"}


def clean_text(text: str) -> str:
    """Strip markup tags and entities and collapse all whitespace runs.

    Stripping repeats until nothing changes, so stray brackets that close
    around a removed tag and double-escaped entities cannot survive, and
    cleaning is idempotent.
    """
    text = _ATTACHMENT.sub(" ", text)
    while True:
        # every substitution shortens the text, so this terminates
        stripped = _ENTITY.sub(lambda m: _ENTITIES.get(m.group(0).lower(), " "), _TAG.sub(" ", text))
        if stripped == text:
            break
        text = stripped
    return _WS.sub(" ", text).strip()


def extract_mdna(raw: RawFiling | str) -> str:
    """Return the cleaned MD&A section of a 10-K body.

    The section starts at the last "Item 7" heading (earlier hits are
    table-of-contents entries) and ends at the next "Item 7A" or "Item 8".
    """
    body = raw.body if isinstance(raw, RawFiling) else raw
    # headings may be split by tags ("<b>Item</b> 7"), so match on tag-free text
    flat = _WS.sub(" ", _TAG.sub(" ", _ATTACHMENT.sub(" ", body)))
    starts = list(_ITEM7.finditer(flat))
    if not starts:
        raise SectionNotFound("no Item 7 heading found")
    begin = starts[-1].end()
    end_match = _ITEM7_END.search(flat, begin)
    span = flat[begin:end_match.start() if end_match else len(flat)]
    return clean_text(span)


# --------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class AlignResult:
    panel: Panel
    matched: int
    ignored_keys: tuple


def align(financial_records: Iterable[FilingRecord], texts: Mapping, label_source_tag: str = "SYNTH") -> AlignResult:
    records = list(financial_records)
    keys = {r.key for r in records}
    out = [r.with_text(texts[r.key]) if r.key in texts else r for r in records]
    ignored = tuple(sorted(k for k in texts if k not in keys))
    if ignored:
        logger.info("%d texts had no matching financial record", len(ignored))
    matched = sum(1 for r in records if r.key in texts)
    return AlignResult(build_panel(out, label_source_tag), matched, ignored)


def load_panel(panel_path, filings_dir=None, label_source_tag: str = "SYNTH") -> Panel:
    """Load a panel CSV and, optionally, MD&A text from a filings directory."""
    records = load_financial_table(panel_path)
    if filings_dir is None:
        return build_panel(records, label_source_tag)
    texts = {}
    for key, body in read_filings_dir(filings_dir).items():
        try:
            texts[key] = extract_mdna(body)
        except SectionNotFound:
            logger.warning("no MD&A section in filing %s_%s", *key)
    return align(records, texts, label_source_tag).panel


# --------------------------------------------------------------------------
# remote fetching


class RateLimiter:
    """Thread-safe minimum spacing between request starts."""

    def __init__(self, per_second: float = 8.0, clock=time.monotonic, sleep=time.sleep):
        if per_second <= 0:
            raise UsageError("rate ceiling must be positive")
        self.interval = 1.0 / per_second
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class FilingFetcher:
    """HTTP client for 10-K bodies.

    ``endpoint`` is either a URL template with ``{company}`` and ``{year}``
    placeholders or a base URL, in which case ``/{company}_{year}.txt`` is
    appended (the filings-directory naming, so a static file server works).
    """

    def __init__(self, endpoint: str, contact_identity: str, rate: float = 8.0,
                 attempts: int = 3, backoff: float = 0.5, timeout: float = 30.0,
                 session=None, sleep=time.sleep):
        if not contact_identity or not contact_identity.strip():
            raise UsageError("contact identity (user agent) is required")
        self.endpoint = endpoint
        self.headers = {"User-Agent": contact_identity}
        self.limiter = RateLimiter(rate, sleep=sleep)
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep
        self.attempts_made = 0

    def url_for(self, company: str, year: int) -> str:
        if "{company}" in self.endpoint:
            return self.endpoint.format(company=company, year=year)
        return self.endpoint.rstrip("/") + "/" + filing_filename(company, year)

    def fetch(self, company: str, year: int) -> RawFiling:
        url = self.url_for(company, year)
        last = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            self.attempts_made += 1
            try:
                resp = self.session.get(url, headers=self.headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = NetworkError(str(exc))
                continue
            if resp.status_code == 404:
                raise NotFound(f"no filing for ({company}, {year})")
            if resp.status_code == 429:
                last = RateLimited(f"server throttled request for ({company}, {year})")
                continue
            if resp.status_code >= 500:
                last = NetworkError(f"HTTP {resp.status_code} for {url}")
                continue
            if resp.status_code != 200:
                raise NetworkError(f"HTTP {resp.status_code} for {url}")
            if not resp.text:
                raise NotFound(f"empty filing for ({company}, {year})")
            return RawFiling(company, year, resp.text)
        raise last


def fetch_filing(company: str, fiscal_year: int, endpoint: str, contact_identity: str, **kwargs) -> RawFiling:
    return FilingFetcher(endpoint, contact_identity, **kwargs).fetch(company, fiscal_year)
