"""Synthetic company-year panels with serial misstatement episodes.

Each company is a two-state chain (clean / in-episode). A clean year starts
an episode with probability ``episode_start_rate``; an episode continues each
year with probability ``1 - 1/episode_length_mean``. Restatement years follow
a geometric delay on {0, 1, 2, ...}, counted from each report
(``per_report``) or from the last report of the episode (``per_episode``).

Financial fields come from per-company AR(1) log-ratio baselines; episode
years add ``fin_shift`` along a signature direction that rotates by
``signature_drift`` radians per year. MD&A text is a bag of pseudo-words with
the company's name always present and risk words whose rate is multiplied by
``leak_strength`` from the company's first episode onwards.

Random streams for episodes, delays, financials and text are independent, so
changing e.g. the episode rate leaves financials and text untouched.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidParams
from .ingest import RawFiling, write_filing, write_financial_table
from .panel import RAW_FIELDS, FilingRecord, MisstatementLabel, Panel, build_panel

DELAY_MODES = ("per_report", "per_episode")

# fields kept as log-ratios to total assets
_RATIO_FIELDS = (
    "act", "ap", "che", "cogs", "dlc", "invt", "dltt", "ppegt", "dp", "rect",
    "ivao", "ivst", "lct", "lt", "pstk", "sale", "txp", "txt", "xint", "sstk", "dltis",
)
# typical log(field / at)
_RATIO_BASE = {
    "act": -0.7, "ap": -2.5, "che": -2.2, "cogs": -0.6, "dlc": -3.0, "invt": -2.0,
    "dltt": -1.6, "ppegt": -0.9, "dp": -3.3, "rect": -1.9, "ivao": -3.5, "ivst": -3.5,
    "lct": -1.3, "lt": -0.6, "pstk": -5.0, "sale": -0.1, "txp": -4.5, "txt": -3.8,
    "xint": -4.0, "sstk": -3.5, "dltis": -2.5,
}
_SYLLABLES = (
    "ba", "be", "bi", "bo", "da", "de", "di", "do", "fa", "fe", "ga", "ge", "ka", "ke", "ki",
    "la", "le", "li", "lo", "ma", "me", "mi", "mo", "na", "ne", "ni", "no", "pa", "pe", "pi",
    "ra", "re", "ri", "ro", "sa", "se", "si", "so", "ta", "te", "ti", "to", "va", "ve", "vi",
    "za", "ze", "zi",
)
SENTENCE_LENGTH = 12


@dataclass(frozen=True)
class SynthParams:
    n_companies: int = 3000
    year_range: tuple = (1998, 2008)
    episode_start_rate: float = 0.0034
    episode_length_mean: float = 3.0
    delay_p: float = 0.3
    delay_mode: str = "per_report"
    fin_shift: float = 1.0
    leak_strength: float = 3.0
    base_vocab_size: int = 2000
    seed: int = 0
    signature_drift: float = 0.0
    text_length: int = 120  # tokens per document; 0 disables text
    n_risk_words: int = 20
    risk_rate: float = 0.01
    company_mentions: int = 3

    def validate(self) -> None:
        first, last = self.year_range
        if last < first:
            raise InvalidParams("year_range must be ascending")
        for name in ("episode_start_rate", "delay_p", "risk_rate"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidParams(f"{name} must lie in (0, 1), got {value}")
        if self.n_companies < 1 or self.base_vocab_size < 1 or self.n_risk_words < 1:
            raise InvalidParams("counts must be at least 1")
        if self.text_length < 0 or self.company_mentions < 0:
            raise InvalidParams("text_length and company_mentions must be non-negative")
        if self.text_length and self.company_mentions > self.text_length:
            raise InvalidParams("company_mentions cannot exceed text_length")
        if self.episode_length_mean < 1.0:
            raise InvalidParams("episode_length_mean must be at least 1 year")
        if self.delay_mode not in DELAY_MODES:
            raise InvalidParams(f"delay_mode must be one of {DELAY_MODES}")
        if not self.leak_strength > 0:
            raise InvalidParams("leak_strength must be positive")
        if self.risk_rate * self.leak_strength >= 1.0:
            raise InvalidParams("risk_rate * leak_strength must stay below 1")

    @property
    def years(self) -> list:
        return list(range(self.year_range[0], self.year_range[1] + 1))


@dataclass(frozen=True)
class EpisodeTruth:
    company: str
    start_year: int
    end_year: int
    restatement_year: int  # per_report mode: the latest restatement of the episode


def start_rate_for_prevalence(prevalence: float, episode_length_mean: float) -> float:
    """Episode start rate whose stationary share of misstated years is ``prevalence``."""
    if not 0.0 < prevalence < 1.0:
        raise InvalidParams("prevalence must lie in (0, 1)")
    q = 1.0 / episode_length_mean
    return prevalence * q / (1.0 - prevalence)


def analytic_known_fraction(delay_p: float, offset_k: int, gap_G: int = 0) -> float:
    """P(restated before the test year) for a report ``gap_G + offset_k`` years earlier."""
    if not 0.0 < delay_p < 1.0:
        raise InvalidParams("delay_p must lie in (0, 1)")
    if offset_k < 1 or gap_G < 0:
        raise InvalidParams("offset_k must be >= 1 and gap_G >= 0")
    return 1.0 - (1.0 - delay_p) ** (gap_G + offset_k)


def company_id(i: int) -> str:
    return f"C{i:05d}"


def _pseudo_word(i: int, n_syllables: int) -> str:
    out = []
    for _ in range(n_syllables):
        i, r = divmod(i, len(_SYLLABLES))
        out.append(_SYLLABLES[r])
    return "".join(out)


def base_words(n: int) -> list:
    return [_pseudo_word(i, 3) for i in range(n)]


def risk_words(n: int) -> list:
    return [_pseudo_word(i, 2) + "ment" for i in range(n)]


def company_name(i: int) -> str:
    return _pseudo_word(i, 3) + "corp"


def _streams(seed: int):
    names = ("episodes", "delays", "financials", "text")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def _simulate_episodes(params: SynthParams, rng) -> np.ndarray:
    """Boolean (company, year) mask of misstated years."""
    n, T = params.n_companies, len(params.years)
    r = params.episode_start_rate
    q = 1.0 / params.episode_length_mean
    u_start = rng.random((n, T))
    u_stay = rng.random((n, T))
    state = np.zeros((n, T), dtype=bool)
    state[:, 0] = u_start[:, 0] < r / (r + q)  # stationary initial state
    for t in range(1, T):
        prev = state[:, t - 1]
        state[:, t] = np.where(prev, u_stay[:, t] < 1.0 - q, u_start[:, t] < r)
    return state


def _episodes_of(row: np.ndarray) -> list:
    spans, t = [], 0
    while t < row.size:
        if row[t]:
            s = t
            while t + 1 < row.size and row[t + 1]:
                t += 1
            spans.append((s, t))
        t += 1
    return spans


def _financials(params: SynthParams, state: np.ndarray, rng) -> dict:
    """Raw fields as (company, year) arrays."""
    n, T = state.shape
    J = len(_RATIO_FIELDS)
    phi = 0.7
    size_mu = rng.normal(6.0, 1.5, n)
    size_noise = rng.normal(0.0, 0.15, (n, T))
    ratio_mu = np.array([_RATIO_BASE[f] for f in _RATIO_FIELDS]) + rng.normal(0.0, 0.3, (n, J))
    ratio_noise = rng.normal(0.0, 0.12, (n, T, J))
    roa_mu = rng.normal(0.03, 0.04, n)
    roa_noise = rng.normal(0.0, 0.03, (n, T))
    reoa_mu = rng.normal(0.1, 0.3, n)
    price_mu = rng.normal(3.0, 0.8, n)
    price_noise = rng.normal(0.0, 0.25, (n, T))
    shares_mu = rng.normal(3.0, 1.0, n)
    issue_u = rng.random((n, T, 2))
    # signature: two orthonormal directions over ratio fields plus ROA
    basis = rng.normal(size=(J + 1, 2))
    basis, _ = np.linalg.qr(basis)

    size = np.empty((n, T))
    ratios = np.empty((n, T, J))
    roa = np.empty((n, T))
    size[:, 0] = size_mu + size_noise[:, 0] / math.sqrt(1 - phi**2)
    ratios[:, 0] = ratio_mu + ratio_noise[:, 0] / math.sqrt(1 - phi**2)
    roa[:, 0] = roa_mu + roa_noise[:, 0]
    for t in range(1, T):
        size[:, t] = size_mu + phi * (size[:, t - 1] - size_mu) + size_noise[:, t] + 0.05
        ratios[:, t] = ratio_mu + phi * (ratios[:, t - 1] - ratio_mu) + ratio_noise[:, t]
        roa[:, t] = roa_mu + phi * (roa[:, t - 1] - roa_mu) + roa_noise[:, t]

    if params.fin_shift:
        for t in range(T):
            angle = params.signature_drift * t
            direction = math.cos(angle) * basis[:, 0] + math.sin(angle) * basis[:, 1]
            hit = state[:, t]
            ratios[hit, t] += params.fin_shift * 0.5 * direction[:J]
            roa[hit, t] += params.fin_shift * 0.05 * direction[J]

    at = np.exp(size)
    out = {"at": at}
    for j, name in enumerate(_RATIO_FIELDS):
        out[name] = at * np.exp(ratios[:, :, j])
    out["sstk"] = np.where(issue_u[:, :, 0] < 0.5, 0.0, out["sstk"])
    out["dltis"] = np.where(issue_u[:, :, 1] < 0.4, 0.0, out["dltis"])
    out["ni"] = at * roa
    out["ib"] = out["ni"] * 0.98
    out["re"] = at * (reoa_mu[:, None] + np.cumsum(roa, axis=1) * 0.5)
    out["ceq"] = at - out["lt"]
    out["csho"] = np.exp(shares_mu)[:, None] * np.ones((1, T))
    out["prcc_f"] = np.exp(price_mu[:, None] + price_noise)
    return {name: np.round(out[name], 3) for name in RAW_FIELDS}


def _documents(params: SynthParams, state: np.ndarray, fin: dict, rng) -> list:
    """MD&A texts as a (company, year) nested list, or None entries when disabled."""
    n, T = state.shape
    if params.text_length == 0:
        return [[None] * T for _ in range(n)]
    L = params.text_length
    vocab = np.array(base_words(params.base_vocab_size))
    risky = np.array(risk_words(params.n_risk_words))
    weights = 1.0 / np.arange(1, vocab.size + 1) ** 1.05
    cdf = np.cumsum(weights) / weights.sum()
    u_kind = rng.random((n, T, L))
    u_word = rng.random((n, T, L))
    flagged = np.maximum.accumulate(state, axis=1)  # at or after first episode start
    rate = np.where(flagged, params.risk_rate * params.leak_strength, params.risk_rate)
    mention_at = set(np.linspace(0, L - 1, params.company_mentions).astype(int).tolist()) if params.company_mentions else set()
    docs = []
    for c in range(n):
        name = company_name(c)
        row = []
        for t, year in enumerate(params.years):
            is_risk = u_kind[c, t] < rate[c, t]
            base = vocab[np.minimum(np.searchsorted(cdf, u_word[c, t]), vocab.size - 1)]
            pick = risky[(u_word[c, t] * risky.size).astype(int)]
            words = np.where(is_risk, pick, base).tolist()
            for pos in mention_at:
                words[pos] = name
            sentences = [
                " ".join(words[i:i + SENTENCE_LENGTH]) for i in range(0, L, SENTENCE_LENGTH)
            ]
            sales = fin["sale"][c, t]
            lead = f"Net sales for fiscal {year} were ${sales:,.1f} million."
            body = " ".join([lead] + [s[0].upper() + s[1:] + "." for s in sentences])
            row.append(body)
        docs.append(row)
    return docs


def generate_panel(params: SynthParams) -> tuple:
    """Return ``(panel, episodes)``; deterministic given ``params.seed``."""
    params.validate()
    streams = _streams(params.seed)
    state = _simulate_episodes(params, streams["episodes"])
    n, T = state.shape
    years = params.years
    last_year = 2100
    delays = streams["delays"].geometric(params.delay_p, size=(n, T)) - 1  # support {0, 1, ...}
    fin = _financials(params, state, streams["financials"])
    docs = _documents(params, state, fin, streams["text"])

    restated = np.zeros((n, T), dtype=np.int64)
    episodes = []
    for c in range(n):
        for s, e in _episodes_of(state[c]):
            if params.delay_mode == "per_episode":
                ry = min(years[e] + int(delays[c, e]), last_year)
                restated[c, s:e + 1] = ry
            else:
                for t in range(s, e + 1):
                    restated[c, t] = min(years[t] + int(delays[c, t]), last_year)
                ry = int(restated[c, s:e + 1].max())
            episodes.append(EpisodeTruth(company_id(c), years[s], years[e], int(ry)))

    records = []
    for c in range(n):
        cid = company_id(c)
        for t, year in enumerate(years):
            label = MisstatementLabel(True, int(restated[c, t])) if state[c, t] else MisstatementLabel()
            records.append(FilingRecord(
                company=cid,
                fiscal_year=year,
                financials={name: float(fin[name][c, t]) for name in RAW_FIELDS},
                mdna_text=docs[c][t],
                label=label,
            ))
    return build_panel(records, "SYNTH"), episodes


# --------------------------------------------------------------------------
# persistence


def filing_body(company: str, year: int, mdna: str) -> str:
    """Wrap MD&A text in a minimal 10-K shaped document."""
    return (
        "<html><body>\n"
        f"<p>ANNUAL REPORT FOR FISCAL YEAR {year} FILED BY {company}</p>\n"
        "<p>TABLE OF CONTENTS</p>\n"
        "<p>Item 7. Management's Discussion and Analysis of Financial Condition and Results of Operations</p>\n"
        "<p>Item 7A. Quantitative and Qualitative Disclosures About Market Risk</p>\n"
        "<p>Item 8. Financial Statements and Supplementary Data</p>\n"
        "<hr/>\n"
        "<p><b>ITEM 7. MANAGEMENT'S DISCUSSION AND ANALYSIS OF FINANCIAL CONDITION AND RESULTS OF OPERATIONS</b></p>\n"
        f"<p>{mdna}</p>\n"
        "<p><b>ITEM 7A. QUANTITATIVE AND QUALITATIVE DISCLOSURES ABOUT MARKET RISK</b></p>\n"
        "<p>Not applicable.</p>\n"
        "<p><b>ITEM 8. FINANCIAL STATEMENTS AND SUPPLEMENTARY DATA</b></p>\n"
        "</body></html>\n"
    )


EPISODE_COLUMNS = ("company_id", "start_year", "end_year", "restatement_year")


def write_synthetic(out_dir, panel: Panel, episodes=(), params: Optional[SynthParams] = None) -> dict:
    """Write ``panel.csv``, ``filings/`` and ``episodes.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"panel": out / "panel.csv", "episodes": out / "episodes.csv"}
    write_financial_table(panel.records, paths["panel"])
    if any(r.mdna_text is not None for r in panel.records):
        paths["filings"] = out / "filings"
        for r in panel.records:
            if r.mdna_text is not None:
                write_filing(paths["filings"], RawFiling(r.company, r.fiscal_year, filing_body(r.company, r.fiscal_year, r.mdna_text)))
    tmp = paths["episodes"].with_name("episodes.csv.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for e in episodes:
            writer.writerow([e.company, e.start_year, e.end_year, e.restatement_year])
    os.replace(tmp, paths["episodes"])
    if params is not None:
        paths["params"] = out / "synth_params.txt"
        paths["params"].write_text(
            "".join(f"{k} = {v}\n" for k, v in asdict(params).items()), encoding="utf-8"
        )
    return paths
