"""Token normalisation, training-window vocabularies and TF-IDF vectors."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import AlphaOutOfRange, EmptyCorpus, UsageError

AMOUNT_TOKEN = "amount_replaced"
DATE_TOKEN = "date_replaced"
NUMBER_TOKEN = "number_replaced"

_NUM = r"\d+(?:[.,]\d+)*"
_CURRENCY = r"[$€£¥]"
_SCALE = r"(?:thousand|million|billion|trillion)s?\b"
_AMOUNT = re.compile(
    rf"{_CURRENCY}\s?{_NUM}(?:\s*{_SCALE})?"
    rf"|(?<![\w.]){_NUM}\s?{_CURRENCY}"
    rf"|(?<![\w.]){_NUM}\s*{_SCALE}",
    re.I,
)
_MONTH = (
    r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?"
    r"|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?"
)
_YEAR = r"(?:19|20)\d{2}"
_DAY = r"\d{1,2}(?:st|nd|rd|th)?"
_DATE = re.compile(
    rf"\b{_MONTH}\s+{_DAY},?\s+{_YEAR}\b"  # March 12, 2002
    rf"|\b{_DAY}\s+{_MONTH},?\s+{_YEAR}\b"  # 12 March 2002
    rf"|\b{_MONTH},?\s+{_YEAR}\b"  # March 2002
    rf"|(?<![\w.,]){_YEAR}(?![\w]|[.,]\d)",  # standalone 19xx/20xx
    re.I,
)
_NUMBER = re.compile(rf"(?<![\w.]){_NUM}%?(?![\w]|[.,]\d)")
_SENTENCE_END = re.compile(r"(?<=[.!?])[\"')\]]*\s+(?=[\"'(\[]?[A-Z0-9])")
_WORD = re.compile(r"\w+")


@dataclass(frozen=True)
class TokenStream:
    """Lower-cased tokens grouped by sentence."""

    sentences: tuple

    @property
    def tokens(self) -> list:
        return [t for s in self.sentences for t in s]

    def __len__(self) -> int:
        return sum(len(s) for s in self.sentences)


def split_sentences(text: str) -> list:
    return [s for s in _SENTENCE_END.split(text) if s.strip()]


def _replace(sentence: str) -> str:
    sentence = _AMOUNT.sub(f" {AMOUNT_TOKEN} ", sentence)
    sentence = _DATE.sub(f" {DATE_TOKEN} ", sentence)
    return _NUMBER.sub(f" {NUMBER_TOKEN} ", sentence)


def normalize_tokens(text: str) -> TokenStream:
    """Sentence-split, replace amounts/dates/numbers, tokenise and lower-case."""
    sentences = []
    for sentence in split_sentences(text or ""):
        tokens = tuple(t.lower() for t in _WORD.findall(_replace(sentence)))
        if tokens:
            sentences.append(tokens)
    return TokenStream(tuple(sentences))


def doc_terms(doc: TokenStream) -> Counter:
    """Uni-gram and within-sentence bi-gram counts; bi-grams are "a b"."""
    counts = Counter()
    for s in doc.sentences:
        counts.update(s)
        counts.update(f"{a} {b}" for a, b in zip(s, s[1:]))
    return counts


@dataclass(frozen=True)
class Vocabulary:
    index: Mapping  # term -> column
    df: Mapping  # term -> document frequency
    n_train_docs: int
    min_df: int
    max_size: Optional[int]

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, term) -> bool:
        return term in self.index

    def terms(self) -> list:
        return sorted(self.index, key=self.index.__getitem__)

    def idf(self) -> np.ndarray:
        df = np.array([self.df[t] for t in self.terms()], dtype=float)
        return np.log((1.0 + self.n_train_docs) / (1.0 + df)) + 1.0

    def export(self) -> str:
        return "".join(f"{t}\t{self.index[t]}\t{self.df[t]}\n" for t in self.terms())


def build_vocab(train_docs: Iterable, min_df: int = 2, max_size: Optional[int] = 200_000) -> Vocabulary:
    """Vocabulary of uni/bi-grams with document frequency >= ``min_df``.

    ``train_docs`` may hold TokenStreams or precomputed :func:`doc_terms`
    counters. When more than ``max_size`` terms qualify, the most frequent
    ones are kept (ties broken lexicographically); columns follow
    lexicographic term order.
    """
    if min_df < 1:
        raise UsageError("min_df must be at least 1")
    if max_size is not None and max_size < 1:
        raise UsageError("max_size must be at least 1")
    df = Counter()
    n = 0
    for doc in train_docs:
        terms = doc if isinstance(doc, Counter) else doc_terms(doc)
        df.update(terms.keys())
        n += 1
    if n == 0:
        raise EmptyCorpus("no training documents")
    kept = [t for t, c in df.items() if c >= min_df]
    if max_size is not None and len(kept) > max_size:
        kept.sort(key=lambda t: (-df[t], t))
        kept = kept[:max_size]
    kept.sort()
    return Vocabulary({t: i for i, t in enumerate(kept)}, {t: df[t] for t in kept}, n, min_df, max_size)


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("indices must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))


def _tfidf_row(terms: Counter, vocab: Vocabulary, idf: np.ndarray):
    pairs = sorted((vocab.index[t], c) for t, c in terms.items() if t in vocab.index)
    if not pairs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    vals = np.fromiter((p[1] for p in pairs), dtype=float, count=len(pairs)) * idf[idx]
    return idx, vals / np.sqrt(np.dot(vals, vals))


def vectorize(doc, vocab: Vocabulary, idf: Optional[np.ndarray] = None) -> SparseVector:
    """L2-normalised TF-IDF (raw counts, smoothed idf) over ``vocab``."""
    if idf is None:
        idf = vocab.idf()
    terms = doc if isinstance(doc, Counter) else doc_terms(doc)
    idx, vals = _tfidf_row(terms, vocab, idf)
    return SparseVector(idx, vals, len(vocab))


def vectorize_many(docs: Sequence, vocab: Vocabulary) -> sp.csr_matrix:
    """TF-IDF rows for many documents as a CSR matrix; ``None`` docs give zero rows."""
    idf = vocab.idf()
    indptr = [0]
    indices, data = [], []
    for doc in docs:
        if doc is not None:
            terms = doc if isinstance(doc, Counter) else doc_terms(doc)
            idx, vals = _tfidf_row(terms, vocab, idf)
            indices.append(idx)
            data.append(vals)
            indptr.append(indptr[-1] + len(idx))
        else:
            indptr.append(indptr[-1])
    return sp.csr_matrix(
        (np.concatenate(data) if data else np.zeros(0),
         np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
         np.asarray(indptr)),
        shape=(len(docs), len(vocab)),
    )


def combine(text_row, fin_row, alpha: float):
    """Concatenate ``alpha * text`` with ``(1 - alpha) * financial``.

    Accepts a SparseVector and a dense row, or a CSR matrix and a dense 2-D
    array (row-aligned); returns the same kind.
    """
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    fin = np.asarray(fin_row, dtype=float)
    if isinstance(text_row, SparseVector):
        fin_idx = np.arange(fin.size) + text_row.dim
        return SparseVector(
            np.concatenate([text_row.indices, fin_idx]),
            np.concatenate([alpha * text_row.values, (1.0 - alpha) * fin]),
            text_row.dim + fin.size,
        )
    return sp.hstack([alpha * sp.csr_matrix(text_row), sp.csr_matrix((1.0 - alpha) * fin)], format="csr")
