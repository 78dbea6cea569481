"""Financial feature vectors (28 raw + 14 derived) and training-window scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, RecordNotFound
from .panel import RAW_FIELDS, FilingRecord, Panel

DERIVED_FIELDS = (
    "dch_wc", "ch_rsst", "dch_rec", "dch_inv", "ch_cs", "soft_assets", "ch_cm",
    "ch_roa", "issue", "bm", "dpi", "reoa", "ebit", "ch_fcf",
)
FEATURE_NAMES = RAW_FIELDS + DERIVED_FIELDS
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FinancialVector:
    values: np.ndarray  # NaN where missing
    mask: np.ndarray  # True where observed

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,) or self.mask.shape != (N_FEATURES,):
            raise ValueError(f"financial vectors have exactly {N_FEATURES} entries")

    def __getitem__(self, name: str) -> Optional[float]:
        i = FEATURE_NAMES.index(name)
        return float(self.values[i]) if self.mask[i] else None


def _div(num, den):
    if num is None or den is None or den == 0:
        return None
    out = num / den
    return out if math.isfinite(out) else None


def _sub(a, b):
    return None if a is None or b is None else a - b


def _add(*xs):
    return None if any(x is None for x in xs) else sum(xs)


def _delta(cur, prev, name):
    if prev is None:
        return None
    return _sub(cur.get(name), prev.get(name))


def _wc(f):
    # working capital excluding cash and short-term debt
    return _sub(_sub(f["act"], f["che"]), _sub(f["lct"], f["dlc"]))


def _nco(f):
    return _sub(_sub(_sub(f["at"], f["act"]), f["ivao"]), _sub(_sub(f["lt"], f["lct"]), f["dltt"]))


def _fin(f):
    return _sub(_add(f["ivst"], f["ivao"]), _add(f["dltt"], f["dlc"], f["pstk"]))


def _rsst_numerator(cur, prev):
    if prev is None:
        return None
    return _add(_sub(_wc(cur), _wc(prev)), _sub(_nco(cur), _nco(prev)), _sub(_fin(cur), _fin(prev)))


def _avg_at(cur, prev):
    if prev is None or cur["at"] is None or prev["at"] is None:
        return None
    return (cur["at"] + prev["at"]) / 2


def _cash_sales(cur, prev):
    return _sub(cur["sale"], _delta(cur, prev, "rect"))


def _cash_margin(cur, prev):
    cs = _cash_sales(cur, prev)
    cost = _add(_sub(cur["cogs"], _delta(cur, prev, "invt")), _delta(cur, prev, "ap"))
    ratio = _div(cost, cs)
    return None if ratio is None else 1 - ratio


def _roa(cur, prev):
    return _div(cur["ib"], _avg_at(cur, prev))


def _fcf(cur, prev):
    return _sub(cur["ib"], _rsst_numerator(cur, prev))


def _dep_rate(f):
    return _div(f["dp"], _add(f["dp"], f["ppegt"]))


def derived_values(cur: dict, prev: Optional[dict], prev2: Optional[dict]) -> dict:
    """Derived features from the current, prior and second-prior raw fields.

    The second-prior year only feeds the lagged halves of the change
    features (cash sales, cash margin, ROA, free cash flow); those come out
    missing when it is absent.
    """
    avg_at = _avg_at(cur, prev)
    out = {}
    if prev is not None:
        d_ca = _delta(cur, prev, "act")
        d_cash = _delta(cur, prev, "che")
        d_cl = _delta(cur, prev, "lct")
        d_std = _delta(cur, prev, "dlc")
        d_tp = _delta(cur, prev, "txp")
        numerator = _sub(_sub(d_ca, d_cash), _sub(_sub(d_cl, d_std), d_tp))
        out["dch_wc"] = _div(numerator, avg_at)
    else:
        out["dch_wc"] = None
    out["ch_rsst"] = _div(_rsst_numerator(cur, prev), avg_at)
    out["dch_rec"] = _div(_delta(cur, prev, "rect"), avg_at)
    out["dch_inv"] = _div(_delta(cur, prev, "invt"), avg_at)

    if prev is not None:
        cs_now, cs_prev = _cash_sales(cur, prev), _cash_sales(prev, prev2)
        out["ch_cs"] = _div(_sub(cs_now, cs_prev), cs_prev)
        out["ch_cm"] = _sub(_cash_margin(cur, prev), _cash_margin(prev, prev2))
        out["ch_roa"] = _sub(_roa(cur, prev), _roa(prev, prev2))
        out["ch_fcf"] = _div(_sub(_fcf(cur, prev), _fcf(prev, prev2)), avg_at)
        out["dpi"] = _div(_dep_rate(prev), _dep_rate(cur))
    else:
        out["ch_cs"] = out["ch_cm"] = out["ch_roa"] = out["ch_fcf"] = out["dpi"] = None

    out["soft_assets"] = _div(_sub(_sub(cur["at"], cur["ppegt"]), cur["che"]), cur["at"])

    sstk, dltis = cur["sstk"], cur["dltis"]
    if (sstk is not None and sstk > 0) or (dltis is not None and dltis > 0):
        out["issue"] = 1.0
    elif sstk is not None and dltis is not None:
        out["issue"] = 0.0
    else:
        out["issue"] = None

    shares, price = cur["csho"], cur["prcc_f"]
    mcap = None if shares is None or price is None else shares * price
    out["bm"] = _div(cur["ceq"], mcap)
    out["reoa"] = _div(cur["re"], cur["at"])
    out["ebit"] = _div(_add(cur["ni"], cur["xint"], cur["txt"]), avg_at)
    return out


def vector_from_fields(cur: dict, prev: Optional[dict] = None, prev2: Optional[dict] = None) -> FinancialVector:
    derived = derived_values(cur, prev, prev2)
    values = np.full(N_FEATURES, np.nan)
    for i, name in enumerate(RAW_FIELDS):
        if cur[name] is not None:
            values[i] = cur[name]
    for j, name in enumerate(DERIVED_FIELDS, start=len(RAW_FIELDS)):
        if derived[name] is not None:
            values[j] = derived[name]
    mask = ~np.isnan(values)
    return FinancialVector(values, mask)


def derive_features(panel: Panel, company: str, year: int) -> FinancialVector:
    rec = panel.get(company, year)
    if rec is None:
        raise RecordNotFound(f"no record for ({company}, {year})")
    prev = panel.get(company, year - 1)
    prev2 = panel.get(company, year - 2) if prev is not None else None
    return vector_from_fields(
        rec.financials,
        prev.financials if prev is not None else None,
        prev2.financials if prev2 is not None else None,
    )


def derive_matrix(panel: Panel, records: Sequence[FilingRecord]) -> np.ndarray:
    """Stack derived vectors for ``records`` into an (n, 42) array, NaN = missing."""
    out = np.empty((len(records), N_FEATURES))
    for i, r in enumerate(records):
        out[i] = derive_features(panel, r.company, r.fiscal_year).values
    return out


# --------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class Scaler:
    medians: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    fitted_on: str = ""

    def transform(self, rows) -> np.ndarray:
        return apply_scaler(self, rows)


def _as_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        mat = np.atleast_2d(np.asarray(rows, dtype=float))
    else:
        rows = list(rows)
        if rows and isinstance(rows[0], FinancialVector):
            mat = np.array([r.values for r in rows], dtype=float).reshape(len(rows), N_FEATURES)
        else:
            mat = np.atleast_2d(np.asarray(rows, dtype=float))
    return mat


def fit_scaler(rows, fitted_on: str = "") -> Scaler:
    """Fit median imputation plus standard scaling on training rows.

    ``rows`` is a sequence of FinancialVector or an (n, d) array with NaN
    marking missing entries. Standard deviations use the population
    convention; zero-variance features get a std of 1.
    """
    mat = _as_matrix(rows)
    if mat.size == 0 or mat.shape[0] == 0:
        raise EmptyInput("cannot fit a scaler on zero rows")
    observed = ~np.isnan(mat)
    medians = np.zeros(mat.shape[1])
    for j in range(mat.shape[1]):
        col = mat[observed[:, j], j]
        if col.size:
            medians[j] = np.median(col)
    filled = np.where(observed, mat, medians)
    means = filled.mean(axis=0)
    # rescale deviations before squaring so tiny spreads do not underflow to 0
    dev = filled - means
    spread = np.abs(dev).max(axis=0)
    safe = np.where(spread > 0, spread, 1.0)
    stds = spread * np.sqrt(((dev / safe) ** 2).mean(axis=0))
    constant = filled.max(axis=0) == filled.min(axis=0)
    stds = np.where(constant | (stds == 0), 1.0, stds)
    return Scaler(medians, means, stds, fitted_on)


def apply_scaler(scaler: Scaler, rows) -> np.ndarray:
    if isinstance(rows, FinancialVector):
        return apply_scaler(scaler, [rows])[0]
    mat = _as_matrix(rows)
    filled = np.where(np.isnan(mat), scaler.medians, mat)
    return (filled - scaler.means) / scaler.stds
