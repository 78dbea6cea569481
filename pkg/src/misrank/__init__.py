"""Temporal evaluation of misstatement rankers on company-year filing panels."""

__version__ = "0.1.0"

from .errors import DataError, MisrankError, UsageError
from .panel import FilingRecord, MisstatementLabel, Panel, build_panel, panel_stats

__all__ = [
    "DataError", "FilingRecord", "MisrankError", "MisstatementLabel", "Panel",
    "UsageError", "build_panel", "panel_stats", "__version__",
]
