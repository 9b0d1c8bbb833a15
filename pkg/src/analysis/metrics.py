"""
Metrics and aggregation functions for the evaluation trials.

Turns per-trial rows (one dict per method x trial) into success counts,
Wilson score intervals and the per-method success table.
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from scipy.stats import norm

from config import METHOD_LABELS, METHODS, TABLE1_COLUMNS

logger = logging.getLogger(__name__)

# Outcome columns aggregated per method
OUTCOMES: Dict[str, str] = {
    "success_misplacement": "misplaced",
    "success_proper": "proper",
    "overall": "overall",
}


def count_by_method(rows: List[Dict[str, Any]], field: str = "overall") -> Dict[str, int]:
    """
    Count trials with a truthy ``field`` grouped by method.

    Args:
        rows: Trial records.
        field: Boolean outcome column.

    Returns:
        Dictionary mapping method to count.
    """
    if not rows:
        return {}

    counts: Dict[str, int] = {}
    for row in rows:
        method = row.get("method", "unknown")
        counts[method] = counts.get(method, 0) + int(bool(row.get(field, False)))
    return counts


def trials_by_method(rows: List[Dict[str, Any]]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for row in rows:
        method = row.get("method", "unknown")
        counts[method] = counts.get(method, 0) + 1
    return counts


def with_proper_flag(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Add ``proper``: overall success with the object placed properly."""
    return [dict(row, proper=bool(row.get("overall")) and bool(row.get("placed_properly"))) for row in rows]


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    """
    Wilson score interval of a binomial proportion.

    Returns:
        Tuple of (lower, upper); (0, 1) when n is zero.
    """
    if n <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def success_rates(rows: List[Dict[str, Any]], field: str = "overall") -> Dict[str, float]:
    """Fraction of trials with a truthy ``field`` per method."""
    totals = trials_by_method(rows)
    counts = count_by_method(rows, field)
    return {m: counts.get(m, 0) / n for m, n in totals.items() if n > 0}


def _ordered_methods(rows: List[Dict[str, Any]], methods: Optional[Sequence[str]]) -> List[str]:
    present = {r.get("method") for r in rows}
    order = list(methods) if methods is not None else METHODS
    return [m for m in order if m in present]


def build_table1(rows: List[Dict[str, Any]], methods: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Success rates in percent in the TABLE1_COLUMNS layout.

    Args:
        rows: Trial records of one study.
        methods: Method order; defaults to all known methods present in rows.

    Returns:
        DataFrame with columns method, success_misplacement, success_proper, overall.
    """
    rows = with_proper_flag(rows)
    records = []
    for method in _ordered_methods(rows, methods):
        subset = [r for r in rows if r.get("method") == method]
        record = {"method": METHOD_LABELS.get(method, method)}
        for column, field in OUTCOMES.items():
            record[column] = round(100.0 * success_rates(subset, field).get(method, 0.0), 1)
        records.append(record)
    return pd.DataFrame(records, columns=TABLE1_COLUMNS)


def build_intervals(
    rows: List[Dict[str, Any]], methods: Optional[Sequence[str]] = None, confidence: float = 0.95
) -> pd.DataFrame:
    """One row per (method, outcome) with the count, rate and Wilson interval."""
    rows = with_proper_flag(rows)
    totals = trials_by_method(rows)
    records = []
    for method in _ordered_methods(rows, methods):
        n = totals[method]
        for column, field in OUTCOMES.items():
            k = count_by_method(rows, field).get(method, 0)
            lower, upper = wilson_interval(k, n, confidence)
            records.append(
                {
                    "method": METHOD_LABELS.get(method, method),
                    "metric": column,
                    "successes": k,
                    "n": n,
                    "rate": k / n,
                    "lower": lower,
                    "upper": upper,
                }
            )
    return pd.DataFrame(records, columns=["method", "metric", "successes", "n", "rate", "lower", "upper"])


def paired_distance_wins(
    rows: List[Dict[str, Any]], method: str, baseline: str, column: str = "goal_error"
) -> Tuple[int, int]:
    """
    How often ``baseline`` ends farther from its goal than ``method`` on the same trial.

    Returns:
        Tuple of (trials where baseline is worse, paired trials).
    """
    key = ("group", "trial")
    ours = {tuple(r[k] for k in key): r.get(column) for r in rows if r.get("method") == method}
    theirs = {tuple(r[k] for k in key): r.get(column) for r in rows if r.get("method") == baseline}
    paired = [t for t in ours if t in theirs and ours[t] is not None and theirs[t] is not None]
    worse = sum(1 for t in paired if theirs[t] > ours[t])
    return worse, len(paired)
