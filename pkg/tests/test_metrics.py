"""Tests for success aggregation and Wilson intervals."""

import pytest

from config import TABLE1_COLUMNS
from src.analysis.metrics import build_intervals, build_table1, paired_distance_wins, success_rates, wilson_interval


def _row(method, trial, overall, placed=True, misplaced=False, goal_error=None, group=0):
    return {
        "method": method,
        "group": group,
        "trial": trial,
        "overall": overall,
        "placed_properly": placed,
        "misplaced": misplaced,
        "goal_error": goal_error,
    }


@pytest.fixture
def rows():
    return [
        _row("mila", 0, True, goal_error=0.01),
        _row("mila", 1, True, placed=False, misplaced=True, goal_error=0.02),
        _row("mila", 2, False, goal_error=0.05),
        _row("mila", 3, True, goal_error=0.01),
        _row("gcbc", 0, False, goal_error=0.10),
        _row("gcbc", 1, True, goal_error=0.01),
        _row("gcbc", 2, False, goal_error=0.08),
        _row("gcbc", 3, False, goal_error=0.005),
    ]


def test_wilson_interval_known_value():
    lower, upper = wilson_interval(8, 10)
    assert lower == pytest.approx(0.490, abs=1e-3)
    assert upper == pytest.approx(0.943, abs=1e-3)


@pytest.mark.parametrize("successes,n", [(0, 5), (5, 5), (3, 7)])
def test_wilson_interval_stays_in_unit_range(successes, n):
    lower, upper = wilson_interval(successes, n)
    assert 0.0 <= lower <= successes / n <= upper <= 1.0


def test_wilson_interval_without_trials():
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_table1_percentages_in_method_order(rows):
    table = build_table1(rows)
    assert list(table.columns) == TABLE1_COLUMNS
    assert table["method"].tolist() == ["MiLa", "GCBC"]
    mila = table.iloc[0]
    assert mila["overall"] == 75.0
    assert mila["success_proper"] == 50.0
    assert mila["success_misplacement"] == 25.0
    assert table.iloc[1]["overall"] == 25.0


def test_table1_rounds_to_one_decimal():
    rows = [_row("mila", t, t == 0) for t in range(3)]
    assert build_table1(rows)["overall"].iloc[0] == 33.3


def test_intervals_have_one_row_per_outcome(rows):
    intervals = build_intervals(rows, methods=["gcbc"])
    assert len(intervals) == 3
    overall = intervals[intervals["metric"] == "overall"].iloc[0]
    assert overall["successes"] == 1 and overall["n"] == 4
    assert overall["lower"] < 0.25 < overall["upper"]


def test_success_rates_per_method(rows):
    assert success_rates(rows) == {"mila": 0.75, "gcbc": 0.25}


def test_paired_wins_count_trials_where_the_baseline_ends_farther(rows):
    worse, paired = paired_distance_wins(rows, "mila", "gcbc")
    assert paired == 4
    assert worse == 2


def test_paired_wins_skip_missing_distances(rows):
    rows[0]["goal_error"] = None
    worse, paired = paired_distance_wins(rows, "mila", "gcbc")
    assert paired == 3
    assert worse == 1
