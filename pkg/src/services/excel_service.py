"""
Excel export service for evaluation reports.

Writes the success-rate tables, their Wilson intervals and the raw trials of
every study to one multi-sheet workbook, and reads it back.
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from src.core.errors import ArtifactError

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = "1.0"
MAX_SHEET_NAME = 31


# =============================================================================
# EXPORT FUNCTIONS
# =============================================================================


def _sheet_name(prefix: str, study: str) -> str:
    return f"{prefix} {study}"[:MAX_SHEET_NAME]


def export_to_excel(
    tables: Dict[str, pd.DataFrame],
    intervals: Dict[str, pd.DataFrame],
    trials: Dict[str, pd.DataFrame],
    output: Path,
    seeds: Optional[Dict[str, int]] = None,
) -> Path:
    """
    Export all studies to a multi-sheet Excel file.

    Args:
        tables: Study name -> success-rate table
        intervals: Study name -> Wilson interval DataFrame
        trials: Study name -> per-trial DataFrame
        output: Workbook path
        seeds: Seeds recorded in the metadata sheet

    Returns:
        Path of the workbook
    """
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    try:
        with pd.ExcelWriter(output, engine="openpyxl") as writer:
            for study, frame in tables.items():
                frame.to_excel(writer, sheet_name=_sheet_name("Table1", study), index=False)
            for study, frame in intervals.items():
                frame.to_excel(writer, sheet_name=_sheet_name("Intervals", study), index=False)
            for study, frame in trials.items():
                # Hashes are long and only useful in the CSV
                frame.drop(columns=["trajectory_hash"], errors="ignore").to_excel(
                    writer, sheet_name=_sheet_name("Trials", study), index=False
                )

            metadata = pd.DataFrame(
                [
                    {
                        "Export Date": datetime.now().strftime("%Y-%m-%d %H:%M"),
                        "Studies": ", ".join(sorted(tables)),
                        "Total Trials": int(sum(len(f) for f in trials.values())),
                        "Seeds": ", ".join(f"{k}={v}" for k, v in sorted((seeds or {}).items())),
                        "Format Version": REPORT_FORMAT_VERSION,
                    }
                ]
            )
            metadata.to_excel(writer, sheet_name="Metadata", index=False)
    except OSError as e:
        logger.error(f"Error writing Excel report {output}: {e}")
        raise
    logger.info(f"Wrote Excel report with {len(tables)} studies to {output}")
    return output


# =============================================================================
# IMPORT FUNCTIONS
# =============================================================================


def import_from_excel(path: Path) -> Dict[str, pd.DataFrame]:
    """
    Read every sheet of a report workbook.

    Raises:
        ArtifactError: The file is missing or is not a report of a known format.
    """
    path = Path(path)
    try:
        sheets = pd.read_excel(path, sheet_name=None, engine="openpyxl")
    except FileNotFoundError as e:
        raise ArtifactError(f"report not found: {path}", path=str(path)) from e
    except Exception as e:
        logger.error(f"Error reading Excel report {path}: {e}")
        raise ArtifactError(f"cannot read report {path}: {e}", path=str(path)) from e

    metadata = sheets.get("Metadata")
    if metadata is None or str(metadata.get("Format Version", pd.Series([None])).iloc[0]) != REPORT_FORMAT_VERSION:
        raise ArtifactError(f"{path} is not a report workbook (format {REPORT_FORMAT_VERSION})", path=str(path))
    return sheets
