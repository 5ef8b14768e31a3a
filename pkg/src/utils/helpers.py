"""
Report and dump helpers for the audit pipeline.

Writers and readers for the per-user dump (per_user.tsv), the bias report
(report.tsv / report.json), the decile bin dump (bins.tsv) and the JSON
side files.
"""

import hashlib
import json
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from bias.metrics import GROUPS, METRICS, BiasReport, PerUserBiasRecord
from utils.errors import DataError

MISSING = "NA"
PER_USER_COLUMNS = ["user_id", "gender", "algorithm", "fold", *METRICS, "undefined"]
REPORT_COLUMNS = ["algorithm", "row", "n_users", *METRICS]


def format_cell(value: Optional[Decimal]) -> str:
    """Fixed-point report cell, NA when undefined."""
    if value is None:
        return MISSING
    return format(value, "f")


def format_report_tsv(report: BiasReport) -> str:
    """
    Render the report table: per algorithm an All row and one delta row per group.

    Args:
        report: Bias report

    Returns:
        TSV text with a header line
    """
    lines = ["\t".join(REPORT_COLUMNS)]
    for algorithm, block in report.blocks.items():
        rows = [("All", block.n_users["All"], block.all_row)]
        rows += [(f"Δ{group}", block.n_users[group], block.deltas[group]) for group in GROUPS]
        for name, n_users, values in rows:
            cells = [algorithm, name, str(n_users)] + [format_cell(values[m]) for m in METRICS]
            lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def report_to_dict(report: BiasReport) -> Dict[str, Any]:
    """
    JSON form of the report: All, group and delta rows with user and skip counts.

    Cells are the fixed-point strings of report.tsv (null when undefined), so
    All + delta = group holds exactly after Decimal parsing.
    """

    def _row(values: Dict[str, Optional[Decimal]]) -> Dict[str, Optional[str]]:
        return {m: None if values[m] is None else format_cell(values[m]) for m in METRICS}

    return {
        "metrics": list(METRICS),
        "aggregation": {"bias_metrics": "median", "ndcg_at_10": "mean", "folds": "pooled"},
        "algorithms": {
            algorithm: {
                "All": _row(block.all_row),
                "groups": {group: _row(block.group_rows[group]) for group in GROUPS},
                "deltas": {group: _row(block.deltas[group]) for group in GROUPS},
                "n_users": dict(block.n_users),
                "skipped": {name: dict(counts) for name, counts in block.skipped.items()},
            }
            for algorithm, block in report.blocks.items()
        },
    }


def save_json_report(report: Dict[str, Any], filepath: str):
    """
    Save a JSON document.

    Args:
        report: JSON-serializable dictionary
        filepath: Path to save JSON file
    """
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, ensure_ascii=False)
        f.write("\n")


def write_report(report: BiasReport, directory: str, formats: Sequence[str] = ("tsv", "json")) -> Dict[str, str]:
    """Write report.tsv and/or report.json."""
    Path(directory).mkdir(parents=True, exist_ok=True)
    paths = {}
    if "tsv" in formats:
        paths["report_tsv"] = str(Path(directory) / "report.tsv")
        with open(paths["report_tsv"], 'w', encoding='utf-8', newline='') as f:
            f.write(format_report_tsv(report))
    if "json" in formats:
        paths["report_json"] = str(Path(directory) / "report.json")
        save_json_report(report_to_dict(report), paths["report_json"])
    return paths


def records_frame(records: Sequence[PerUserBiasRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = record.as_dict()
        row["undefined"] = ",".join(record.undefined)
        rows.append(row)
    frame = pd.DataFrame(rows, columns=PER_USER_COLUMNS)
    for metric in METRICS:
        frame[metric] = pd.to_numeric(frame[metric], errors="coerce").astype(np.float64)
    return frame


def write_per_user(records: Sequence[PerUserBiasRecord], path: str) -> str:
    """
    Write the per-user dump.

    Floats are written with 17 significant digits so the dump reads back to
    the identical doubles.
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(
        path, sep="\t", index=False, float_format="%.17g", na_rep=MISSING, lineterminator="\n"
    )
    return path


def read_per_user(path: str) -> List[PerUserBiasRecord]:
    """
    Read a per-user dump written by write_per_user.

    Raises:
        DataError: If the file is missing or lacks required columns
    """
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            dtype={"user_id": str, "gender": str, "algorithm": str, "undefined": str},
            keep_default_na=False,
            na_values={m: [MISSING] for m in METRICS},
            float_precision="round_trip",
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot read per-user dump {path}: {e}") from None

    missing = [c for c in PER_USER_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"Per-user dump {path} lacks column(s): {', '.join(missing)}")

    records = []
    for row in frame.itertuples(index=False):
        values = {m: None if pd.isna(getattr(row, m)) else float(getattr(row, m)) for m in METRICS}
        records.append(PerUserBiasRecord(
            user_id=row.user_id, gender=row.gender, algorithm=row.algorithm, fold=int(row.fold), **values
        ))
    return records


def write_bins(rows: Sequence[Dict[str, float]], path: str) -> str:
    """Per-bin table (decile bins or the popularity histogram) for external plotting."""
    pd.DataFrame(rows).to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    return path


def config_hash(config_dict: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
