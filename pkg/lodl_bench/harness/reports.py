"""
Reports
CSV, JSON and markdown outputs of the harness. Files are written beside their final
name and renamed into place.
"""

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Sequence

import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from lodl_bench.harness.experiments import (
    RUN_COLUMNS, RunRecord, learned_lines, neighborhood_summary, table1, table2, table4,
)

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
FLOAT_FORMAT = "%.10g"


def _replace(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    temp_path.write_text(text)
    os.replace(temp_path, path)
    return path


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in records], columns=RUN_COLUMNS)


def write_runs_csv(path: Path, records: Sequence[RunRecord]) -> Path:
    """One row per record, fixed column order; identical records give identical bytes."""
    text = records_frame(records).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    path = _replace(path, text)
    logger.info(f"Wrote {len(records)} rows to {path}")
    return path


def write_rows_csv(path: Path, rows: Sequence[Dict[str, Any]]) -> Path:
    frame = pd.DataFrame(list(rows))
    return _replace(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def write_json(path: Path, payload: Any) -> Path:
    return _replace(path, json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def write_timings(path: Path, records: Sequence[RunRecord]) -> Path:
    return write_json(path, [r.timing_row() for r in records])


def _pm(stats: Dict[str, float]) -> str:
    if not stats or not math.isfinite(stats.get("mean", float("nan"))):
        return "n/a"
    return f"{stats['mean']:.2f} ± {stats['std']:.2f}"


def _num(value: float, digits: int = 4) -> str:
    return f"{value:.{digits}g}" if isinstance(value, (int, float)) and math.isfinite(value) else "n/a"


def _environment() -> Environment:
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), undefined=StrictUndefined,
                      trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
    env.filters["pm"] = _pm
    env.filters["num"] = _num
    return env


def summary_context(records: Sequence[RunRecord], ablation: Sequence[RunRecord] = (),
                    title: str = "LODL benchmark summary", extra: Dict[str, Any] = None) -> Dict[str, Any]:
    t1 = table1(records)
    return {
        "title": title,
        "domains": sorted({r.domain for r in records}),
        "table1": t1,
        "methods": list(t1),
        "table2": table2(records),
        "neighborhood": neighborhood_summary(records),
        "lines": learned_lines(records),
        "table4": table4(ablation),
        "failures": [r for r in list(records) + list(ablation) if not r.ok],
        "extra": extra or {},
    }


def render_summary(path: Path, records: Sequence[RunRecord], ablation: Sequence[RunRecord] = (),
                   title: str = "LODL benchmark summary", extra: Dict[str, Any] = None) -> Path:
    """Markdown with the method x domain, neighborhood and sampling-ablation tables."""
    text = _environment().get_template("summary.md.j2").render(**summary_context(records, ablation, title, extra))
    path = _replace(path, text)
    logger.info(f"Wrote summary to {path}")
    return path


def write_experiment_reports(reports_dir: Path, records: List[RunRecord], ablation: Sequence[RunRecord] = (),
                             prefix: str = "") -> Dict[str, Path]:
    reports_dir = Path(reports_dir)
    paths = {
        "runs": write_runs_csv(reports_dir / f"{prefix}runs.csv", records),
        "timings": write_timings(reports_dir / f"{prefix}timings.json", list(records) + list(ablation)),
        "summary": render_summary(reports_dir / f"{prefix}summary.md", records, ablation),
    }
    if ablation:
        paths["ablation"] = write_runs_csv(reports_dir / f"{prefix}ablation.csv", ablation)
    return paths
