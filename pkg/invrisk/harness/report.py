"""
Report writers: JSON run records, CSV sweep tables and spectrum dumps
"""
import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

from invrisk.errors import ConfigError
from invrisk.model.experiment_model import RunRecord, SweepRow

log = logging.getLogger("invrisk")

SWEEP_COLUMNS = list(SweepRow._fields)


def _cell(value) -> str:
    if value is None:
        return ""
    return f"{float(value):.17g}"


def write_report(record: RunRecord, path: str | Path) -> dict:
    """
    Writes the JSON view of a run record, stamping it with the current time

    :return: the written document
    """
    record.timestamp = datetime.now(timezone.utc).isoformat()
    document = record.to_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, allow_nan=False))
    log.info("report written to %s", path)
    return document


def read_report(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed report {path}: {e}") from e


def write_sweep(record: RunRecord, path: str | Path):
    """
    Writes the sweep table of a run record, one row per defense strength
    """
    if not record.sweep:
        raise ValueError("the record holds no sweep")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as out:
        writer = csv.writer(out)
        writer.writerow(SWEEP_COLUMNS)
        for row in record.sweep:
            writer.writerow([_cell(value) for value in row])
    log.info("sweep table written to %s", path)


def write_spectrum(rows: list[dict], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({'instances': rows}, indent=2, allow_nan=False))
    log.info("spectrum written to %s", path)
