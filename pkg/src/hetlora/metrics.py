"""CSV persistence of round records and multi-seed summaries."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .federation import RoundRecord

COLUMNS = ["round", "scope", "client_id", "rank", "acc_before", "acc_after", "global_acc",
           "uplink_bytes", "cumulative_bytes"]
SUMMARY_COLUMNS = ["round", "mean_acc", "min_acc", "max_acc", "mean_cumulative_bytes"]


def _acc(x: float) -> str:
    return f"{x:.6f}"


def _write(path: Path, header: str | None, columns: list[str], rows: list[list]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                for line in header.rstrip("\n").split("\n"):
                    fh.write(f"# {line}".rstrip() + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write metrics file {path}: {exc.strerror or exc}") from exc


def metric_rows(records: Sequence[RoundRecord]) -> list[list]:
    rows = []
    for rec in records:
        for p in rec.participants:
            rows.append([rec.round, "client", p.client_id, p.rank, _acc(p.acc_before), _acc(p.acc_after), "",
                         p.uplink_bytes, ""])
        rows.append([rec.round, "global", "", rec.global_rank, "", "", _acc(rec.global_acc), rec.uplink_bytes,
                     rec.cumulative_bytes])
    return rows


def emit_metrics(records: Sequence[RoundRecord], path: str | Path, header: str | None = None) -> Path:
    """One row per (round, participant) followed by one global row per round.

    ``header`` (the effective config) is embedded as ``#`` comment lines.
    """
    path = Path(path)
    _write(path, header, COLUMNS, metric_rows(records))
    return path


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def summarize(runs: Sequence[Sequence[RoundRecord]]) -> list[list]:
    rows = []
    for t in range(min(len(r) for r in runs)):
        accs = np.array([r[t].global_acc for r in runs])
        cum = np.mean([r[t].cumulative_bytes for r in runs])
        rows.append([t, _acc(accs.mean()), _acc(accs.min()), _acc(accs.max()), f"{cum:.1f}"])
    return rows


def emit_summary(runs: Sequence[Sequence[RoundRecord]], path: str | Path, header: str | None = None) -> Path:
    path = Path(path)
    _write(path, header, SUMMARY_COLUMNS, summarize(runs))
    return path
