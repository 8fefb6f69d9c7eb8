"""Convergence and aggregation-damage measures over round records."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .federation import RoundRecord


def rounds_to_target(records: Sequence[RoundRecord], target: float) -> int | None:
    """First round (>= 1) whose global accuracy reaches ``target``."""
    for rec in records:
        if rec.round >= 1 and rec.global_acc >= target:
            return rec.round
    return None


def bytes_at_target(records: Sequence[RoundRecord], target: float) -> float:
    t = rounds_to_target(records, target)
    return float("inf") if t is None else float(records[t].cumulative_bytes)


def aggregation_drops(records: Sequence[RoundRecord], client_id: int, rounds=(1, 2, 3)) -> list[float]:
    """Before-minus-after accuracy of one client in the given rounds."""
    out = []
    for rec in records:
        if rec.round in rounds:
            for p in rec.participants:
                if p.client_id == client_id:
                    out.append(p.acc_before - p.acc_after)
    return out


def mean_tier_accuracy(rec: RoundRecord, high_quality: bool) -> tuple[float, float]:
    ps = [p for p in rec.participants if p.high_quality == high_quality]
    if not ps:
        return float("nan"), float("nan")
    return float(np.mean([p.acc_before for p in ps])), float(np.mean([p.acc_after for p in ps]))
