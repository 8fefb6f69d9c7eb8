"""Uplink communication-cost table (4 bytes per transmitted parameter)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .lora import LoraConfig, param_count

BYTES_PER_PARAM = 4
MB = 1024 ** 2


@dataclass(frozen=True)
class CommLedgerEntry:
    label: str
    params: float
    reference_total: float

    @property
    def bytes(self) -> float:
        return BYTES_PER_PARAM * self.params

    @property
    def megabytes(self) -> float:
        return self.bytes / MB

    @property
    def percent_of_model(self) -> float:
        return 100.0 * self.params / self.reference_total


@dataclass(frozen=True)
class CommPreset:
    m: int
    n: int
    num_matrices: int
    ranks: tuple[int, ...]
    mixture: tuple[tuple[float, int], ...]
    reference_total: float


PRESETS = {
    # six transformer blocks x (q, k, v) projections of 768 x 768 adapted
    "distilbert": CommPreset(768, 768, 18, (20, 7, 5), ((0.1, 20), (0.9, 5)), 66.96e6),
}
PRESETS["distilbert-preset"] = PRESETS["distilbert"]


def comm_table(m: int, n: int, num_matrices: int, ranks, mixture=(), reference_total: float = 66.96e6,
               mixture_label: str = "mixture") -> list[CommLedgerEntry]:
    """One entry per rank, plus an expected per-client entry for a rank mixture
    given as ``[(population share, rank), ...]``."""
    if not ranks:
        raise ValueError("at least one rank is required")
    entries = [
        CommLedgerEntry(f"LoRA (r={r})", param_count(LoraConfig(m, n, r, num_matrices)), reference_total)
        for r in ranks
    ]
    if mixture:
        total = sum(share for share, _ in mixture)
        params = sum(share * param_count(LoraConfig(m, n, r, num_matrices)) for share, r in mixture) / total
        entries.append(CommLedgerEntry(mixture_label, params, reference_total))
    return entries


def preset_table(name: str) -> list[CommLedgerEntry]:
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown comm-table preset {name!r}; known: {', '.join(PRESETS)}") from None
    label = "mixed " + "/".join(f"{share:.0%} r={r}" for share, r in p.mixture)
    return comm_table(p.m, p.n, p.num_matrices, p.ranks, p.mixture, p.reference_total, label)


def format_table(entries: list[CommLedgerEntry], sep: str = "\t") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=sep, lineterminator="\n")
    w.writerow(["method", "num_params", "comm_cost_MB", "percent_of_model"])
    for e in entries:
        params = f"{e.params:,.0f}" if abs(e.params - round(e.params)) < 1e-6 else f"{e.params:,.2f}"
        w.writerow([e.label, params, f"{e.megabytes:.2f}", f"{e.percent_of_model:.2f}%"])
    return buf.getvalue().rstrip("\n")
