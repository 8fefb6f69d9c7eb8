"""Server-side merge rules for (possibly rank-heterogeneous) LoRA updates.

All aggregators average factor-wise (``B`` with ``B``, ``A`` with ``A``) and
sum in ascending client-id order, so results do not depend on the order in
which updates arrive and runs are bitwise reproducible.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lora import LoraAdapter, delta, truncate
from .numerics import frobenius_norm

log = logging.getLogger(__name__)


class AggregationStrategy(str, enum.Enum):
    HOMOGENEOUS = "homogeneous"
    ZERO_PAD = "zero_pad"
    FROBENIUS_ZERO_PAD = "frobenius_zero_pad"
    REPLICATION = "replication"


@dataclass
class ClientUpdate:
    client_id: int
    adapter: LoraAdapter
    weight: float = 1.0
    high_rank: bool = False


def _ordered(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ValueError("no updates to aggregate")
    return sorted(updates, key=lambda u: u.client_id)


def _weighted_sum(adapters: list[LoraAdapter], weights: list[float]) -> LoraAdapter:
    B = np.zeros_like(adapters[0].B)
    A = np.zeros_like(adapters[0].A)
    for ad, w in zip(adapters, weights):
        B += w * ad.B
        A += w * ad.A
    return LoraAdapter(B, A)


def _mean(adapters: list[LoraAdapter], weights: list[float] | None = None) -> LoraAdapter:
    if weights is None:
        weights = [1.0] * len(adapters)
    total = float(sum(weights))
    return _weighted_sum(adapters, [w / total for w in weights])


def aggregate_homogeneous(updates: Sequence[ClientUpdate], sample_weighted: bool = False) -> LoraAdapter:
    ups = _ordered(updates)
    ranks = {u.adapter.r for u in ups}
    if len(ranks) > 1:
        raise ValueError(
            f"mixed ranks {sorted(ranks)} cannot be averaged directly; "
            "use a zero-padding or replication strategy"
        )
    return _mean([u.adapter for u in ups], [u.weight for u in ups] if sample_weighted else None)


def pad_zero(adapter: LoraAdapter, r_target: int) -> LoraAdapter:
    """Append zero columns to ``B`` and zero rows to ``A`` up to ``r_target``."""
    if r_target < adapter.r:
        raise ValueError(f"cannot zero-pad rank {adapter.r} adapter down to {r_target}")
    m, n = adapter.shape
    B = np.zeros((m, r_target))
    A = np.zeros((r_target, n))
    B[:, :adapter.r] = adapter.B
    A[:adapter.r, :] = adapter.A
    return LoraAdapter(B, A)


def _check_target(ups: list[ClientUpdate], r_target: int) -> None:
    r_max = max(u.adapter.r for u in ups)
    if r_target != r_max:
        raise ValueError(f"r_target {r_target} must equal the largest update rank {r_max}")


def aggregate_zero_pad(updates: Sequence[ClientUpdate], r_target: int,
                       sample_weighted: bool = False) -> LoraAdapter:
    ups = _ordered(updates)
    _check_target(ups, r_target)
    padded = [pad_zero(u.adapter, r_target) for u in ups]
    return _mean(padded, [u.weight for u in ups] if sample_weighted else None)


def frobenius_weights(updates: Sequence[ClientUpdate]) -> list[float] | None:
    """Normalized ``||B_i A_i||_F`` weights, or None when every delta is zero."""
    norms = [frobenius_norm(delta(u.adapter)) for u in _ordered(updates)]
    total = sum(norms)
    if total == 0.0:
        return None
    return [x / total for x in norms]


def aggregate_frobenius_zero_pad(updates: Sequence[ClientUpdate], r_target: int) -> LoraAdapter:
    ups = _ordered(updates)
    _check_target(ups, r_target)
    weights = frobenius_weights(ups)
    if weights is None:
        log.warning("all client deltas are zero; falling back to the unweighted mean")
        return aggregate_zero_pad(ups, r_target)
    return _weighted_sum([pad_zero(u.adapter, r_target) for u in ups], weights)


def pad_replicate(low: LoraAdapter, donor: LoraAdapter) -> LoraAdapter:
    """Fill the missing trailing components of ``low`` with the donor's."""
    if low.r >= donor.r:
        raise ValueError(f"replication needs low rank {low.r} < donor rank {donor.r}")
    if low.shape != donor.shape:
        raise ValueError(f"adapter shapes differ: {low.shape} vs {donor.shape}")
    B = np.concatenate([low.B, donor.B[:, low.r:]], axis=1)
    A = np.concatenate([low.A, donor.A[low.r:, :]], axis=0)
    return LoraAdapter(B, A)


def aggregate_replication(updates: Sequence[ClientUpdate], r_target: int,
                          sample_weighted: bool = False) -> LoraAdapter:
    """Average the high-rank updates, pad every low-rank update with the
    trailing components of that average, then take the mean over all clients
    with the high-rank average counted once per high-rank client."""
    ups = _ordered(updates)
    high = [u for u in ups if u.adapter.r == r_target]
    low = [u for u in ups if u.adapter.r != r_target]
    if not high:
        raise ValueError(f"replication needs at least one update at rank {r_target}")
    if any(u.adapter.r > r_target for u in low):
        raise ValueError(f"update rank exceeds r_target {r_target}")
    if len({u.adapter.r for u in low}) > 1:
        raise ValueError("low-rank updates must share a single rank")

    high_w = [u.weight for u in high] if sample_weighted else [1.0] * len(high)
    donor = _mean([u.adapter for u in high], high_w)
    if not low:
        return donor
    low_w = [u.weight for u in low] if sample_weighted else [1.0] * len(low)
    padded = [pad_replicate(u.adapter, donor) for u in low]
    return _mean([donor, *padded], [sum(high_w), *low_w])


def aggregate(strategy: AggregationStrategy, updates: Sequence[ClientUpdate], r_target: int) -> LoraAdapter:
    strategy = AggregationStrategy(strategy)
    if strategy is AggregationStrategy.HOMOGENEOUS:
        return aggregate_homogeneous(updates)
    if strategy is AggregationStrategy.ZERO_PAD:
        return aggregate_zero_pad(updates, r_target)
    if strategy is AggregationStrategy.FROBENIUS_ZERO_PAD:
        return aggregate_frobenius_zero_pad(updates, r_target)
    return aggregate_replication(updates, r_target)


def downlink(global_adapter: LoraAdapter, client_rank: int) -> LoraAdapter:
    if client_rank > global_adapter.r:
        raise ValueError(f"client rank {client_rank} exceeds global rank {global_adapter.r}")
    if client_rank == global_adapter.r:
        return global_adapter.copy()
    return truncate(global_adapter, client_rank)
