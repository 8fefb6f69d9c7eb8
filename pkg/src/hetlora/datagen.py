"""Synthetic Gaussian classification task and Dirichlet non-IID client shards."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng


@dataclass
class SyntheticTask:
    num_classes: int
    dim: int
    means: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    hq_fraction: float = 0.1
    alpha_hq: float = 5.0
    alpha_lq: float = 1.0
    samples_per_client: int = 200
    max_retries: int = 100
    # lone-HQ scenario: client 0 gets exactly equal class counts, every other client is LQ
    balanced_first: bool = False

    def __post_init__(self):
        if self.num_clients < 1 or self.samples_per_client < 1:
            raise ValueError("num_clients and samples_per_client must be positive")
        if not self.balanced_first and self.num_clients > 1 and not 0.0 < self.hq_fraction < 1.0:
            raise ValueError(f"hq_fraction must lie in (0, 1), got {self.hq_fraction}")
        if self.alpha_hq <= 0 or self.alpha_lq <= 0:
            raise ValueError("Dirichlet concentrations must be positive")

    @property
    def num_hq(self) -> int:
        if self.balanced_first:
            return 1
        return int(round(self.hq_fraction * self.num_clients))


@dataclass
class ClientShard:
    client_id: int
    high_quality: bool
    indices: np.ndarray
    histogram: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return len(self.indices)


def class_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Scaled simplex vertices ``separation * e_c`` embedded in ``dim`` dimensions."""
    if dim < num_classes:
        raise ValueError(f"feature dim {dim} must be >= number of classes {num_classes}")
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = separation
    return means


def _sample(means: np.ndarray, count: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    C, d = means.shape
    y = rng.integers(0, C, size=count)
    x = means[y] + rng.standard_normal((count, d))
    return x, y


def generate_task(num_classes: int, dim: int, sizes: tuple[int, int, int], rng: Rng,
                  separation: float = 2.5) -> SyntheticTask:
    """Identity-covariance Gaussian classes with uniform priors.

    Splits are drawn independently, so no sample object is shared between them.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if min(sizes) < num_classes:
        raise ValueError(f"every split needs at least {num_classes} samples, got {sizes}")
    means = class_means(num_classes, dim, separation)
    n_train, n_val, n_test = sizes
    x_tr, y_tr = _sample(means, n_train, rng)
    x_va, y_va = _sample(means, n_val, rng)
    x_te, y_te = _sample(means, n_test, rng)
    return SyntheticTask(num_classes, dim, means, x_tr, y_tr, x_va, y_va, x_te, y_te)


def dirichlet_proportions(alpha: float, num_classes: int, rng: Rng) -> np.ndarray:
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    p = rng.dirichlet(np.full(num_classes, float(alpha)))
    return p / p.sum()


def _counts(p: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``p * total`` to integers summing to ``total``."""
    raw = p * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def partition(task: SyntheticTask, spec: PartitionSpec, rng: Rng) -> list[ClientShard]:
    """Split the training set into disjoint shards, one per client.

    Each client draws class proportions from a Dirichlet whose concentration
    depends on its tier, then takes that many samples from the shuffled
    per-class pools.  A client whose draw asks for more than a pool still
    holds is re-drawn, up to ``spec.max_retries`` times.
    """
    C = task.num_classes
    y = task.y_train
    if spec.num_clients * spec.samples_per_client > len(y):
        raise ValueError(
            f"{spec.num_clients} clients x {spec.samples_per_client} samples exceed "
            f"the {len(y)}-sample training set"
        )
    pools = [list(rng.permutation(np.flatnonzero(y == c))) for c in range(C)]

    hq = np.zeros(spec.num_clients, dtype=bool)
    if spec.balanced_first:
        hq[0] = True
    else:
        hq[rng.permutation(spec.num_clients)[:spec.num_hq]] = True

    shards = []
    for cid in range(spec.num_clients):
        alpha = spec.alpha_hq if hq[cid] else spec.alpha_lq
        for _ in range(spec.max_retries):
            if spec.balanced_first and cid == 0:
                p = np.full(C, 1.0 / C)
            else:
                p = dirichlet_proportions(alpha, C, rng)
            counts = _counts(p, spec.samples_per_client)
            if all(counts[c] <= len(pools[c]) for c in range(C)):
                break
        else:
            raise RuntimeError(
                f"client {cid}: class pools exhausted after {spec.max_retries} Dirichlet redraws"
            )
        idx = []
        for c in range(C):
            idx.extend(pools[c][:counts[c]])
            del pools[c][:counts[c]]
        indices = np.array(sorted(idx), dtype=np.int64)
        shards.append(ClientShard(cid, bool(hq[cid]), indices, np.bincount(y[indices], minlength=C)))
    return shards


def dump_csv(task: SyntheticTask, shards: list[ClientShard], path: str | Path) -> None:
    owner = np.full(len(task.y_train), -1)
    for s in shards:
        owner[s.indices] = s.client_id
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "client_id", "label"] + [f"x{i}" for i in range(task.dim)])
        for split in ("train", "val", "test"):
            x, y = task.split(split)
            for i in range(len(y)):
                cid = owner[i] if split == "train" else -1
                w.writerow([split, int(cid), int(y[i])] + [repr(float(v)) for v in x[i]])
