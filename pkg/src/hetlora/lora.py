"""LoRA adapters: a frozen ``m x n`` weight is updated by ``B @ A`` with
``B`` of shape ``m x r`` and ``A`` of shape ``r x n``."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Matrix, Rng, matmul


@dataclass(frozen=True)
class LoraConfig:
    m: int
    n: int
    r: int
    num_adapted_matrices: int = 1

    def __post_init__(self):
        if self.r < 1 or self.m < 1 or self.n < 1 or self.num_adapted_matrices < 1:
            raise ValueError(f"invalid LoRA config {self}")
        if not self.reduces_parameters():
            warnings.warn(
                f"rank {self.r} >= mn/(m+n) = {self.m * self.n / (self.m + self.n):.2f}; "
                "adapter has at least as many parameters as the dense matrix",
                stacklevel=2,
            )

    def reduces_parameters(self) -> bool:
        return self.r * (self.m + self.n) < self.m * self.n


@dataclass
class LoraAdapter:
    B: Matrix
    A: Matrix

    def __post_init__(self):
        if self.B.ndim != 2 or self.A.ndim != 2 or self.B.shape[1] != self.A.shape[0]:
            raise ValueError(f"incompatible LoRA factors B{self.B.shape} A{self.A.shape}")

    @property
    def r(self) -> int:
        return self.B.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.B.shape[0], self.A.shape[1]

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.B.copy(), self.A.copy())


def init_adapter(cfg: LoraConfig, rng: Rng) -> LoraAdapter:
    """Gaussian ``A`` with variance ``1/r``, zero ``B``."""
    A = rng.normal(0.0, 1.0 / np.sqrt(cfg.r), size=(cfg.r, cfg.n))
    return LoraAdapter(np.zeros((cfg.m, cfg.r)), A)


def delta(adapter: LoraAdapter) -> Matrix:
    return matmul(adapter.B, adapter.A)


def param_count(cfg: LoraConfig) -> int:
    return cfg.num_adapted_matrices * (cfg.m + cfg.n) * cfg.r


def truncate(adapter: LoraAdapter, r_new: int) -> LoraAdapter:
    """Keep the leading ``r_new`` components."""
    if r_new > adapter.r or r_new < 1:
        raise ValueError(f"cannot truncate rank {adapter.r} adapter to rank {r_new}")
    return LoraAdapter(adapter.B[:, :r_new].copy(), adapter.A[:r_new, :].copy())


_HEADER = struct.Struct("<QQQ")


def to_bytes(adapter: LoraAdapter) -> bytes:
    m, n = adapter.shape
    return (
        _HEADER.pack(m, n, adapter.r)
        + adapter.B.astype("<f8").tobytes(order="C")
        + adapter.A.astype("<f8").tobytes(order="C")
    )


def from_bytes(buf: bytes) -> LoraAdapter:
    m, n, r = _HEADER.unpack_from(buf, 0)
    expected = _HEADER.size + 8 * (m * r + r * n)
    if len(buf) != expected:
        raise ValueError(f"adapter blob has {len(buf)} bytes, expected {expected}")
    body = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return LoraAdapter(body[: m * r].reshape(m, r).copy(), body[m * r:].reshape(r, n).copy())


def save_adapters(adapters: list[LoraAdapter], path: str | Path) -> None:
    """Concatenate serialized adapters (one per adapted layer) into ``path``."""
    Path(path).write_bytes(b"".join(to_bytes(a) for a in adapters))


def load_adapters(path: str | Path) -> list[LoraAdapter]:
    buf = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(buf):
        m, n, r = _HEADER.unpack_from(buf, pos)
        size = _HEADER.size + 8 * (m * r + r * n)
        out.append(from_bytes(buf[pos:pos + size]))
        pos += size
    return out
