"""Dense linear algebra helpers, seeded random streams and the Adam update.

Matrices are plain 2-D ``numpy.float64`` arrays (row-major).  Random streams
are ``numpy.random.Generator`` objects backed by PCG64 and keyed through a
``SeedSequence`` built from ``(seed, *stream_ids)``, which makes every stream
reproducible across runs and platforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray
Rng = np.random.Generator


def as_matrix(values) -> Matrix:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def make_rng(seed: int, *stream: int) -> Rng:
    """Return an independent PCG64 stream for ``(seed, *stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def frobenius_norm(m: Matrix) -> float:
    return float(np.sqrt(np.sum(np.square(m))))


@dataclass
class AdamState:
    m: Matrix
    v: Matrix
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: Matrix, lr: float = 5e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64),
                   0, lr, beta1, beta2, eps)

    def resized(self, shape: tuple[int, int]) -> "AdamState":
        """Moments cropped or zero-extended to ``shape`` (rank changes)."""
        m = np.zeros(shape)
        v = np.zeros(shape)
        r = min(shape[0], self.m.shape[0])
        c = min(shape[1], self.m.shape[1])
        m[:r, :c] = self.m[:r, :c]
        v[:r, :c] = self.v[:r, :c]
        return AdamState(m, v, self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(param: Matrix, grad: Matrix, state: AdamState) -> Matrix:
    """One bias-corrected Adam update. Advances ``state`` in place."""
    if param.shape != grad.shape or param.shape != state.m.shape or param.shape != state.v.shape:
        raise ValueError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"moments {state.m.shape}/{state.v.shape}"
        )
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
