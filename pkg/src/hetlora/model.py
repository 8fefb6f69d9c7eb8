"""Small tanh MLP with frozen weights and LoRA adapters on its hidden layers."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .lora import LoraAdapter, LoraConfig, init_adapter
from .numerics import AdamState, Rng, adam_step


@dataclass
class FrozenBackbone:
    weights: list[np.ndarray]  # hidden layers, each (out, in)
    biases: list[np.ndarray]
    head_w: np.ndarray  # (C, h)
    head_b: np.ndarray
    adapted: tuple[int, ...] = (0, 1)

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [self.weights[i].shape for i in self.adapted]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.weights, *self.biases, self.head_w, self.head_b):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class AdaptedModel:
    backbone: FrozenBackbone
    adapters: list[LoraAdapter]

    def __post_init__(self):
        if len(self.adapters) != len(self.backbone.adapted):
            raise ValueError(f"{len(self.adapters)} adapters for {len(self.backbone.adapted)} adapted layers")
        for ad, shape in zip(self.adapters, self.backbone.layer_shapes()):
            if ad.shape != shape:
                raise ValueError(f"adapter shape {ad.shape} does not match host layer {shape}")


def random_backbone(dim: int, hidden: int, num_classes: int, rng: Rng) -> FrozenBackbone:
    weights = [rng.normal(0, 1 / np.sqrt(dim), (hidden, dim)), rng.normal(0, 1 / np.sqrt(hidden), (hidden, hidden))]
    biases = [np.zeros(hidden), np.zeros(hidden)]
    head_w = rng.normal(0, 1 / np.sqrt(hidden), (num_classes, hidden))
    return FrozenBackbone(weights, biases, head_w, np.zeros(num_classes))


def pretrain_backbone(backbone: FrozenBackbone, x: np.ndarray, y: np.ndarray, steps: int,
                      lr: float = 1e-2) -> FrozenBackbone:
    """Full-batch Adam on the hidden weights with the head held fixed.

    Stands in for a pretrained model: it gives the hidden layers some
    task-relevant structure before they are frozen for LoRA fine-tuning.
    """
    weights = [w.copy() for w in backbone.weights]
    biases = [b.copy() for b in backbone.biases]
    states = [AdamState.zeros_like(p, lr=lr) for p in weights]
    bstates = [AdamState.zeros_like(b[None, :], lr=lr) for b in biases]
    for _ in range(steps):
        cur = FrozenBackbone(weights, biases, backbone.head_w, backbone.head_b, backbone.adapted)
        acts, probs = _forward_cache(cur, None, x)
        dz = probs
        dz[np.arange(len(y)), y] -= 1.0
        dz /= len(y)
        g = dz @ backbone.head_w
        for i in reversed(range(len(weights))):
            g = g * (1.0 - acts[i + 1] ** 2)
            gw = g.T @ acts[i]
            gb = g.sum(axis=0)
            g = g @ weights[i]
            weights[i] = adam_step(weights[i], gw, states[i])
            biases[i] = adam_step(biases[i][None, :], gb[None, :], bstates[i])[0]
    return FrozenBackbone(weights, biases, backbone.head_w.copy(), backbone.head_b.copy(), backbone.adapted)


def _effective_weights(backbone: FrozenBackbone, adapters: list[LoraAdapter] | None) -> list[np.ndarray]:
    ws = list(backbone.weights)
    if adapters is not None:
        for slot, layer in enumerate(backbone.adapted):
            ws[layer] = ws[layer] + adapters[slot].B @ adapters[slot].A
    return ws


def _forward_cache(backbone: FrozenBackbone, adapters, x):
    """Hidden activations (input first) and softmax probabilities."""
    acts = [x]
    h = x
    for w, b in zip(_effective_weights(backbone, adapters), backbone.biases):
        h = np.tanh(h @ w.T + b)
        acts.append(h)
    logits = h @ backbone.head_w.T + backbone.head_b
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return acts, p


def forward(model: AdaptedModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.backbone.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != model input dim {model.backbone.input_dim}")
    h = x
    for w, b in zip(_effective_weights(model.backbone, model.adapters), model.backbone.biases):
        h = np.tanh(h @ w.T + b)
    return h @ model.backbone.head_w.T + model.backbone.head_b


def loss_and_grads(model: AdaptedModel, x: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and ``[(dB, dA), ...]`` per adapter."""
    if len(y) == 0:
        raise ValueError("empty batch")
    bb = model.backbone
    acts, probs = _forward_cache(bb, model.adapters, x)
    n = len(y)
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None))))
    dz = probs.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    ws = _effective_weights(bb, model.adapters)
    g = dz @ bb.head_w
    dW = [None] * len(ws)
    for i in reversed(range(len(ws))):
        g = g * (1.0 - acts[i + 1] ** 2)
        dW[i] = g.T @ acts[i]
        g = g @ ws[i]
    grads = []
    for slot, layer in enumerate(bb.adapted):
        ad = model.adapters[slot]
        grads.append((dW[layer] @ ad.A.T, ad.B.T @ dW[layer]))
    return loss, grads


def fresh_adam_states(adapters: list[LoraAdapter], lr: float = 5e-4, beta1: float = 0.9,
                      beta2: float = 0.999, eps: float = 1e-8) -> list[tuple[AdamState, AdamState]]:
    return [(AdamState.zeros_like(a.B, lr, beta1, beta2, eps), AdamState.zeros_like(a.A, lr, beta1, beta2, eps))
            for a in adapters]


def local_train(model: AdaptedModel, x: np.ndarray, y: np.ndarray, epochs: int,
                states: list[tuple[AdamState, AdamState]], rng: Rng, batch_size: int = 32) -> list[LoraAdapter]:
    """Minibatch Adam on the LoRA factors only; returns the new adapters."""
    if len(y) == 0:
        raise ValueError("empty shard")
    adapters = [a.copy() for a in model.adapters]
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            _, grads = loss_and_grads(AdaptedModel(model.backbone, adapters), x[idx], y[idx])
            for slot, (dB, dA) in enumerate(grads):
                sB, sA = states[slot]
                adapters[slot] = type(adapters[slot])(
                    adam_step(adapters[slot].B, dB, sB), adam_step(adapters[slot].A, dA, sA)
                )
    return adapters


def predict(model: AdaptedModel, x: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(forward(model, x), axis=1)


def evaluate(model: AdaptedModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("empty evaluation split")
    return float(np.mean(predict(model, x) == y))


def init_adapters(backbone: FrozenBackbone, rank: int, rng: Rng) -> list[LoraAdapter]:
    return [init_adapter(LoraConfig(m, n, rank), rng) for m, n in backbone.layer_shapes()]
