import math

import numpy as np
import pytest

from hetlora.lora import LoraAdapter
from hetlora.model import (
    AdaptedModel,
    FrozenBackbone,
    evaluate,
    forward,
    fresh_adam_states,
    init_adapters,
    local_train,
    loss_and_grads,
    predict,
    pretrain_backbone,
    random_backbone,
)
from hetlora.numerics import make_rng


@pytest.fixture
def backbone():
    return random_backbone(6, 8, 3, make_rng(0))


def with_random_adapters(bb, rank, seed):
    g = make_rng(seed)
    ads = [LoraAdapter(0.3 * g.standard_normal((m, rank)), g.standard_normal((rank, n)) / np.sqrt(rank))
           for m, n in bb.layer_shapes()]
    return AdaptedModel(bb, ads)


def backbone_logits(bb, x):
    h = x
    for w, b in zip(bb.weights, bb.biases):
        h = np.tanh(h @ w.T + b)
    return h @ bb.head_w.T + bb.head_b


def test_fresh_adapters_leave_backbone_output(backbone):
    x = make_rng(1).standard_normal((5, 6))
    model = AdaptedModel(backbone, init_adapters(backbone, 3, make_rng(2)))
    assert np.array_equal(forward(model, x), backbone_logits(backbone, x))


def test_forward_hand_computed():
    bb = FrozenBackbone([np.array([[1.0, 0.0], [0.5, -1.0]])], [np.array([0.1, 0.0])],
                        np.array([[1.0, 2.0], [0.0, -1.0]]), np.array([0.0, 0.5]), adapted=(0,))
    ad = LoraAdapter(np.array([[1.0], [0.0]]), np.array([[0.0, 2.0]]))
    x = np.array([[1.0, 0.5]])
    # W + BA = [[1, 2], [0.5, -1]]
    h0 = math.tanh(1.0 * 1.0 + 2.0 * 0.5 + 0.1)
    h1 = math.tanh(0.5 * 1.0 - 1.0 * 0.5)
    expected = [h0 + 2.0 * h1, -h1 + 0.5]
    np.testing.assert_allclose(forward(AdaptedModel(bb, [ad]), x)[0], expected, atol=1e-15)


def test_batch_equals_stacked_singles(backbone):
    model = with_random_adapters(backbone, 2, 3)
    x = make_rng(4).standard_normal((2, 6))
    both = forward(model, x)
    np.testing.assert_allclose(both[0], forward(model, x[:1])[0], rtol=0, atol=1e-13)
    np.testing.assert_allclose(both[1], forward(model, x[1:])[0], rtol=0, atol=1e-13)


def test_forward_dimension_mismatch(backbone):
    with pytest.raises(ValueError):
        forward(AdaptedModel(backbone, init_adapters(backbone, 2, make_rng(0))), np.zeros((1, 5)))


def test_adapter_shape_mismatch_rejected(backbone):
    with pytest.raises(ValueError):
        AdaptedModel(backbone, init_adapters(random_backbone(6, 9, 3, make_rng(0)), 2, make_rng(0)))


def test_uniform_logits_give_log_c_loss(backbone):
    bb = FrozenBackbone(backbone.weights, backbone.biases, np.zeros((3, 8)), np.zeros(3))
    loss, _ = loss_and_grads(AdaptedModel(bb, init_adapters(bb, 2, make_rng(0))), np.ones((4, 6)),
                             np.array([0, 1, 2, 0]))
    assert abs(loss - math.log(3)) < 1e-15


def _loss(model, x, y):
    return loss_and_grads(model, x, y)[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_central_differences(backbone, seed):
    model = with_random_adapters(backbone, 3, 10 + seed)
    g = make_rng(20 + seed)
    x = g.standard_normal((7, 6))
    y = g.integers(0, 3, 7)
    _, grads = loss_and_grads(model, x, y)
    h = 1e-5
    for slot, (dB, dA) in enumerate(grads):
        for name, analytic in (("B", dB), ("A", dA)):
            param = getattr(model.adapters[slot], name)
            for _ in range(10):
                i, j = g.integers(param.shape[0]), g.integers(param.shape[1])
                old = param[i, j]
                param[i, j] = old + h
                up = _loss(model, x, y)
                param[i, j] = old - h
                down = _loss(model, x, y)
                param[i, j] = old
                numeric = (up - down) / (2 * h)
                assert abs(numeric - analytic[i, j]) <= 1e-5 * max(abs(numeric), 1e-6), (slot, name, i, j)


def test_duplicated_batch_gives_same_gradients(backbone):
    model = with_random_adapters(backbone, 2, 5)
    x = make_rng(6).standard_normal((4, 6))
    y = np.array([0, 2, 1, 1])
    _, g1 = loss_and_grads(model, x, y)
    _, g2 = loss_and_grads(model, np.vstack([x, x]), np.concatenate([y, y]))
    for (b1, a1), (b2, a2) in zip(g1, g2):
        np.testing.assert_allclose(b1, b2, atol=1e-15)
        np.testing.assert_allclose(a1, a2, atol=1e-15)


def test_empty_batch_rejected(backbone):
    with pytest.raises(ValueError):
        loss_and_grads(with_random_adapters(backbone, 2, 0), np.zeros((0, 6)), np.zeros(0, dtype=int))


def _separable(seed=0, n=256):
    g = make_rng(seed)
    y = g.integers(0, 2, n)
    x = g.standard_normal((n, 6)) * 0.3
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    return x, y


def test_zero_lr_changes_nothing():
    bb = random_backbone(6, 8, 2, make_rng(0))
    model = with_random_adapters(bb, 2, 1)
    x, y = _separable()
    states = fresh_adam_states(model.adapters, lr=0.0)
    out = local_train(model, x, y, 1, states, make_rng(0))
    for a, b in zip(out, model.adapters):
        assert np.array_equal(a.B, b.B) and np.array_equal(a.A, b.A)


def test_one_epoch_decreases_loss():
    bb = random_backbone(6, 8, 2, make_rng(0))
    model = AdaptedModel(bb, init_adapters(bb, 2, make_rng(1)))
    x, y = _separable()
    before = _loss(model, x, y)
    out = local_train(model, x, y, 1, fresh_adam_states(model.adapters, lr=1e-2), make_rng(2))
    assert _loss(AdaptedModel(bb, out), x, y) < before


def test_local_train_is_deterministic_and_touches_only_factors():
    bb = random_backbone(6, 8, 2, make_rng(0))
    fp = bb.fingerprint()
    model = AdaptedModel(bb, init_adapters(bb, 2, make_rng(1)))
    x, y = _separable()
    runs = [local_train(model, x, y, 2, fresh_adam_states(model.adapters), make_rng(7)) for _ in range(2)]
    for a, b in zip(*runs):
        assert a.B.tobytes() == b.B.tobytes() and a.A.tobytes() == b.A.tobytes()
    assert bb.fingerprint() == fp


def test_evaluate_perfect_and_pure(backbone):
    model = with_random_adapters(backbone, 2, 0)
    x = make_rng(3).standard_normal((50, 6))
    y = predict(model, x)
    assert evaluate(model, x, y) == 1.0
    assert evaluate(model, x, (y + 1) % 3) == 0.0
    assert evaluate(model, x, y) == evaluate(model, x, y)


def test_ties_go_to_lowest_class():
    bb = FrozenBackbone([np.eye(2)], [np.zeros(2)], np.zeros((3, 2)), np.zeros(3), adapted=(0,))
    model = AdaptedModel(bb, [LoraAdapter(np.zeros((2, 1)), np.zeros((1, 2)))])
    assert predict(model, np.ones((4, 2))).tolist() == [0, 0, 0, 0]


def test_random_frozen_model_is_near_chance():
    from hetlora.datagen import generate_task

    accs = []
    for seed in range(10):
        task = generate_task(4, 32, (8, 8, 2000), make_rng(seed, 1))
        bb = random_backbone(32, 64, 4, make_rng(seed))
        accs.append(evaluate(AdaptedModel(bb, init_adapters(bb, 5, make_rng(seed))), task.x_test, task.y_test))
    assert all(0.15 <= a <= 0.35 for a in accs), accs


def test_pretraining_helps_and_leaves_head_untouched():
    from hetlora.datagen import generate_task

    task = generate_task(4, 32, (400, 8, 2000), make_rng(0))
    bb = random_backbone(32, 64, 4, make_rng(1))
    pre = pretrain_backbone(bb, task.x_train, task.y_train, steps=10, lr=1e-3)
    assert np.array_equal(pre.head_w, bb.head_w)
    acc = lambda b: evaluate(AdaptedModel(b, init_adapters(b, 5, make_rng(0))), task.x_test, task.y_test)  # noqa: E731
    assert acc(pre) > acc(bb)
