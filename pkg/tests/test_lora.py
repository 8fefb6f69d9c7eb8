import warnings

import numpy as np
import pytest

from hetlora.aggregation import pad_zero
from hetlora.lora import (
    LoraAdapter,
    LoraConfig,
    delta,
    from_bytes,
    init_adapter,
    load_adapters,
    param_count,
    save_adapters,
    to_bytes,
    truncate,
)
from hetlora.numerics import as_matrix, frobenius_norm, make_rng

from conftest import naive_matmul


def test_init_has_zero_delta_and_expected_shapes(rng):
    ad = init_adapter(LoraConfig(4, 4, 2), rng)
    assert ad.A.shape == (2, 4) and ad.B.shape == (4, 2)
    assert frobenius_norm(delta(ad)) == 0.0


def test_init_is_seeded():
    cfg = LoraConfig(6, 5, 3)
    assert np.array_equal(init_adapter(cfg, make_rng(3)).A, init_adapter(cfg, make_rng(3)).A)


def test_init_variance_is_one_over_rank():
    ad = init_adapter(LoraConfig(40, 20_000, 4), make_rng(0))
    assert abs(ad.A.var() - 0.25) < 0.01


def test_delta_outer_product():
    ad = LoraAdapter(as_matrix([[1], [2]]), as_matrix([[3, 4]]))
    assert delta(ad).tolist() == [[3, 4], [6, 8]]


def test_delta_matches_matmul_oracle(rng):
    ad = LoraAdapter(rng.standard_normal((5, 3)), rng.standard_normal((3, 4)))
    np.testing.assert_allclose(delta(ad), naive_matmul(ad.B.tolist(), ad.A.tolist()), atol=1e-12)


@pytest.mark.parametrize(
    "m,n,r,k,expected",
    [(4096, 4096, 16, 1, 131_072), (768, 768, 20, 18, 552_960), (768, 768, 5, 18, 138_240)],
)
def test_param_count_reference_values(m, n, r, k, expected):
    assert param_count(LoraConfig(m, n, r, k)) == expected


def test_param_count_fraction_of_dense():
    assert param_count(LoraConfig(4096, 4096, 16)) / 4096**2 == 1 / 128


def test_param_count_monotone_in_rank():
    counts = [param_count(LoraConfig(64, 32, r, 2)) for r in range(1, 21)]
    assert all(a < b for a, b in zip(counts, counts[1:]))


@pytest.mark.parametrize("m,n,k", [(768, 768, 18), (64, 32, 1), (64, 64, 1), (4096, 4096, 1)])
def test_parameter_reduction_condition(m, n, k):
    for r in range(1, 40):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = LoraConfig(m, n, r, k)
        if r < m * n / (m + n):
            assert param_count(cfg) < k * m * n


def test_config_warns_without_parameter_savings():
    with pytest.warns(UserWarning, match="mn/\\(m\\+n\\)"):
        LoraConfig(4, 4, 3)


def test_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        LoraConfig(4, 4, 0)


def test_truncate():
    B = np.arange(12.0).reshape(4, 3)
    A = np.arange(15.0).reshape(3, 5)
    ad = LoraAdapter(B, A)
    same = truncate(ad, 3)
    assert np.array_equal(same.B, B) and np.array_equal(same.A, A)
    t = truncate(ad, 2)
    assert np.array_equal(t.B, B[:, :2]) and np.array_equal(t.A, A[:2])
    with pytest.raises(ValueError):
        truncate(ad, 4)


def test_truncate_inverts_zero_padding(rng):
    ad = LoraAdapter(rng.standard_normal((6, 3)), rng.standard_normal((3, 5)))
    back = truncate(pad_zero(ad, 9), 3)
    assert back.B.tobytes() == ad.B.tobytes() and back.A.tobytes() == ad.A.tobytes()


def test_serialization_layout(rng, tmp_path):
    ad = LoraAdapter(rng.standard_normal((3, 2)), rng.standard_normal((2, 4)))
    blob = to_bytes(ad)
    assert np.frombuffer(blob[:24], "<u8").tolist() == [3, 4, 2]
    assert np.array_equal(np.frombuffer(blob[24:24 + 48], "<f8").reshape(3, 2), ad.B)
    assert np.array_equal(np.frombuffer(blob[72:], "<f8").reshape(2, 4), ad.A)
    back = from_bytes(blob)
    assert np.array_equal(back.B, ad.B) and np.array_equal(back.A, ad.A)

    second = LoraAdapter(rng.standard_normal((5, 1)), rng.standard_normal((1, 2)))
    save_adapters([ad, second], tmp_path / "a.bin")
    loaded = load_adapters(tmp_path / "a.bin")
    assert [x.shape for x in loaded] == [(3, 4), (5, 2)]
    with pytest.raises(ValueError):
        from_bytes(blob[:-8])
