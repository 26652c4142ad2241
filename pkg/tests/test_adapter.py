import numpy as np
import pytest

from numcore import Tensor, grad_check
from numcore import functional as F
from seq2seq import AdapterConfig, AdapterLayer, ConfigError, adapter_forward, adapter_init, adapter_param_count


def _random_adapter(h: int, d: int, rng: np.random.Generator) -> AdapterLayer:
    """A trained-looking adapter: every parameter nonzero."""
    return AdapterLayer(
        "adapter",
        ln_scale=1.0 + 0.1 * rng.normal(size=h),
        ln_offset=0.1 * rng.normal(size=h),
        down=rng.normal(size=(h, d)),
        down_bias=0.1 * rng.normal(size=d),
        up=rng.normal(size=(d, h)),
        up_bias=0.1 * rng.normal(size=h),
    )


@pytest.mark.parametrize("h,d", [(2, 1), (4, 1), (4, 2), (8, 2)])
def test_fresh_adapter_is_the_identity(h, d):
    rng = np.random.default_rng(h * 10 + d)
    layer = adapter_init(AdapterConfig(model_dim=h, bottleneck=d), rng)
    z = Tensor(rng.normal(size=(3, 5, h)))
    out = adapter_forward(layer, z)
    assert out.shape == z.shape
    assert np.array_equal(out.data, z.data)


def test_zero_pre_activation_passes_input_through():
    layer = AdapterLayer(
        "adapter",
        ln_scale=np.ones(2),
        ln_offset=np.zeros(2),
        down=np.array([[1.0], [1.0]]),
        down_bias=np.zeros(1),
        up=np.array([[3.0, 4.0]]),
        up_bias=np.zeros(2),
    )
    np.testing.assert_array_equal(layer(Tensor([[0.0, 2.0]])).data, [[0.0, 2.0]])


def test_trained_adapter_keeps_shape():
    rng = np.random.default_rng(1)
    layer = _random_adapter(8, 2, rng)
    z = Tensor(rng.normal(size=(2, 3, 8)))
    out = layer(z)
    assert out.shape == z.shape
    assert not np.allclose(out.data, z.data)


def test_init_is_seeded_and_scaled():
    cfg = AdapterConfig(model_dim=6, bottleneck=3, init_scale=0.05)
    a = adapter_init(cfg, np.random.default_rng(7))
    b = adapter_init(cfg, np.random.default_rng(7))
    assert np.array_equal(a.down.data, b.down.data)
    assert np.abs(a.down.data).max() <= 0.05
    assert not a.up.data.any() and not a.up_bias.data.any() and not a.down_bias.data.any()
    assert np.array_equal(a.ln_scale.data, np.ones(6))

    zero = adapter_init(AdapterConfig(model_dim=6, bottleneck=3, init_scale=0.0), np.random.default_rng(7))
    assert not zero.down.data.any()


def test_param_count_formula():
    assert adapter_param_count(AdapterConfig(model_dim=2, bottleneck=1)) == 11
    assert adapter_param_count(AdapterConfig(model_dim=1, bottleneck=1)) == 6
    with pytest.raises(ConfigError):
        adapter_param_count(AdapterConfig(model_dim=4, bottleneck=0))


def test_embedding_adapter_costs_about_a_million():
    count = adapter_param_count(AdapterConfig(model_dim=1024, bottleneck=512))
    assert count == 1_052_160
    assert abs(count - 1_000_000) <= 100_000
    assert count <= 0.002 * 680_000_000


@pytest.mark.parametrize("h,d", [(2, 1), (8, 4), (16, 3)])
def test_param_count_matches_enumeration(h, d):
    cfg = AdapterConfig(model_dim=h, bottleneck=d)
    layer = adapter_init(cfg, np.random.default_rng(0))
    assert sum(p.size for p in layer.parameters()) == adapter_param_count(cfg)


def test_config_lists_every_violation():
    with pytest.raises(ConfigError) as err:
        AdapterConfig(model_dim=0, bottleneck=0, placement="middle").validate()
    assert len(err.value.violations) == 3


def test_adapter_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        layer = _random_adapter(4, 2, rng)
        weights = rng.normal(size=(2, 4))

        def through_input(z):
            return F.sum(F.mul(adapter_forward(layer, z), weights))

        assert grad_check(through_input, Tensor(rng.normal(size=(2, 4)))) < 1e-4

    layer = _random_adapter(4, 2, rng)
    z = Tensor(rng.normal(size=(3, 4)))
    weights = rng.normal(size=(3, 4))
    for name in ("down", "up", "ln_scale", "ln_offset", "down_bias", "up_bias"):
        original = getattr(layer, name)

        def through_parameter(t, name=name):
            setattr(layer, name, t)
            try:
                return F.sum(F.mul(adapter_forward(layer, z), weights))
            finally:
                setattr(layer, name, original)

        assert grad_check(through_parameter, Tensor(original.data.copy())) < 1e-4, name
