from dataclasses import replace

import numpy as np
import pytest

from numcore import Tensor, grad_check
from numcore import functional as F
from seq2seq import (
    AdapterConfig,
    AdapterSet,
    ConfigError,
    CoverageError,
    ModelConfig,
    SequenceLengthError,
    adapter_slots,
    attach_adapter_set,
    build_model,
    detach_adapters,
    freeze_backbone,
    unfreeze_backbone,
)


def _random_inputs(rng, vocab_size, n=1):
    src = [rng.integers(4, vocab_size, size=rng.integers(1, 6)).tolist() for _ in range(n)]
    tgt = [rng.integers(4, vocab_size, size=rng.integers(1, 6)).tolist() for _ in range(n)]
    return src, tgt


def _perturb(adapter_set, rng, scale=0.5):
    for p in adapter_set.parameters():
        p.data += scale * rng.normal(size=p.shape)


def test_same_seed_builds_identical_backbones(tiny_cfg):
    a = build_model(tiny_cfg, np.random.default_rng(3))
    b = build_model(tiny_cfg, np.random.default_rng(3))
    assert a.backbone_hash() == b.backbone_hash()
    assert build_model(tiny_cfg, np.random.default_rng(4)).backbone_hash() != a.backbone_hash()


def test_invalid_config_lists_violations():
    with pytest.raises(ConfigError) as err:
        ModelConfig(vocab_size=10, model_dim=30, heads=4, dropout=1.5).validate()
    assert any("divisible" in v for v in err.value.violations)
    assert any("dropout" in v for v in err.value.violations)


def test_default_sized_model_runs_a_forward_pass():
    cfg = ModelConfig(vocab_size=20, model_dim=32, heads=4, enc_layers=2, dec_layers=2)
    model = build_model(cfg, np.random.default_rng(0))
    logits = model.forward_batch([[5, 6, 7], [8]], [[9, 10], [11, 12, 13]], [4, 4])
    assert logits.shape == (2, 3, 20)


def test_slots_follow_embedding_adapter_flag(tiny_cfg):
    assert adapter_slots(tiny_cfg) == [
        "encoder.embedding", "encoder.layers.0", "decoder.embedding", "decoder.layers.0",
    ]
    assert adapter_slots(replace(tiny_cfg, use_embedding_adapters=False)) == ["encoder.layers.0", "decoder.layers.0"]


def test_fresh_adapters_leave_logits_unchanged(tiny_cfg, tiny_adapter_cfg):
    rng = np.random.default_rng(1)
    model = build_model(tiny_cfg, rng)
    adapters = AdapterSet.create("all", tiny_cfg, tiny_adapter_cfg, rng)
    for _ in range(100):
        src, tgt = _random_inputs(rng, tiny_cfg.vocab_size, n=2)
        detach_adapters(model)
        bare = model.forward_batch(src, tgt, [4, 5]).data
        attach_adapter_set(model, adapters)
        with_adapters = model.forward_batch(src, tgt, [4, 5]).data
        assert np.max(np.abs(bare - with_adapters)) <= 1e-9


def test_swapping_adapter_sets_is_idempotent(tiny_cfg, tiny_adapter_cfg):
    rng = np.random.default_rng(2)
    model = build_model(tiny_cfg, rng)
    a = AdapterSet.create("a", tiny_cfg, tiny_adapter_cfg, rng)
    b = AdapterSet.create("b", tiny_cfg, tiny_adapter_cfg, rng)
    _perturb(a, rng)
    _perturb(b, rng)
    src, tgt = [[4, 5, 6]], [[7, 8]]
    attach_adapter_set(model, a)
    first = model.forward_batch(src, tgt, [9]).data
    previous = attach_adapter_set(model, b)
    assert previous is a
    other = model.forward_batch(src, tgt, [9]).data
    attach_adapter_set(model, a)
    assert np.array_equal(model.forward_batch(src, tgt, [9]).data, first)
    assert not np.allclose(other, first)


def test_missing_slot_is_a_coverage_error(tiny_cfg, tiny_adapter_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    partial = AdapterSet.create("partial", tiny_cfg, tiny_adapter_cfg, np.random.default_rng(0))
    del partial.adapters["decoder.embedding"]
    with pytest.raises(CoverageError, match="decoder.embedding"):
        attach_adapter_set(model, partial)


def test_adapter_set_must_match_model_width(tiny_cfg):
    with pytest.raises(ConfigError):
        AdapterSet.create("x", tiny_cfg, AdapterConfig(model_dim=16, bottleneck=2), np.random.default_rng(0))


def test_encode_prefixes_the_tag_and_is_deterministic(tiny_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    out = model.encode([4, 5, 6], 7)
    assert out.shape == (4, tiny_cfg.model_dim)
    assert np.array_equal(model.encode([4, 5, 6], 7).data, out.data)


def test_dropout_only_in_train_mode(tiny_cfg):
    cfg = replace(tiny_cfg, dropout=0.3, attention_dropout=0.3)
    model = build_model(cfg, np.random.default_rng(0))
    eval_a = model.encode([4, 5, 6], 7).data
    eval_b = model.encode([4, 5, 6], 7, train_mode=False).data
    trained = model.encode([4, 5, 6], 7, train_mode=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(eval_a, eval_b)
    assert not np.allclose(eval_a, trained)


def test_overlong_sequences_are_rejected(tiny_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    with pytest.raises(SequenceLengthError):
        model.encode([4] * tiny_cfg.max_len, 7)
    model.encode([4] * (tiny_cfg.max_len - 1), 7)


def test_decoder_is_causal(tiny_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(5))
    enc = model.encode([4, 5, 6], 7)
    logits = model.decode_teacher_forced(enc, [8, 9, 10, 11], 7).data
    assert logits.shape == (4, tiny_cfg.vocab_size)
    edited = model.decode_teacher_forced(enc, [8, 9, 5, 11], 7).data
    np.testing.assert_array_equal(edited[:3], logits[:3])
    assert not np.allclose(edited[3], logits[3])


def _record_ff_inputs(monkeypatch, layer):
    seen = []
    norm = layer.ff_ln

    def recording_norm(x):
        seen.append(x.data.copy())
        return norm(x)

    monkeypatch.setattr(layer, "ff_ln", recording_norm)
    return seen


@pytest.mark.parametrize("placement", ["before_ff", "after_ff"])
def test_placement_decides_what_the_feed_forward_sees(tiny_cfg, placement, monkeypatch):
    cfg = replace(tiny_cfg, adapter_placement=placement, use_embedding_adapters=False)
    rng = np.random.default_rng(6)
    model = build_model(cfg, rng)
    adapters = AdapterSet.create("g", cfg, AdapterConfig(cfg.model_dim, 4, placement=placement), rng)
    _perturb(adapters, rng)
    seen = _record_ff_inputs(monkeypatch, model.encoder_layers[0])

    model.encode([4, 5, 6], 7)
    attach_adapter_set(model, adapters)
    model.encode([4, 5, 6], 7)
    bare_input, adapted_input = seen

    if placement == "before_ff":
        assert not np.allclose(bare_input, adapted_input)
    else:
        np.testing.assert_array_equal(bare_input, adapted_input)


def test_forward_passes_leave_shared_layers_untouched(tiny_cfg, tiny_adapter_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    layers = model.encoder_layers + model.decoder_layers
    before = [dict(vars(layer)) for layer in layers]
    view = model.view()
    attach_adapter_set(view, AdapterSet.create("g", tiny_cfg, tiny_adapter_cfg, np.random.default_rng(1)))
    view.decode_teacher_forced(view.encode([4, 5, 6], 7), [8, 9], 7)
    assert [dict(vars(layer)) for layer in layers] == before


def test_freeze_keeps_adapters_trainable(tiny_cfg, tiny_adapter_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    adapters = AdapterSet.create("g", tiny_cfg, tiny_adapter_cfg, np.random.default_rng(1))
    attach_adapter_set(model, adapters)
    freeze_backbone(model)
    assert all(p.frozen for p in model.backbone_parameters())
    assert {p.name for p in model.trainable_parameters()} == {p.name for p in adapters.parameters()}
    unfreeze_backbone(model)
    assert not any(p.frozen for p in model.parameters())


def test_new_embedding_rows_stay_trainable(tiny_cfg):
    cfg = replace(tiny_cfg, train_new_embedding_rows=True)
    model = build_model(cfg, np.random.default_rng(0))
    freeze_backbone(model, new_rows=[5])
    assert not model.embed.frozen
    assert model.embed.update_mask.tolist() == [i == 5 for i in range(cfg.vocab_size)]


def test_view_shares_the_backbone(tiny_cfg, tiny_adapter_cfg):
    model = build_model(tiny_cfg, np.random.default_rng(0))
    view = model.view()
    attach_adapter_set(view, AdapterSet.create("g", tiny_cfg, tiny_adapter_cfg, np.random.default_rng(0)))
    assert model.active_adapters is None
    assert view.embed is model.embed
    private = model.view(private_embedding=True)
    private.embed.data[0] += 1.0
    assert private.embed is not model.embed
    assert view.backbone_hash() == model.backbone_hash()


def test_state_dict_round_trip(tiny_cfg):
    a = build_model(tiny_cfg, np.random.default_rng(0))
    b = build_model(tiny_cfg, np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    assert a.backbone_hash() == b.backbone_hash()
    with pytest.raises(KeyError):
        b.load_state_dict({})


def test_gradient_through_the_whole_model(tiny_cfg, tiny_adapter_cfg):
    rng = np.random.default_rng(8)
    model = build_model(tiny_cfg, rng)
    adapters = AdapterSet.create("g", tiny_cfg, tiny_adapter_cfg, rng)
    _perturb(adapters, rng)
    attach_adapter_set(model, adapters)
    freeze_backbone(model)
    layer = adapters["decoder.layers.0"]
    original = layer.up
    targets = np.array([5, 6, 2, 0])

    def loss_of_up(t):
        layer.up = t
        try:
            logits = model.forward_batch([[4, 7, 8]], [[5, 6, 2, 0]], [9])
            flat = F.reshape(logits, (4, tiny_cfg.vocab_size))
            return F.label_smoothed_nll(flat, targets, 0.2, pad_id=0)
        finally:
            layer.up = original

    assert grad_check(loss_of_up, Tensor(original.data.copy())) < 1e-3
