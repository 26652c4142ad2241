import numpy as np
import pytest

from multilingual import Batch, build_grouping, iterate_examples
from seq2seq import AdapterConfig, AdapterSet, ConfigError, attach_adapter_set, build_model, freeze_backbone
from training import (
    EarlyStopState,
    GroupTrainer,
    TrainConfig,
    TrainingCoverageError,
    accumulate_gradients,
    early_stop_update,
    group_languages,
    lr_at_step,
    model_for_checkpoint,
    train_regime,
    validate_perplexity,
)
from training.trainer import group_fingerprint


def _cfg(**overrides):
    values = dict(max_updates=6, warmup_updates=2, max_lr=1e-2, update_frequency=2, eval_interval_updates=2,
                  patience=5, dropout=0.0, batch_tokens=24, valid_batch_size=8)
    values.update(overrides)
    return TrainConfig(**values)


def _subset(corpora, codes):
    return {f"en-{c}": corpora[f"en-{c}"] for c in codes}


def _adapter_cfg(model_cfg):
    return AdapterConfig(model_dim=model_cfg.model_dim, bottleneck=4)


def _train(model, registry, codes, train, valid, vocab, cfg, kind="family", **kwargs):
    scheme = build_grouping(registry.subset(codes), kind)
    return train_regime(model, scheme, _subset(train, codes), cfg, valid_corpora=_subset(valid, codes),
                        vocab=vocab, adapter_cfg=_adapter_cfg(model.cfg), **kwargs)


def test_learning_rate_schedule():
    cfg = TrainConfig(max_updates=20000, warmup_updates=4000, max_lr=1e-4)
    assert lr_at_step(cfg, 0) == 0.0
    assert lr_at_step(cfg, 2000) == pytest.approx(5e-5)
    assert lr_at_step(cfg, 4000) == pytest.approx(1e-4)
    assert lr_at_step(cfg, 16000) == pytest.approx(5e-5)
    assert lr_at_step(TrainConfig(warmup_updates=0, max_lr=3e-4), 1) == 3e-4
    with pytest.raises(ValueError):
        lr_at_step(cfg, -1)


def test_early_stopping_counts_ties_as_stale():
    state = EarlyStopState(patience=2)
    for metric in (3.0, 2.0, 2.0, 2.0):
        state = early_stop_update(state, metric)
    assert state.best == 2.0 and state.since_improvement == 2 and not state.stopped
    state = early_stop_update(state, 2.5)
    assert state.stopped
    assert early_stop_update(state, 1.0).since_improvement == 0


def test_config_validation():
    with pytest.raises(ConfigError) as err:
        TrainConfig(max_updates=0, max_lr=0.0, temperature=0.0).validate()
    assert len(err.value.violations) >= 3


def test_extending_a_run_keeps_the_group_fingerprint(toy_model_cfg):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    adapter_cfg = _adapter_cfg(toy_model_cfg)
    short = group_fingerprint(model, adapter_cfg, _cfg(max_updates=3), "g", ["en-hr"], False)
    assert group_fingerprint(model, adapter_cfg, _cfg(max_updates=300), "g", ["en-hr"], False) == short
    assert group_fingerprint(model, adapter_cfg, _cfg(max_updates=3, max_lr=5e-3), "g", ["en-hr"], False) != short


def test_train_dropout_must_match_the_model(toy_model_cfg, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        GroupTrainer(model, "g", _subset(toy_train, ["hr"]), _subset(toy_valid, ["hr"]), toy_vocab,
                     _cfg(dropout=0.3), _adapter_cfg(toy_model_cfg))


def test_uniform_model_has_vocabulary_sized_perplexity(toy_model_cfg, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    model.embed.data[...] = 0.0
    ppl = validate_perplexity(model, None, _subset(toy_valid, ["hr", "id"]), toy_vocab)
    assert ppl == pytest.approx(len(toy_vocab), rel=1e-9)


def test_perplexity_pools_tokens_across_pairs(toy_model_cfg, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(1))
    parts = _subset(toy_valid, ["hr", "fa", "fil"])
    log_total, tokens = 0.0, 0
    for pair, corpus in parts.items():
        n = sum(len(tgt) + 1 for _, tgt in corpus.examples)
        log_total += n * np.log(validate_perplexity(model, None, {pair: corpus}, toy_vocab))
        tokens += n
    pooled = validate_perplexity(model, None, parts, toy_vocab, batch_size=2)
    assert pooled == pytest.approx(np.exp(log_total / tokens), rel=1e-9)


def test_accumulated_gradients_match_one_big_batch(toy_model_cfg, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(2))
    adapters = AdapterSet.create("g", toy_model_cfg, _adapter_cfg(toy_model_cfg), np.random.default_rng(3))
    for p in adapters.parameters():
        p.data += 0.3 * np.random.default_rng(4).normal(size=p.shape)
    attach_adapter_set(model, adapters)
    freeze_backbone(model)

    corpus = toy_valid["en-uk"]
    first, second = list(iterate_examples(corpus, 2, toy_vocab.eos_id, toy_vocab.tag_id("uk")))
    merged = Batch(first.pairs + second.pairs, first.src + second.src, first.tgt + second.tgt, first.tags + second.tags)

    def grads(batches):
        for p in adapters.parameters():
            p.grad = None
        loss = accumulate_gradients(model, batches, 0.2, train_mode=False)
        return loss, {p.name: p.grad.copy() for p in adapters.parameters()}

    split_loss, split_grads = grads([first, second])
    whole_loss, whole_grads = grads([merged])
    assert split_loss == pytest.approx(whole_loss, abs=1e-9)
    for name, g in whole_grads.items():
        assert np.max(np.abs(g - split_grads[name])) <= 1e-9, name


def test_adapter_training_never_touches_the_backbone(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    before = model.backbone_hash()
    results = _train(model, ted_registry, ["hr", "uk", "fa", "id"], toy_train, toy_valid, toy_vocab, _cfg(),
                     workers=2)
    assert model.backbone_hash() == before
    assert list(results) == ["Balto-Slavic", "Indo-Iranian", "Austronesian"]
    assert group_languages(results["Balto-Slavic"]) == ["hr", "uk"]
    assert all(not name.startswith("embed") for name in results["Indo-Iranian"].tensors)


@pytest.mark.slow
def test_backbone_is_unchanged_after_a_long_family_run(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    before = model.backbone_hash()
    cfg = _cfg(max_updates=500, warmup_updates=50, update_frequency=1, eval_interval_updates=100, patience=1000)
    results = _train(model, ted_registry, ted_registry.codes, toy_train, toy_valid, toy_vocab, cfg, workers=3)
    assert model.backbone_hash() == before
    assert len(results) == 3


def test_group_without_finite_perplexity_keeps_its_last_parameters(
    monkeypatch, tmp_path, toy_model_cfg, toy_train, toy_valid, toy_vocab
):
    monkeypatch.setattr("training.trainer.validate_perplexity", lambda *args, **kwargs: float("nan"))
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    trainer = GroupTrainer(model, "g", _subset(toy_train, ["hr"]), _subset(toy_valid, ["hr"]), toy_vocab, _cfg(),
                           _adapter_cfg(toy_model_cfg), out_dir=tmp_path / "g")
    best = trainer.run()
    assert best is not None
    assert best.metadata["update"] == trainer.update
    assert (tmp_path / "g" / "best.ckpt").exists()
    assert group_languages(best) == ["hr"]


def test_pair_adapters_depend_only_on_their_own_pair(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    runs = []
    for other in ("uk", "sl"):
        model = build_model(toy_model_cfg, np.random.default_rng(0))
        runs.append(_train(model, ted_registry, ["hr", other], toy_train, toy_valid, toy_vocab, _cfg(), kind="pair"))
    a, b = runs[0]["en-hr"].tensors, runs[1]["en-hr"].tensors
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_training_is_deterministic(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    outputs = []
    for _ in range(2):
        model = build_model(toy_model_cfg, np.random.default_rng(0))
        outputs.append(_train(model, ted_registry, ["bg", "hi"], toy_train, toy_valid, toy_vocab, _cfg(),
                              kind="agnostic"))
    first, second = outputs[0]["all"], outputs[1]["all"]
    assert first.metadata["perplexity"] == second.metadata["perplexity"]
    for name in first.tensors:
        np.testing.assert_array_equal(first.tensors[name], second.tensors[name])


def test_resumed_training_matches_an_uninterrupted_run(tmp_path, toy_model_cfg, toy_train, toy_valid, toy_vocab):
    train, valid = _subset(toy_train, ["hr", "mk"]), _subset(toy_valid, ["hr", "mk"])
    adapter_cfg = _adapter_cfg(toy_model_cfg)

    straight = GroupTrainer(build_model(toy_model_cfg, np.random.default_rng(0)), "g", train, valid, toy_vocab,
                            _cfg(max_updates=6), adapter_cfg, out_dir=tmp_path / "straight")
    straight.run()

    interrupted = GroupTrainer(build_model(toy_model_cfg, np.random.default_rng(0)), "g", train, valid, toy_vocab,
                               _cfg(max_updates=3), adapter_cfg, out_dir=tmp_path / "resumed")
    interrupted.run()
    resumed = GroupTrainer(build_model(toy_model_cfg, np.random.default_rng(0)), "g", train, valid, toy_vocab,
                           _cfg(max_updates=6), adapter_cfg, out_dir=tmp_path / "resumed")
    assert resumed.try_resume()
    assert resumed.update == 3
    resumed.run()

    expected = straight.snapshot("last").tensors
    got = resumed.snapshot("last").tensors
    assert expected.keys() == got.keys()
    for name in expected:
        np.testing.assert_array_equal(expected[name], got[name])

    log = resumed.log
    assert log.to_frame()["update"].tolist() == list(range(1, 7))


def test_best_checkpoint_is_no_worse_than_the_last(tmp_path, toy_model_cfg, toy_train, toy_valid, toy_vocab):
    trainer = GroupTrainer(build_model(toy_model_cfg, np.random.default_rng(5)), "g", _subset(toy_train, ["id"]),
                           _subset(toy_valid, ["id"]), toy_vocab, _cfg(max_updates=8), _adapter_cfg(toy_model_cfg),
                           out_dir=tmp_path)
    best = trainer.run()
    assert best.metadata["perplexity"] <= trainer.last_perplexity
    evaluations = trainer.log.evaluations()
    assert evaluations["update"].tolist() == [2, 4, 6, 8]
    assert best.metadata["perplexity"] == pytest.approx(evaluations["perplexity"].min())
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()


def test_checkpoint_model_reproduces_its_perplexity(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    results = _train(model, ted_registry, ["ms", "fil"], toy_train, toy_valid, toy_vocab, _cfg(), kind="family")
    ckpt = results["Austronesian"]
    view = model_for_checkpoint(model, ckpt)
    ppl = validate_perplexity(view, None, _subset(toy_valid, ["ms", "fil"]), toy_vocab, batch_size=8)
    assert ppl == pytest.approx(ckpt.metadata["perplexity"], rel=1e-9)
    assert model.active_adapters is None


def test_full_finetuning_updates_the_backbone(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    before = model.backbone_hash()
    results = _train(model, ted_registry, ["hr", "fa"], toy_train, toy_valid, toy_vocab, _cfg(), kind="agnostic",
                     full_finetune=True)
    assert model.backbone_hash() != before
    assert results["all"].metadata["full_finetune"]
    with pytest.raises(ConfigError):
        _train(model, ted_registry, ["hr", "fa"], toy_train, toy_valid, toy_vocab, _cfg(), kind="family",
               full_finetune=True)


def test_grouping_and_corpora_must_agree(toy_model_cfg, ted_registry, toy_train, toy_valid, toy_vocab):
    model = build_model(toy_model_cfg, np.random.default_rng(0))
    scheme = build_grouping(ted_registry.subset(["hr", "fa"]), "family")
    with pytest.raises(TrainingCoverageError) as err:
        train_regime(model, scheme, _subset(toy_train, ["hr"]), _cfg(), valid_corpora=_subset(toy_valid, ["hr", "fa"]),
                     vocab=toy_vocab, adapter_cfg=_adapter_cfg(toy_model_cfg))
    assert err.value.languages == ["fa"]
    with pytest.raises(TrainingCoverageError):
        train_regime(model, scheme, _subset(toy_train, ["hr", "fa", "id"]), _cfg(),
                     valid_corpora=_subset(toy_valid, ["hr", "fa"]), vocab=toy_vocab,
                     adapter_cfg=_adapter_cfg(toy_model_cfg))
