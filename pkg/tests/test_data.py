import numpy as np
import pytest

from multilingual import (
    AlignmentError,
    BatchSampler,
    BitextCorpus,
    CorpusError,
    SamplingDomainError,
    SamplingSchedule,
    Vocab,
    build_vocab,
    detokenize,
    iterate_examples,
    load_bitext,
    sample_batches,
    split_corpus,
    temperature_weights,
    tokenize,
)

SIZES = {"en-x": 1000, "en-y": 100, "en-z": 10}


@pytest.fixture
def small_vocab():
    return build_vocab(["a b c"], lang_codes=["x", "y", "z"])


@pytest.fixture
def skewed_corpora():
    return {
        pair: BitextCorpus(pair, "train", tuple(((7, 8, 9)[: 1 + i % 3], (8,)) for i in range(n)))
        for pair, n in SIZES.items()
    }


def test_temperature_weight_examples():
    np.testing.assert_allclose(temperature_weights([100, 1], 1.0), [100 / 101, 1 / 101])
    np.testing.assert_allclose(temperature_weights([4, 1], 2.0), [2 / 3, 1 / 3])
    np.testing.assert_allclose(temperature_weights([1000, 10, 1], np.inf), [1 / 3] * 3)


@pytest.mark.parametrize("temperature", [0.5, 1.0, 1.5, 5.0, 100.0])
def test_weights_are_a_distribution_and_scale_free(temperature):
    sizes = [174000, 10000, 3000]
    weights = temperature_weights(sizes, temperature)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(weights > 0)
    np.testing.assert_allclose(temperature_weights([7 * s for s in sizes], temperature), weights)


def test_higher_temperature_flattens_the_distribution():
    sizes = [1000, 100, 10]
    smallest = [temperature_weights(sizes, t)[-1] for t in (1.0, 1.5, 2.0, 5.0, 50.0)]
    assert smallest == sorted(smallest)


@pytest.mark.parametrize("sizes,temperature", [([10, 0], 1.0), ([10, -1], 1.0), ([10], 0.0), ([10], -2.0), ([], 1.0)])
def test_weights_reject_bad_domain(sizes, temperature):
    with pytest.raises(SamplingDomainError):
        temperature_weights(sizes, temperature)


@pytest.mark.parametrize("temperature", [1.0, 1.5, 5.0])
def test_draw_frequencies_follow_the_schedule(skewed_corpora, small_vocab, temperature):
    schedule = SamplingSchedule.from_corpora(skewed_corpora, temperature)
    sampler = BatchSampler(skewed_corpora, schedule, 8, np.random.default_rng(11), small_vocab)
    draws = [sampler.draw_pair() for _ in range(100_000)]
    for pair, expected in zip(schedule.pairs, schedule.probabilities):
        assert abs(draws.count(pair) / len(draws) - expected) <= 0.01


def test_same_seed_gives_the_same_batches(skewed_corpora, small_vocab):
    schedule = SamplingSchedule.from_corpora(skewed_corpora)
    a = BatchSampler(skewed_corpora, schedule, 12, np.random.default_rng(5), small_vocab)
    b = BatchSampler(skewed_corpora, schedule, 12, np.random.default_rng(5), small_vocab)
    for _ in range(20):
        assert a.next_batch() == b.next_batch()

    stream = sample_batches(skewed_corpora, schedule, 12, np.random.default_rng(5), small_vocab)
    c = BatchSampler(skewed_corpora, schedule, 12, np.random.default_rng(5), small_vocab)
    for _ in range(5):
        assert next(stream) == c.next_batch()


def test_batches_close_at_the_token_budget(skewed_corpora, small_vocab):
    schedule = SamplingSchedule.from_corpora(skewed_corpora)
    single = BatchSampler(skewed_corpora, schedule, 1, np.random.default_rng(0), small_vocab)
    for _ in range(10):
        assert len(single.next_batch()) == 1

    sampler = BatchSampler(skewed_corpora, schedule, 20, np.random.default_rng(0), small_vocab)
    for _ in range(10):
        batch = sampler.next_batch()
        sizes = [max(len(s), len(t) - 1) for s, t in zip(batch.src, batch.tgt)]
        assert sum(sizes) >= 20
        assert sum(sizes[:-1]) < 20
        assert all(t[-1] == small_vocab.eos_id for t in batch.tgt)
        assert all(tag == small_vocab.tag_id(p.split("-")[1]) for tag, p in zip(batch.tags, batch.pairs))


def test_sampler_rejects_mismatched_or_empty_corpora(skewed_corpora, small_vocab):
    schedule = SamplingSchedule.from_corpora(skewed_corpora)
    with pytest.raises(CorpusError):
        BatchSampler({"en-x": skewed_corpora["en-x"]}, schedule, 8, np.random.default_rng(0), small_vocab)
    with pytest.raises(SamplingDomainError):
        SamplingSchedule(1.0, ("en-x",), (0,))


def test_split_is_disjoint_and_order_preserving():
    corpus = BitextCorpus("en-x", "train", tuple(((i + 4,), (i + 4,)) for i in range(10)))
    train, valid, test = split_corpus(corpus, 2, 2, np.random.default_rng(3))
    assert (len(train), len(valid), len(test)) == (6, 2, 2)
    ids = [ex[0][0] for part in (train, valid, test) for ex in part.examples]
    assert sorted(ids) == list(range(4, 14))
    for part in (train, valid, test):
        firsts = [ex[0][0] for ex in part.examples]
        assert firsts == sorted(firsts)
    again = split_corpus(corpus, 2, 2, np.random.default_rng(3))
    assert again == (train, valid, test)
    with pytest.raises(CorpusError):
        split_corpus(corpus, 5, 5, np.random.default_rng(0))


def test_misaligned_bitext_is_rejected(tmp_path, small_vocab):
    (tmp_path / "src").write_text("a b\nc\n", encoding="utf-8")
    (tmp_path / "tgt").write_text("a\n", encoding="utf-8")
    with pytest.raises(AlignmentError) as err:
        load_bitext(tmp_path / "src", tmp_path / "tgt", small_vocab, "en-x")
    assert (err.value.src_lines, err.value.tgt_lines) == (2, 1)


def test_unknown_tokens_map_to_unk(tmp_path, small_vocab):
    (tmp_path / "src").write_text("a zzz\n", encoding="utf-8")
    (tmp_path / "tgt").write_text("b\n", encoding="utf-8")
    corpus = load_bitext(tmp_path / "src", tmp_path / "tgt", small_vocab, "en-x")
    assert corpus.examples[0][0] == (small_vocab.index["a"], small_vocab.unk_id)

    (tmp_path / "tgt").write_text("\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        load_bitext(tmp_path / "src", tmp_path / "tgt", small_vocab, "en-x")


def test_vocab_reserves_ids_and_ranks_by_frequency():
    vocab = build_vocab(["a b a"], lang_codes=["bg"])
    assert vocab.tokens == ["<pad>", "<s>", "</s>", "<unk>", "__bg__", "a", "b"]
    assert vocab.tag_id("bg") == 4
    assert vocab.encode("b a q") == [6, 5, 3]
    assert build_vocab(["b a"]).tokens[4:] == ["a", "b"]
    with pytest.raises(ValueError):
        build_vocab(["   "])
    with pytest.raises(KeyError):
        vocab.tag_id("xx")


def test_vocab_decode_stops_at_eos(tmp_path):
    vocab = build_vocab(["a b a"], lang_codes=["bg"])
    assert vocab.decode([4, 5, 0, 3, 6, 2, 5]) == "a <unk> b"
    vocab.save(tmp_path / "vocab.txt")
    assert Vocab.load(tmp_path / "vocab.txt").tokens == vocab.tokens


def test_only_registered_tags_are_language_tags(tmp_path):
    vocab = build_vocab(["__init__ __init__ a", "__init__ b"], lang_codes=["hr"])
    assert vocab.tokens[4:6] == ["__hr__", "__init__"]
    assert vocab.tag_ids() == {"hr": 4}
    assert vocab.decode([4, 5, 6]) == "__init__ a"
    with pytest.raises(KeyError):
        vocab.tag_id("init")

    vocab.save(tmp_path / "vocab.txt")
    loaded = Vocab.load(tmp_path / "vocab.txt", lang_codes=["hr"])
    assert loaded.tag_ids() == {"hr": 4}
    assert loaded.decode([5]) == "__init__"
    with pytest.raises(ValueError):
        Vocab.load(tmp_path / "vocab.txt", lang_codes=["bg"])


def test_char_mode_marks_spaces():
    assert tokenize("ab  c", "char") == ["a", "b", "▁", "c"]
    assert detokenize(tokenize("ab c", "char"), "char") == "ab c"
    vocab = build_vocab(["ab c"], mode="char")
    assert vocab.decode(vocab.encode("ca b")) == "ca b"
    with pytest.raises(ValueError):
        tokenize("x", "bpe")


def test_sequential_batches_cover_the_corpus(small_vocab):
    corpus = BitextCorpus("en-y", "valid", tuple(((4,), (5, 6)) for _ in range(7)))
    batches = list(iterate_examples(corpus, 3, small_vocab.eos_id, small_vocab.tag_id("y")))
    assert [len(b) for b in batches] == [3, 3, 1]
    assert batches[0].tgt[0] == [5, 6, 2]


def test_toy_corpus_loads_cleanly(toy_train, toy_valid, toy_vocab, ted_registry):
    assert list(toy_train) == [info.pair for info in ted_registry]
    for pair, corpus in toy_train.items():
        corpus.validate(len(toy_vocab))
        assert len(corpus) >= 6
        assert len(toy_valid[pair]) == 3
