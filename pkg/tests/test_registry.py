import numpy as np
import pytest

from multilingual import (
    GroupingCoverageError,
    RegistryParseError,
    build_grouping,
    check_partition,
    load_registry,
    parse_registry,
)


def _assert_partition(registry, scheme):
    codes = [code for _, members in scheme.groups for code in members]
    assert sorted(codes) == sorted(registry.codes)
    assert len(codes) == len(set(codes))


def test_bundled_ted_registry(ted_registry):
    assert len(ted_registry) == 17
    assert ted_registry["ku"].family == "Indo-Iranian" and not ted_registry["ku"].seen
    assert ted_registry["id"].family == "Austronesian" and ted_registry["id"].seen
    assert set(ted_registry.unseen()) == {"bg", "sr", "sk", "ku", "bs", "ms", "be", "fil"}
    assert ted_registry["bg"].pair == "en-bg"


def test_bundled_opus_registry():
    opus = load_registry("opus")
    assert len(opus) == 16
    assert sorted(len(opus.members(f)) for f in opus.families()) == [2, 5, 9]


def test_registry_text_round_trip(ted_registry):
    again = parse_registry(ted_registry.to_text())
    assert [(i.code, i.family, i.seen, i.train_size) for i in again] == \
        [(i.code, i.family, i.seen, i.train_size) for i in ted_registry]


@pytest.mark.parametrize("text,line", [
    ("xx Fam Latin seen 10\nxx Fam Latin seen 5\n", 2),
    ("# header\nxx Fam Latin seen\n", 2),
    ("xx Fam Latin maybe 10\n", 1),
    ("xx Fam Latin seen ten\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(RegistryParseError) as err:
        parse_registry(text)
    assert err.value.line_no == line


def test_empty_registry_is_an_error():
    with pytest.raises(RegistryParseError):
        parse_registry("# nothing here\n\n")


def test_family_agnostic_and_pair_groupings(ted_registry):
    family = build_grouping(ted_registry, "family")
    assert family.group_ids == ["Balto-Slavic", "Indo-Iranian", "Austronesian"]
    assert dict(zip(family.group_ids, family.sizes())) == {"Balto-Slavic": 9, "Indo-Iranian": 5, "Austronesian": 3}
    assert family.group_of("ku") == "Indo-Iranian"

    agnostic = build_grouping(ted_registry, "agnostic")
    assert agnostic.sizes() == [17]

    pair = build_grouping(ted_registry, "pair")
    assert len(pair) == 17 and set(pair.sizes()) == {1}
    assert pair.members("en-fil") == ("fil",)


def test_deterministic_kinds_ignore_the_seed(ted_registry):
    for kind in ("family", "agnostic", "pair"):
        a = build_grouping(ted_registry, kind, rng=np.random.default_rng(0))
        b = build_grouping(ted_registry, kind, rng=np.random.default_rng(1))
        assert a == b


@pytest.mark.parametrize("seed", range(10))
def test_every_grouping_is_a_partition(ted_registry, seed):
    for kind in ("family", "agnostic", "pair", "random"):
        _assert_partition(ted_registry, build_grouping(ted_registry, kind, rng=np.random.default_rng(seed)))


def test_random_grouping_copies_the_family_size_profile(ted_registry):
    family = build_grouping(ted_registry, "family")
    a = build_grouping(ted_registry, "random", rng=np.random.default_rng(3))
    b = build_grouping(ted_registry, "random", rng=np.random.default_rng(3))
    assert a.sizes() == family.sizes()
    assert a == b
    with pytest.raises(ValueError):
        build_grouping(ted_registry, "random")


def test_custom_grouping_must_partition(ted_registry):
    codes = ted_registry.codes
    ok = build_grouping(ted_registry, "custom", custom={"left": codes[:8], "right": codes[8:]})
    assert ok.kind == "custom" and ok.sizes() == [8, 9]

    with pytest.raises(GroupingCoverageError, match="missing"):
        build_grouping(ted_registry, "custom", custom={"left": codes[:8]})
    with pytest.raises(GroupingCoverageError, match="several"):
        build_grouping(ted_registry, "custom", custom={"a": codes, "b": codes[:1]})
    with pytest.raises(GroupingCoverageError, match="not in registry"):
        check_partition(ted_registry, {"a": codes + ["xx"]})
    with pytest.raises(ValueError):
        build_grouping(ted_registry, "family", custom={"a": codes})


def test_subset_keeps_registry_order(ted_registry):
    small = ted_registry.subset(["fil", "bg", "hi"])
    assert small.codes == ["bg", "hi", "fil"]
    with pytest.raises(KeyError):
        ted_registry.subset(["zz"])
