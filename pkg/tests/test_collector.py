import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mutafuzz.collector import (
    Collector,
    InstructRecord,
    MutationRecord,
    build_dataset,
    format_hex,
    format_pairs,
    parse_hex,
    parse_pairs,
    read_jsonl,
    read_records,
    read_text,
    split,
    train_size,
    write_dataset,
    write_split,
)
from mutafuzz.corpus import TestCase
from mutafuzz.errors import NoRecords, TooFewSamples
from mutafuzz.mutation import MutationDetail, MutationParams, MutationStrategy as S, is_valid_position

EXAMPLE_SEED = bytes([0x3C, 0x21, 0x44, 0x4F, 0x43])


def flip(pos0, bit=0):
    return MutationDetail(S.BITFLIP_1_1, pos0, MutationParams(bit_offset=bit))


def example_records():
    c = Collector("xmllint")
    c.record(flip(1), TestCase(0, EXAMPLE_SEED), "new_path", 3)
    c.record(flip(2), TestCase(0, EXAMPLE_SEED), "crash", 7)
    return c.records


def test_record_keeps_only_effective():
    c = Collector("p")
    assert c.record(flip(0), TestCase(0, b"ab"), "new_path", 1)
    assert not c.record(flip(0), TestCase(0, b"ab"), "nothing", 2)
    assert c.record(flip(1), TestCase(0, b"ab"), "crash", 3)
    assert c.record(flip(1), TestCase(0, b"ab"), "crash", 4)  # duplicate crash still counts
    assert len(c) == 3
    assert [r.pair for r in c.records] == [(1, 1), (1, 2), (1, 2)]


def test_dataset_sample_format():
    ds = build_dataset(example_records())
    assert len(ds) == 1
    assert ds[0].input == "0x3c 0x21 0x44 0x4f 0x43"
    assert ds[0].output == "[(1, 2), (1, 3)]"
    assert ds[0].to_text() == "Byte Input: 0x3c 0x21 0x44 0x4f 0x43\nMutation strategies: [(1, 2), (1, 3)]\n"
    assert ds[0].seed_bytes == EXAMPLE_SEED
    assert ds[0].pairs == [(1, 2), (1, 3)]
    assert "xmllint" in ds[0].instruction


def test_single_pair_and_ungrouped():
    c = Collector("p")
    c.record(flip(0), TestCase(0, b"a"), "new_path", 1)
    assert build_dataset(c.records)[0].output == "[(1, 1)]"
    assert len(build_dataset(example_records(), group_by_seed=False)) == 2


def test_empty_records():
    with pytest.raises(NoRecords):
        build_dataset([])


def test_truncation():
    seed = bytes(range(256)) * 12  # 3072 bytes
    c = Collector("p")
    c.record(flip(5), TestCase(0, seed), "new_path", 1)
    c.record(flip(3000), TestCase(0, seed), "new_path", 2)
    (r,) = build_dataset(c.records)
    assert r.truncated and r.original_length == 3072
    assert len(r.seed_bytes) == 2048
    assert r.pairs == [(1, 6)]
    d = r.to_dict()
    assert d["truncated"] is True and d["original_length"] == 3072
    assert InstructRecord.from_dict(d) == r


def test_hex_text_format_round_trip(tmp_path):
    ds = build_dataset(example_records())
    write_dataset(tmp_path, ds)
    text = (tmp_path / "fuzz-instruct.txt").read_text()
    assert text == "Byte Input: 0x3c 0x21 0x44 0x4f 0x43\nMutation strategies: [(1, 2), (1, 3)]\n"
    back = read_text(tmp_path / "fuzz-instruct.txt", ds[0].instruction)
    assert back == ds
    rows = read_jsonl(tmp_path / "fuzz-instruct.jsonl")
    assert rows == [{"instruction": ds[0].instruction, "input": ds[0].input, "output": ds[0].output}]
    assert b"\r\n" not in (tmp_path / "fuzz-instruct.jsonl").read_bytes()


def test_parse_pairs_tolerates_spacing_and_rejects_junk():
    assert parse_pairs("[(1, 2), (1,3)]") == [(1, 2), (1, 3)]
    assert parse_pairs("[]") == []
    for bad in ("(1, 2)", "[(1, 2) x]", "[(a, 2)]"):
        with pytest.raises(ValueError):
            parse_pairs(bad)
    with pytest.raises(ValueError):
        parse_hex("0x3c 3c")


@given(st.binary(max_size=200))
def test_hex_round_trip(data):
    text = format_hex(data)
    assert parse_hex(text) == data
    assert text == text.lower()


@given(st.lists(st.tuples(st.integers(1, 12), st.integers(1, 10**6)), max_size=20))
def test_pairs_round_trip(pairs):
    assert parse_pairs(format_pairs(pairs)) == pairs


def test_records_file_round_trip(tmp_path):
    c = Collector("p")
    c.record(MutationDetail(S.INTEREST_16_8, 0, MutationParams(replacement=b"\xab\xcd")), TestCase(0, b"xyz"), "crash", 9)
    c.write_records(tmp_path / "records.jsonl")
    assert read_records(tmp_path / "records.jsonl") == c.records
    assert MutationRecord.from_dict(json.loads(json.dumps(c.records[0].to_dict()))) == c.records[0]


@pytest.mark.parametrize("n, train, valid", [(5038, 4534, 504), (6047, 5442, 605), (10, 9, 1)])
def test_split_sizes(n, train, valid):
    a, b = split(list(range(n)), 0.9, seed=1)
    assert (len(a), len(b)) == (train, valid)
    assert train_size(n, 0.9) == train


def test_split_too_small():
    with pytest.raises(TooFewSamples):
        split([1])


@given(st.integers(2, 400), st.integers(0, 1000), st.sampled_from([(0.5, 50), (0.8, 80), (0.9, 90), (0.95, 95)]))
def test_split_partition_and_determinism(n, seed, ratio_pct):
    ratio, pct = ratio_pct
    data = list(range(n))
    a, b = split(data, ratio, seed)
    assert (a, b) == split(data, ratio, seed)
    assert sorted(a + b) == data
    assert not set(a) & set(b)
    assert len(a) == (n * pct) // 100


def test_write_split_files(tmp_path):
    c = Collector("p")
    for i in range(10):
        c.record(flip(0), TestCase(0, bytes([i])), "new_path", i)
    ds = build_dataset(c.records)
    write_split(tmp_path, ds, 0.9, 0)
    assert len(read_jsonl(tmp_path / "train.jsonl")) == 9
    assert len(read_jsonl(tmp_path / "valid.jsonl")) == 1


@given(st.lists(st.tuples(st.binary(min_size=1, max_size=8), st.integers(0, 7), st.integers(1, 12)), min_size=1, max_size=20))
def test_every_sample_pair_is_valid(items):
    c = Collector("p")
    for data, pos, s in items:
        if is_valid_position(s, pos, len(data)):
            c.records.append(MutationRecord(data, MutationDetail(S(s), pos, MutationParams()), "new_path", "p", 0))
    if not c.records:
        return
    for r in build_dataset(c.records):
        for s, p in r.pairs:
            assert is_valid_position(s, p - 1, len(r.seed_bytes))
