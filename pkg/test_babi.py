"""
Tests for bAbI parsing, vocabulary, encoding and synthetic key-value data
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import numpy as np
import pytest

from hopgate.babi import (
    RawSample,
    Vocab,
    build_vocab,
    dataset_summary,
    decode,
    encode,
    load_task_files,
    max_sentence_length,
    parse_babi,
    positional_encoding,
    split_validation,
    synth_kv,
    tokenize,
)
from hopgate.errors import EncodingError, ParseError

APPLE_STORY = (
    "1 Mary picked up the apple.\n"
    "2 Mary went to the garden.\n"
    "3 Mary journeyed to the bedroom.\n"
    "4 Mary dropped the apple.\n"
    "5 Where was the apple before the bedroom?\tgarden\t2 3\n"
)


def test_tokenize():
    """Test lowercasing, '?' delimiting and trailing-period removal"""
    assert tokenize("Mary went to the garden.") == ["mary", "went", "to", "the", "garden"]
    assert tokenize("Where is Mary?") == ["where", "is", "mary"]


def test_parse_apple_story():
    samples = parse_babi(APPLE_STORY, task_id=3)
    assert len(samples) == 1
    sample = samples[0]
    assert sample.answer == "garden", f"Unexpected answer {sample.answer}"
    assert len(sample.story) == 4
    assert sample.query == ["where", "was", "the", "apple", "before", "the", "bedroom"]
    assert sample.supporting_ids == [2, 3]
    assert sample.task_id == 3


def test_parse_crlf_and_story_reset():
    text = (
        "1 John went home.\r\n"
        "2 Where is John?\thome\t1\r\n"
        "1 Sandra went out.\r\n"
        "2 Where is Sandra?\tout\t1\r\n"
    )
    samples = parse_babi(text)
    assert [s.answer for s in samples] == ["home", "out"]
    assert samples[1].story == [["sandra", "went", "out"]], "Line 1 must start a new story"


def test_parse_questions_accumulate_story():
    text = (
        "1 John went home.\n"
        "2 Where is John?\thome\t1\n"
        "3 John went out.\n"
        "4 Where is John?\tout\t3\n"
    )
    samples = parse_babi(text)
    assert len(samples[1].story) == 2, "Question lines are not story sentences"


@pytest.mark.parametrize("text, line", [
    ("", 0),
    ("1 a b.\n3 c d.\n", 2),
    ("1 a b.\n2 Where is a?\n", 2),
    ("x a b.\n", 1),
    ("1 Where is a?\tb\t1\n", 1),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as exc_info:
        parse_babi(text)
    assert exc_info.value.line_number == line


def test_vocab_sorted_with_padding():
    raw = [RawSample(story=[["b"]], query=["a"], answer="b")]
    vocab = build_vocab(raw)
    assert vocab.words == ["nil", "a", "b"]
    assert vocab.size == 3
    assert build_vocab(raw).words == vocab.words, "Vocabulary must be deterministic"


def test_vocab_lookup_missing():
    with pytest.raises(EncodingError):
        Vocab(words=["nil", "a"]).lookup("zebra")


def _story(n: int) -> RawSample:
    return RawSample(
        story=[[f"w{i}"] for i in range(1, n + 1)],
        query=["w1"],
        answer="w1",
    )


def test_encode_pads_short_story():
    raw = _story(2)
    vocab = build_vocab([raw])
    sample = encode(raw, vocab, n_s=4, n_w=3)
    assert sample.story_grid.shape == (4, 3)
    assert np.all(sample.story_grid[2:] == 0)
    assert np.all(sample.story_grid[:2, 0] > 0)


def test_encode_keeps_most_recent_sentences():
    raw = _story(6)
    vocab = build_vocab([raw])
    sample = encode(raw, vocab, n_s=4, n_w=1)
    kept = [vocab.words[i] for i in sample.story_grid[:, 0]]
    assert kept == ["w3", "w4", "w5", "w6"]


def test_encode_pads_and_truncates_words():
    raw = RawSample(story=[["a", "b", "c"]], query=["a", "b", "c", "a", "b", "c", "a"], answer="a")
    vocab = build_vocab([raw])
    sample = encode(raw, vocab, n_s=1, n_w=6)
    assert np.all(sample.story_grid[0, 3:] == 0)
    assert sample.query_ids.shape == (6,), "Long queries are truncated to n_w"


def test_encode_decode_round_trip():
    raw = parse_babi(APPLE_STORY)[0]
    vocab = build_vocab([raw])
    n_w = max_sentence_length([raw])
    back = decode(encode(raw, vocab, n_s=10, n_w=n_w), vocab)
    assert back.story == raw.story
    assert back.query == raw.query
    assert back.answer == raw.answer


def test_positional_encoding_last_word():
    """Test that the j=J row reduces to k/d"""
    pe = positional_encoding(5, 4)
    assert pe.shape == (5, 4)
    np.testing.assert_allclose(pe[-1], [0.25, 0.5, 0.75, 1.0])


def test_split_validation_per_task():
    raw = [RawSample(story=[["a"]], query=["a"], answer="a", task_id=t) for t in (1,) * 10 + (2,) * 20]
    train, valid = split_validation(raw, 0.1)
    assert len(train) == 27 and len(valid) == 3
    assert [s.task_id for s in valid] == [1, 2, 2]


def test_load_task_files(tmp_path):
    (tmp_path / "qa3_three-supporting-facts_train.txt").write_text(APPLE_STORY, encoding="utf-8")
    samples = load_task_files(tmp_path, [3], "train")
    assert len(samples) == 1 and samples[0].task_id == 3
    with pytest.raises(FileNotFoundError):
        load_task_files(tmp_path, [1], "train")


def test_dataset_summary():
    raw = parse_babi(APPLE_STORY, task_id=3)
    vocab = build_vocab(raw)
    (summary,) = dataset_summary(raw, vocab)
    assert summary.n_samples == 1
    assert summary.n_s_max == 4
    assert summary.n_w_max == 7


def test_synth_kv_deterministic():
    a = synth_kv(7, 20, 3, 50)
    b = synth_kv(7, 20, 3, 50)
    assert a.keys.tobytes() == b.keys.tobytes()
    assert a.values.tobytes() == b.values.tobytes()
    assert all(np.array_equal(x.query_ids, y.query_ids) for x, y in zip(a.samples, b.samples))


def test_synth_kv_nearest_key_oracle():
    """Test that every query's answer is the value of its nearest key"""
    data = synth_kv(3, 30, 4, 60)
    for sample in data.samples:
        overlap = (data.keys == sample.query_ids[None, :]).sum(axis=1)
        nearest = int(np.argmax(overlap))
        assert overlap[nearest] == overlap.max()
        assert np.count_nonzero(overlap == overlap.max()) == 1
        assert sample.answer_id == int(data.values[nearest])


def test_synth_kv_single_pair():
    data = synth_kv(0, 1, 3, 10)
    assert data.samples[0].answer_id == int(data.values[0])
    assert data.samples[0].value_ids.shape == (1,)


@pytest.mark.parametrize("n_w, d", [(1, 1), (3, 7), (8, 40), (64, 512)])
def test_positional_encoding_matches_formula(n_w, d):
    """Test every entry against an element-by-element evaluation of the closed form"""
    pe = positional_encoding(n_w, d)
    for j in range(1, n_w + 1):
        for k in range(1, d + 1):
            expected = (1 - j / n_w) - (k / d) * (1 - 2 * j / n_w)
            assert abs(pe[j - 1, k - 1] - expected) <= 1e-15


def test_positional_encoding_range():
    """Test that entries stay finite and within [-1, 1] for n_w <= 64, d <= 512"""
    for n_w in range(1, 65):
        for d in range(1, 513):
            pe = positional_encoding(n_w, d)
            assert np.all(np.isfinite(pe)), f"n_w={n_w}, d={d}"
            assert pe.min() >= -1.0 and pe.max() <= 1.0, f"n_w={n_w}, d={d}"
