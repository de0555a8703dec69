import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wordstamp.codec import (
    InterleavedSequence, Malformed, MalformedReason, TokenClass, Vocabulary, WellFormed,
    decode, default_vocabulary, encode, parse, read_rendered, render, strip_timestamps,
)
from wordstamp.errors import OrderError, RangeError, VocabError

VOCAB = Vocabulary(("a", "hello", "world", "x"), timestamp_count=600, resolution_ms=10)


def scan_index(ms, vocab):
    """Brute force: the one interval [k*res, (k+1)*res) that holds ms."""
    hits = [k for k in range(vocab.timestamp_count)
            if k * vocab.resolution_ms <= ms < (k + 1) * vocab.resolution_ms]
    assert len(hits) == 1
    return hits[0]


def grammar_ok(tokens, vocab):
    """Independent matcher: class string must be (word timestamp)+."""
    code = {TokenClass.WORD: "w", TokenClass.TIMESTAMP: "t", TokenClass.SPECIAL: "s", None: "?"}
    return re.fullmatch(r"(wt)+", "".join(code[vocab.classify(t)] for t in tokens)) is not None


def ts(k):
    return VOCAB.timestamp_id(k)


def w(word):
    return VOCAB.word_id(word)


def test_vocabulary_layout():
    assert VOCAB.size == 4 + 4 + 600
    assert [VOCAB.classify(i) for i in range(4)] == [TokenClass.SPECIAL] * 4
    assert VOCAB.classify(4) is TokenClass.WORD
    assert VOCAB.classify(VOCAB.timestamp_offset) is TokenClass.TIMESTAMP
    assert VOCAB.classify(VOCAB.size) is None
    assert VOCAB.max_duration_ms == 6000
    assert [VOCAB.timestamp_index(ts(k)) for k in range(600)] == list(range(600))


def test_classification_is_total_partition():
    counts = {c: 0 for c in TokenClass}
    for tok in range(VOCAB.size):
        counts[VOCAB.classify(tok)] += 1
    assert counts == {TokenClass.SPECIAL: 4, TokenClass.WORD: 4, TokenClass.TIMESTAMP: 600}


def test_encode_two_words():
    seq = encode(["hello", "world"], [480, 1020], VOCAB)
    assert seq.tokens == (w("hello"), ts(48), w("world"), ts(102))
    assert [scan_index(t, VOCAB) for t in (480, 1020)] == [48, 102]


@pytest.mark.parametrize("t", [0.5, 3, 5, 9.99])
def test_encode_first_interval(t):
    assert encode(["a"], [t], VOCAB).tokens == (w("a"), ts(0))


def test_encode_interval_boundary_goes_up():
    # 10 ms is the left edge of token 1's interval
    assert encode(["a"], [10], VOCAB).tokens == (w("a"), ts(1))


@given(st.floats(min_value=0.001, max_value=5999.999, allow_nan=False))
def test_index_matches_interval_scan(ms):
    assert VOCAB.ms_to_index(ms) == scan_index(ms, VOCAB)


def test_encode_errors():
    with pytest.raises(OrderError):
        encode(["a", "x"], [500, 400], VOCAB)
    with pytest.raises(RangeError):
        encode(["a"], [6000], VOCAB)
    with pytest.raises(RangeError):
        encode(["a"], [0], VOCAB)
    with pytest.raises(VocabError):
        encode(["zebra"], [100], VOCAB)
    with pytest.raises(ValueError):
        encode(["a", "x"], [100], VOCAB)


def test_equal_end_times_allowed():
    assert encode(["a", "x"], [300, 300], VOCAB).tokens == (w("a"), ts(30), w("x"), ts(30))


def test_parse_examples():
    ok = parse([w("a"), ts(3), w("x"), ts(9)], VOCAB)
    assert ok == WellFormed((("a", 3), ("x", 9)), non_monotonic=False)
    assert parse([w("a"), w("x"), ts(9)], VOCAB) == Malformed(MalformedReason.COUNT_MISMATCH)
    assert parse([], VOCAB) == Malformed(MalformedReason.EMPTY)
    assert parse([w("a")], VOCAB) == Malformed(MalformedReason.COUNT_MISMATCH)
    assert parse([w("a"), ts(1), w("x")], VOCAB) == Malformed(MalformedReason.COUNT_MISMATCH)
    assert parse([w("a"), VOCAB.size + 3], VOCAB) == Malformed(MalformedReason.UNKNOWN_TOKEN)
    assert parse([w("a"), VOCAB.eos], VOCAB) == Malformed(MalformedReason.COUNT_MISMATCH)
    assert parse([ts(1), w("a")], VOCAB) == Malformed(MalformedReason.COUNT_MISMATCH)


def test_non_monotonic_is_flagged_not_malformed():
    out = parse([w("a"), ts(50), w("x"), ts(20)], VOCAB)
    assert isinstance(out, WellFormed)
    assert out.non_monotonic


def test_decode_midpoint():
    assert decode(WellFormed((("hello", 48),)), VOCAB) == (["hello"], [485.0])


def test_decode_rejects_malformed():
    with pytest.raises(TypeError):
        decode(Malformed(MalformedReason.EMPTY), VOCAB)


pairs = st.lists(
    st.tuples(st.sampled_from(VOCAB.words), st.floats(min_value=0.01, max_value=5999.99)),
    min_size=1, max_size=20,
)


@given(pairs)
def test_round_trip(items):
    words = [x for x, _ in items]
    times = sorted(t for _, t in items)
    out = parse(encode(words, times, VOCAB), VOCAB)
    assert isinstance(out, WellFormed) and not out.non_monotonic
    got_words, got_times = decode(out, VOCAB)
    assert got_words == words
    assert all(abs(a - b) <= VOCAB.resolution_ms / 2 for a, b in zip(times, got_times))


@settings(max_examples=300)
@given(pairs, st.sampled_from(["drop", "dup", "swap"]), st.integers(min_value=0, max_value=10_000))
def test_mutation_verdict_matches_grammar(items, kind, where):
    words = [x for x, _ in items]
    toks = list(encode(words, sorted(t for _, t in items), VOCAB).tokens)
    i = where % len(toks)
    if kind == "drop":
        toks.pop(i)
    elif kind == "dup":
        toks.insert(i, toks[i])
    elif len(toks) > 1:
        j = (i + 1) % len(toks)
        toks[i], toks[j] = toks[j], toks[i]
    assert isinstance(parse(toks, VOCAB), WellFormed) == grammar_ok(toks, VOCAB)


def test_render_round_trip():
    seq = encode(["hello", "world"], [480, 1020], VOCAB)
    text = render(seq, VOCAB)
    assert text == "hello <|t_48|> world <|t_102|>"
    assert read_rendered(text, VOCAB) == seq
    assert render([VOCAB.bos, VOCAB.task_id()], VOCAB) == "<|bos|> <|srwt|>"


def test_strip_timestamps():
    seq = [w("a"), ts(2), w("a"), w("x")]
    assert strip_timestamps(seq, VOCAB) == ["a", "a", "x"]


def test_reserved_word_symbols_rejected():
    with pytest.raises(ValueError):
        Vocabulary(("<|t_3|>",))
    with pytest.raises(ValueError):
        Vocabulary(("<|eos|>",))
    with pytest.raises(ValueError):
        Vocabulary(("a", "a"))


def test_default_vocabulary():
    v = default_vocabulary(16)
    assert len(v.words) == 16 and v.timestamp_count == 600 and v.resolution_ms == 10
    assert isinstance(InterleavedSequence([1, 2]).tokens, tuple)
