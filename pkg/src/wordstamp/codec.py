"""Token vocabulary and the interleaved word/timestamp sequence format.

A target sequence alternates a word token with the timestamp token of that
word's end time::

    hello <|t_48|> world <|t_102|>

Token ids are laid out as ``[specials | words | timestamps]``, with timestamp
tokens in increasing temporal order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

from .errors import OrderError, RangeError, VocabError

BOS = "<|bos|>"
EOS = "<|eos|>"
TASK_SRWT = "<|srwt|>"
TASK_ASR = "<|asr|>"
SPECIALS = (BOS, EOS, TASK_SRWT, TASK_ASR)

_TS_RE = re.compile(r"^<\|t_(\d+)\|>$")


class TokenClass(Enum):
    SPECIAL = "special"
    WORD = "word"
    TIMESTAMP = "timestamp"


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    timestamp_count: int = 600
    resolution_ms: int = 10
    specials: tuple[str, ...] = SPECIALS
    _word_ids: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.timestamp_count < 1 or self.resolution_ms < 1:
            raise ValueError("timestamp_count and resolution_ms must be positive")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate word symbols")
        clash = set(self.words) & set(self.specials)
        if clash or any(_TS_RE.match(w) or not w or w.split() != [w] for w in self.words):
            raise ValueError(f"word symbols collide with reserved forms: {sorted(clash)}")
        object.__setattr__(self, "words", tuple(self.words))
        ids = {w: len(self.specials) + i for i, w in enumerate(self.words)}
        object.__setattr__(self, "_word_ids", ids)

    @property
    def size(self) -> int:
        return len(self.specials) + len(self.words) + self.timestamp_count

    @property
    def word_offset(self) -> int:
        return len(self.specials)

    @property
    def timestamp_offset(self) -> int:
        return len(self.specials) + len(self.words)

    @property
    def max_duration_ms(self) -> int:
        return self.timestamp_count * self.resolution_ms

    @property
    def bos(self) -> int:
        return self.specials.index(BOS)

    @property
    def eos(self) -> int:
        return self.specials.index(EOS)

    def task_id(self, task: str = "srwt") -> int:
        return self.specials.index(TASK_SRWT if task == "srwt" else TASK_ASR)

    def classify(self, token: int) -> TokenClass | None:
        """Class of ``token``, or None if the id is outside the vocabulary."""
        if token < 0 or token >= self.size:
            return None
        if token < self.word_offset:
            return TokenClass.SPECIAL
        if token < self.timestamp_offset:
            return TokenClass.WORD
        return TokenClass.TIMESTAMP

    def word_id(self, word: str) -> int:
        try:
            return self._word_ids[word]
        except KeyError:
            raise VocabError(f"unknown word {word!r}") from None

    def word_of(self, token: int) -> str:
        return self.words[token - self.word_offset]

    def timestamp_id(self, index: int) -> int:
        if not 0 <= index < self.timestamp_count:
            raise RangeError(f"timestamp index {index} outside [0, {self.timestamp_count})")
        return self.timestamp_offset + index

    def timestamp_index(self, token: int) -> int:
        return token - self.timestamp_offset

    def ms_to_index(self, ms: float) -> int:
        """Index of the timestamp token whose interval ``[k*res, (k+1)*res)`` holds ``ms``."""
        if not (0 <= ms < self.max_duration_ms):
            raise RangeError(f"{ms} ms outside [0, {self.max_duration_ms}) ms")
        return min(int(math.floor(ms / self.resolution_ms)), self.timestamp_count - 1)

    def index_to_ms(self, index: int) -> float:
        """Midpoint of the interval covered by timestamp token ``index``."""
        return (index + 0.5) * self.resolution_ms

    def token_str(self, token: int) -> str:
        cls = self.classify(token)
        if cls is None:
            return f"<|unk_{token}|>"
        if cls is TokenClass.SPECIAL:
            return self.specials[token]
        if cls is TokenClass.WORD:
            return self.word_of(token)
        return f"<|t_{self.timestamp_index(token)}|>"

    def token_from_str(self, text: str) -> int:
        m = _TS_RE.match(text)
        if m:
            return self.timestamp_id(int(m.group(1)))
        if text in self.specials:
            return self.specials.index(text)
        return self.word_id(text)


@dataclass(frozen=True)
class InterleavedSequence:
    tokens: tuple[int, ...]

    def __init__(self, tokens: Sequence[int]):
        object.__setattr__(self, "tokens", tuple(int(t) for t in tokens))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


class MalformedReason(Enum):
    COUNT_MISMATCH = "count_mismatch"
    ORDER_VIOLATION = "order_violation"
    UNKNOWN_TOKEN = "unknown_token"
    EMPTY = "empty"


@dataclass(frozen=True)
class WellFormed:
    """Parsed pairs of (word, timestamp index).

    ``non_monotonic`` flags decreasing timestamps. Such sequences are still
    well formed and are not counted as malformed.
    """

    pairs: tuple[tuple[str, int], ...]
    non_monotonic: bool = False

    @property
    def words(self) -> list[str]:
        return [w for w, _ in self.pairs]


@dataclass(frozen=True)
class Malformed:
    reason: MalformedReason


ParseOutcome = Union[WellFormed, Malformed]


def encode(words: Sequence[str], end_times_ms: Sequence[float], vocab: Vocabulary) -> InterleavedSequence:
    if len(words) != len(end_times_ms):
        raise ValueError(f"{len(words)} words but {len(end_times_ms)} end times")
    tokens = []
    prev = -math.inf
    for word, t in zip(words, end_times_ms):
        if t <= 0 or t >= vocab.max_duration_ms:
            raise RangeError(f"end time {t} ms outside (0, {vocab.max_duration_ms}) ms")
        if t < prev:
            raise OrderError(f"end time {t} ms precedes {prev} ms")
        prev = t
        tokens.append(vocab.word_id(word))
        tokens.append(vocab.timestamp_id(vocab.ms_to_index(t)))
    return InterleavedSequence(tokens)


def parse(seq: InterleavedSequence | Sequence[int], vocab: Vocabulary) -> ParseOutcome:
    tokens = tuple(seq)
    if not tokens:
        return Malformed(MalformedReason.EMPTY)
    classes = [vocab.classify(t) for t in tokens]
    if any(c is None for c in classes):
        return Malformed(MalformedReason.UNKNOWN_TOKEN)
    if len(tokens) % 2:
        return Malformed(MalformedReason.COUNT_MISMATCH)
    pairs = []
    for i in range(0, len(tokens), 2):
        if classes[i] is not TokenClass.WORD or classes[i + 1] is not TokenClass.TIMESTAMP:
            return Malformed(MalformedReason.COUNT_MISMATCH)
        pairs.append((vocab.word_of(tokens[i]), vocab.timestamp_index(tokens[i + 1])))
    idx = [k for _, k in pairs]
    non_monotonic = any(b < a for a, b in zip(idx, idx[1:]))
    return WellFormed(tuple(pairs), non_monotonic)


def decode(outcome: WellFormed, vocab: Vocabulary) -> tuple[list[str], list[float]]:
    if not isinstance(outcome, WellFormed):
        raise TypeError("decode needs a WellFormed parse outcome")
    return outcome.words, [vocab.index_to_ms(k) for _, k in outcome.pairs]


def strip_timestamps(seq: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Word symbols of ``seq`` with every non-word token dropped."""
    return [vocab.word_of(t) for t in seq if vocab.classify(t) is TokenClass.WORD]


def render(seq: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token_str(t) for t in seq)


def read_rendered(line: str, vocab: Vocabulary) -> InterleavedSequence:
    return InterleavedSequence([vocab.token_from_str(s) for s in line.split()])


def default_vocabulary(word_count: int = 16, timestamp_count: int = 600, resolution_ms: int = 10) -> Vocabulary:
    if not 1 <= word_count <= len(_WORD_POOL):
        raise ValueError(f"word_count must be in [1, {len(_WORD_POOL)}]")
    return Vocabulary(_WORD_POOL[:word_count], timestamp_count, resolution_ms)


_WORD_POOL = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
)
