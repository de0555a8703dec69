"""WER, AAS and MAL, corpus evaluation, and the error-propagation probe."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .codec import InterleavedSequence, Malformed, Vocabulary, WellFormed, parse, strip_timestamps
from .errors import ContractError, DomainError
from .model import TinyDecoder, greedy_decode_batch
from .synth import Utterance

MATCH, SUB, DEL, INS = "match", "substitution", "deletion", "insertion"


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    ref_index: int | None = None
    hyp_index: int | None = None


def edit_alignment(ref: Sequence, hyp: Sequence) -> list[AlignmentOp]:
    """Minimal unit-cost alignment of ``hyp`` against ``ref``.

    Ties during backtracking resolve as match > substitution > deletion >
    insertion, so the alignment is deterministic.
    """
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            D[i, j] = min(diag, D[i - 1, j] + 1, D[i, j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and ref[i - 1] == hyp[j - 1] and D[i, j] == D[i - 1, j - 1]:
            ops.append(AlignmentOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and j and D[i, j] == D[i - 1, j - 1] + 1:
            ops.append(AlignmentOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i and D[i, j] == D[i - 1, j] + 1:
            ops.append(AlignmentOp(DEL, i - 1, None))
            i -= 1
        else:
            ops.append(AlignmentOp(INS, None, j - 1))
            j -= 1
    return ops[::-1]


def edit_count(ops: Sequence[AlignmentOp]) -> int:
    return sum(op.kind != MATCH for op in ops)


def wer(ref_words: Sequence[str], hyp_words: Sequence[str]) -> tuple[float, list[AlignmentOp]]:
    if not ref_words:
        raise DomainError("WER is undefined for an empty reference")
    ops = edit_alignment(ref_words, hyp_words)
    return 100.0 * edit_count(ops) / len(ref_words), ops


Pairs = Sequence[tuple[str, float]]


def _pairs_arg(pairs, vocab: Vocabulary | None) -> list[tuple[str, float]]:
    if isinstance(pairs, Malformed):
        raise ContractError(f"cannot align a malformed sequence ({pairs.reason.value})")
    if isinstance(pairs, WellFormed):
        if vocab is None:
            raise ContractError("a vocabulary is needed to convert timestamp indices to ms")
        return [(w, vocab.index_to_ms(k)) for w, k in pairs.pairs]
    return list(pairs)


def matched_shifts(ref_pairs: Pairs | WellFormed, hyp_pairs: Pairs | WellFormed,
                   vocab: Vocabulary | None = None) -> list[float]:
    """Absolute end-time differences (ms) over exactly matching aligned words."""
    ref = _pairs_arg(ref_pairs, vocab)
    hyp = _pairs_arg(hyp_pairs, vocab)
    ops = edit_alignment([w for w, _ in ref], [w for w, _ in hyp])
    return [abs(ref[op.ref_index][1] - hyp[op.hyp_index][1]) for op in ops if op.kind == MATCH]


def aas(ref_pairs: Pairs | WellFormed, hyp_pairs: Pairs | WellFormed, vocab: Vocabulary | None = None) -> float:
    """Mean absolute end-time shift in ms; NaN when no word matches."""
    shifts = matched_shifts(ref_pairs, hyp_pairs, vocab)
    return float(np.mean(shifts)) if shifts else math.nan


def mal(decodes: Sequence[InterleavedSequence], vocab: Vocabulary) -> float:
    if not decodes:
        return 0.0
    bad = sum(isinstance(parse(d, vocab), Malformed) for d in decodes)
    return 100.0 * bad / len(decodes)


@dataclass
class EvalReport:
    corpus: str
    wer_pct: float
    aas_ms: float
    mal_pct: float
    samples: int
    malformed: int
    aligned_words: int
    ref_words: int
    non_monotonic: int
    aas_per_sample_ms: float
    aas_pooling: str = "corpus"

    def record(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


Decoder = Union[TinyDecoder, Callable[[Sequence[Utterance]], Sequence[InterleavedSequence]]]


def run_decoder(decoder: Decoder, corpus: Sequence[Utterance], vocab: Vocabulary,
                batch_size: int = 64, hook=None) -> list[InterleavedSequence]:
    if not isinstance(decoder, TinyDecoder):
        return list(decoder(corpus))
    max_len = decoder.cfg.max_tokens - 1
    out = []
    for i in range(0, len(corpus), batch_size):
        chunk = corpus[i:i + batch_size]
        out.extend(greedy_decode_batch(decoder, [u.frames for u in chunk], vocab, max_len, hook=hook))
    return out


def evaluate(decoder: Decoder, corpus: Sequence[Utterance], vocab: Vocabulary, name: str = "test",
             batch_size: int = 64) -> EvalReport:
    """Decode every utterance greedily and score the outputs.

    Malformed decodes count towards MAL and are left out of AAS; their word
    tokens still count towards WER.
    """
    if not corpus:
        raise ValueError("empty evaluation corpus")
    decodes = run_decoder(decoder, corpus, vocab, batch_size)
    return score(corpus, decodes, vocab, name)


def score(corpus: Sequence[Utterance], decodes: Sequence[InterleavedSequence], vocab: Vocabulary,
          name: str = "test") -> EvalReport:
    edits = ref_total = malformed = nonmono = 0
    shifts: list[float] = []
    per_sample: list[float] = []
    for utt, seq in zip(corpus, decodes):
        outcome = parse(seq, vocab)
        hyp_words = outcome.words if isinstance(outcome, WellFormed) else strip_timestamps(seq, vocab)
        edits += edit_count(edit_alignment(utt.words, hyp_words))
        ref_total += len(utt.words)
        if isinstance(outcome, Malformed):
            malformed += 1
            continue
        nonmono += outcome.non_monotonic
        s = matched_shifts(list(zip(utt.words, utt.end_times_ms)), outcome, vocab)
        shifts.extend(s)
        if s:
            per_sample.append(float(np.mean(s)))
    n = len(corpus)
    return EvalReport(
        corpus=name,
        wer_pct=100.0 * edits / ref_total,
        aas_ms=float(np.mean(shifts)) if shifts else math.nan,
        mal_pct=100.0 * malformed / n,
        samples=n,
        malformed=malformed,
        aligned_words=len(shifts),
        ref_words=ref_total,
        non_monotonic=nonmono,
        aas_per_sample_ms=float(np.mean(per_sample)) if per_sample else math.nan,
    )


@dataclass
class ProbeResult:
    offset_tokens: int
    aas_clean: float
    aas_injected: float
    words_clean: int
    words_injected: int
    # word-level side of the same decodes: AAS alone cannot see words the
    # model drops after the injection
    wer_clean: float = math.nan
    wer_injected: float = math.nan
    stopped_after_first: int = 0

    @property
    def degradation(self) -> float:
        return self.aas_injected - self.aas_clean


def first_timestamp_shift_hook(vocab: Vocabulary, offset: int):
    """Decode hook that moves the first emitted timestamp ``offset`` tokens
    earlier, clamped at token 0."""
    lo = vocab.timestamp_offset
    hi = lo + vocab.timestamp_count

    def hook(step, history, proposed):
        is_ts = (proposed >= lo) & (proposed < hi)
        if history.shape[1]:
            seen = ((history >= lo) & (history < hi)).any(dim=1)
            is_ts = is_ts & ~seen
        shifted = (proposed - offset).clamp(min=lo)
        return proposed.where(~is_ts, shifted)

    return hook


def _subsequent_shifts(corpus, decodes, vocab) -> list[float]:
    shifts = []
    for utt, seq in zip(corpus, decodes):
        outcome = parse(seq, vocab)
        if not isinstance(outcome, WellFormed) or len(outcome.pairs) < 2 or len(utt.words) < 2:
            continue
        ref = list(zip(utt.words, utt.end_times_ms))[1:]
        hyp = [(w, vocab.index_to_ms(k)) for w, k in outcome.pairs[1:]]
        shifts.extend(matched_shifts(ref, hyp))
    return shifts


def error_propagation_probe(model: TinyDecoder, corpus: Sequence[Utterance], vocab: Vocabulary,
                            injection_offset_tokens: int, batch_size: int = 64) -> ProbeResult:
    """AAS over every word after the first, with and without pushing the
    model's first predicted timestamp earlier by ``injection_offset_tokens``."""
    if injection_offset_tokens < 1:
        raise ValueError("injection offset must be >= 1")
    clean_dec = run_decoder(model, corpus, vocab, batch_size)
    hook = first_timestamp_shift_hook(vocab, injection_offset_tokens)
    injected_dec = run_decoder(model, corpus, vocab, batch_size, hook)
    clean = _subsequent_shifts(corpus, clean_dec, vocab)
    injected = _subsequent_shifts(corpus, injected_dec, vocab)
    stopped = 0
    for utt, seq in zip(corpus, injected_dec):
        outcome = parse(seq, vocab)
        stopped += len(utt.words) > 1 and isinstance(outcome, WellFormed) and len(outcome.pairs) == 1
    mean = lambda xs: float(np.mean(xs)) if xs else math.nan  # noqa: E731
    return ProbeResult(injection_offset_tokens, mean(clean), mean(injected), len(clean), len(injected),
                       score(corpus, clean_dec, vocab).wer_pct, score(corpus, injected_dec, vocab).wer_pct, stopped)


def render_table(reports: Sequence[EvalReport], label_width: int = 24) -> str:
    head = f"{'corpus':<{label_width}} {'WER(%)':>8} {'AAS(ms)':>9} {'MAL(%)':>8}"
    lines = [head, "-" * len(head)]
    for r in reports:
        a = "--" if math.isnan(r.aas_ms) else f"{r.aas_ms:.2f}"
        lines.append(f"{r.corpus:<{label_width}} {r.wer_pct:>8.2f} {a:>9} {r.mal_pct:>8.2f}")
    return "\n".join(lines) + "\n"


def reports_jsonl(reports: Sequence[EvalReport]) -> str:
    return "".join(json.dumps(r.record(), sort_keys=True) + "\n" for r in reports)
