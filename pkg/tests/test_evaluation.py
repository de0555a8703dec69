import json
import math
import random

import numpy as np
import pytest
import torch

from oracles import levenshtein
from wordstamp.codec import InterleavedSequence, Vocabulary, encode, parse
from wordstamp.errors import ContractError, DomainError
from wordstamp.evaluation import (
    DEL, INS, MATCH, SUB, aas, edit_alignment, error_propagation_probe, evaluate, first_timestamp_shift_hook,
    mal, matched_shifts, render_table, reports_jsonl, score, wer,
)
from wordstamp.synth import Utterance

VOCAB = Vocabulary(("a", "b", "c", "x"), timestamp_count=600, resolution_ms=10)


def test_wer_identical():
    assert wer(list("abc"), list("abc"))[0] == 0.0


def test_wer_one_substitution():
    pct, ops = wer(["a", "b", "c"], ["a", "x", "c"])
    assert pct == pytest.approx(100 / 3)
    assert [o.kind for o in ops] == [MATCH, SUB, MATCH]


def test_wer_can_exceed_100():
    pct, ops = wer(["a"], ["a", "b", "c"])
    assert pct == 200.0
    assert [o.kind for o in ops] == [MATCH, INS, INS]


def test_wer_empty_reference():
    with pytest.raises(DomainError):
        wer([], ["a"])


def test_tie_break_prefers_substitution_then_deletion():
    # ref [a, b] vs hyp [c]: substitution+deletion either way; backtracking from
    # the end tries substitution first
    assert [o.kind for o in edit_alignment(["a", "b"], ["c"])] == [DEL, SUB]
    assert [o.kind for o in edit_alignment(["a"], ["b"])] == [SUB]


def _reconstruct(ops, ref, hyp):
    r = [ref[o.ref_index] for o in ops if o.kind != INS]
    h = [hyp[o.hyp_index] for o in ops if o.kind != DEL]
    return r, h


def test_dp_matches_brute_force():
    rng = random.Random(0)
    for _ in range(500):
        ref = [rng.choice("abcd") for _ in range(rng.randint(1, 8))]
        hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
        pct, ops = wer(ref, hyp)
        assert pct == pytest.approx(100 * levenshtein(ref, hyp) / len(ref))
        assert _reconstruct(ops, ref, hyp) == (ref, hyp)
        for o in ops:
            if o.kind == MATCH:
                assert ref[o.ref_index] == hyp[o.hyp_index]
            if o.kind == SUB:
                assert ref[o.ref_index] != hyp[o.hyp_index]


def test_aas_examples():
    ref = [("a", 300), ("b", 600)]
    assert aas(ref, ref) == 0.0
    assert aas(ref, [("a", 310), ("b", 580)]) == 15.0
    # an inserted word between the matches is ignored
    hyp = [("a", 310), ("x", 450), ("b", 580)]
    assert matched_shifts(ref, hyp) == [10, 20]
    assert aas(ref, hyp) == 15.0


def test_aas_no_matches_is_nan():
    assert math.isnan(aas([("a", 100)], [("b", 100)]))


def test_aas_symmetric():
    rng = random.Random(4)
    for _ in range(100):
        ref = [(rng.choice("abc"), rng.randint(0, 5000)) for _ in range(rng.randint(1, 6))]
        hyp = [(rng.choice("abc"), rng.randint(0, 5000)) for _ in range(rng.randint(1, 6))]
        x, y = aas(ref, hyp), aas(hyp, ref)
        assert (math.isnan(x) and math.isnan(y)) or x == pytest.approx(y)


def test_aas_rejects_malformed():
    bad = parse(InterleavedSequence((VOCAB.word_id("a"),)), VOCAB)
    with pytest.raises(ContractError):
        aas([("a", 100)], bad, VOCAB)


def test_aas_accepts_parsed_sequences():
    seq = parse(encode(["a", "b"], [300, 600], VOCAB), VOCAB)
    assert aas([("a", 300), ("b", 600)], seq, VOCAB) == 5.0  # midpoints 305 and 605


def _good(words=("a", "b")):
    return encode(list(words), [100 * (i + 1) for i in range(len(words))], VOCAB)


def test_mal_examples():
    assert mal([_good()] * 10, VOCAB) == 0.0
    seqs = [_good()] * 199 + [InterleavedSequence(_good().tokens[:-1])]
    assert mal(seqs, VOCAB) == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_mal_k_of_n(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 300)
    k = rng.randint(0, n)
    seqs = [_good(rng.choices("abc", k=rng.randint(1, 5))) for _ in range(n)]
    for i in rng.sample(range(n), k):
        toks = list(seqs[i].tokens)
        del toks[rng.randrange(len(toks))]  # dropping any one token breaks the alternation
        seqs[i] = InterleavedSequence(tuple(toks))
    assert mal(seqs, VOCAB) == 100 * k / n


def _corpus(n=20, seed=0):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        words = rng.choices("abc", k=rng.randint(1, 5))
        ends, t = [], 0
        for _ in words:
            t += rng.randint(50, 400)
            ends.append(t)
        out.append(Utterance(words, ends, np.zeros((-(-t // 10), 2), dtype=np.float32)))
    return out


def test_oracle_decoder():
    corpus = _corpus()
    oracle = lambda utts: [encode(u.words, u.end_times_ms, VOCAB) for u in utts]  # noqa: E731
    rep = evaluate(oracle, corpus, VOCAB)
    assert rep.wer_pct == 0 and rep.mal_pct == 0
    assert rep.aas_ms <= VOCAB.resolution_ms / 2
    assert rep.aligned_words == rep.ref_words == sum(len(u.words) for u in corpus)


def test_empty_decoder():
    rep = evaluate(lambda utts: [InterleavedSequence(())] * len(utts), _corpus(), VOCAB)
    assert rep.mal_pct == 100 and rep.wer_pct == 100
    assert math.isnan(rep.aas_ms) and rep.aligned_words == 0
    assert json.loads(reports_jsonl([rep]))["aas_ms"] is None


def test_malformed_words_still_count_towards_wer():
    corpus = _corpus(4, seed=2)
    decodes = [InterleavedSequence(tuple(VOCAB.word_id(w) for w in u.words)) for u in corpus]
    rep = score(corpus, decodes, VOCAB)
    assert rep.wer_pct == 0 and rep.mal_pct == 100
    # every sample either enters AAS or is malformed
    assert rep.malformed + (rep.samples - rep.malformed) == rep.samples


def test_report_outputs():
    rep = evaluate(lambda utts: [encode(u.words, u.end_times_ms, VOCAB) for u in utts], _corpus(), VOCAB, "dev")
    table = render_table([rep])
    assert table.splitlines()[0].split() == ["corpus", "WER(%)", "AAS(ms)", "MAL(%)"]
    assert table.splitlines()[2].split()[0] == "dev"
    rec = json.loads(reports_jsonl([rep]))
    assert rec["corpus"] == "dev" and rec["aas_pooling"] == "corpus"
    assert rec["mal_pct"] == 100 * rec["malformed"] / rec["samples"]


def test_shift_hook_clamps_and_fires_once():
    hook = first_timestamp_shift_hook(VOCAB, 20)
    ts = VOCAB.timestamp_id
    w = VOCAB.word_id("a")
    hist = torch.tensor([[VOCAB.bos], [VOCAB.bos]])
    out = hook(0, hist, torch.tensor([ts(5), ts(50)]))
    assert out.tolist() == [ts(0), ts(30)]
    hist = torch.tensor([[w, ts(0)], [w, w]])
    out = hook(1, hist, torch.tensor([ts(40), ts(40)]))
    assert out.tolist() == [ts(40), ts(20)]
    assert hook(2, hist, torch.tensor([w, w])).tolist() == [w, w]


def test_probe_on_micro_model(micro_model, micro_vocab):
    rng = np.random.default_rng(0)
    corpus = [Utterance(["a", "b"], [30, 60], rng.standard_normal((7, 3))) for _ in range(3)]
    res = error_propagation_probe(micro_model.float(), corpus, micro_vocab, 10**6)
    assert res.offset_tokens == 10**6
    assert 0 <= res.stopped_after_first <= 3
    assert res.wer_clean >= 0 and res.wer_injected >= 0
    with pytest.raises(ValueError):
        error_propagation_probe(micro_model, corpus, micro_vocab, 0)


def test_evaluate_deterministic(micro_model, micro_vocab):
    rng = np.random.default_rng(1)
    corpus = [Utterance(["a"], [40], rng.standard_normal((6, 3))) for _ in range(4)]
    m = micro_model.float()
    assert evaluate(m, corpus, micro_vocab) == evaluate(m, corpus, micro_vocab)
