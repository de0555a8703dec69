"""Synthetic utterances with exact word alignments.

Each word occupies a contiguous span of 10 ms frames. A frame carries the
word's fixed feature vector; the last frame of a word additionally carries a
boundary marker. Optional silence frames before a word belong to that word's
span, since only end times are labelled.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import Vocabulary, default_vocabulary, encode
from .errors import RangeError

FRAME_PERIOD_MS = 10


@dataclass
class Utterance:
    words: list[str]
    end_times_ms: list[int]
    frames: np.ndarray
    frame_period_ms: int = FRAME_PERIOD_MS

    def __post_init__(self):
        if not self.words:
            raise ValueError("utterance needs at least one word")
        if len(self.words) != len(self.end_times_ms):
            raise ValueError("words and end_times_ms differ in length")
        ends = self.end_times_ms
        if ends[0] <= 0 or any(b <= a for a, b in zip(ends, ends[1:])):
            raise ValueError("end times must be positive and strictly increasing")
        if ends[-1] > self.duration_ms:
            raise ValueError(f"last end time {ends[-1]} ms exceeds duration {self.duration_ms} ms")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_ms(self) -> int:
        return self.frames.shape[0] * self.frame_period_ms


@dataclass
class GeneratorConfig:
    vocab_size: int = 16
    word_min_ms: int = 100
    word_max_ms: int = 350
    gap_max_ms: int = 50
    words_min: int = 2
    words_max: int = 6
    feature_dim: int = 16
    noise_std: float = 0.1
    boundary_scale: float = 1.0
    seed: int = 0
    # shared between train and test corpora so they describe the same "language"
    feature_seed: int = 1234
    timestamp_count: int = 600
    resolution_ms: int = 10

    def vocabulary(self) -> Vocabulary:
        return default_vocabulary(self.vocab_size, self.timestamp_count, self.resolution_ms)

    def validate(self):
        if self.word_min_ms < FRAME_PERIOD_MS or self.word_max_ms < self.word_min_ms:
            raise ValueError("word durations must satisfy 10 <= word_min_ms <= word_max_ms")
        if self.gap_max_ms < 0 or self.noise_std < 0:
            raise ValueError("gap_max_ms and noise_std must be non-negative")
        if not 1 <= self.words_min <= self.words_max:
            raise ValueError("need 1 <= words_min <= words_max")
        limit = self.timestamp_count * self.resolution_ms
        worst = self.words_max * (self.word_max_ms + self.gap_max_ms)
        if worst >= limit:
            raise RangeError(f"utterances may reach {worst} ms, timestamp range ends at {limit} ms")


@dataclass
class TimestampHistogram:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def max_index(self) -> int:
        nz = np.flatnonzero(self.counts)
        return int(nz[-1]) if nz.size else -1

    def tail_mass(self, threshold: int) -> float:
        """Fraction of timestamps at index >= ``threshold``."""
        return float(self.counts[threshold:].sum() / max(self.total, 1))


def acoustic_tables(cfg: GeneratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-word feature vectors and the boundary marker vector."""
    rng = np.random.default_rng(cfg.feature_seed)
    word_vecs = rng.standard_normal((cfg.vocab_size, cfg.feature_dim))
    boundary = rng.standard_normal(cfg.feature_dim)
    boundary *= cfg.boundary_scale * np.sqrt(cfg.feature_dim) / np.linalg.norm(boundary)
    return word_vecs, boundary


def generate(cfg: GeneratorConfig, count: int) -> list[Utterance]:
    if count <= 0:
        raise ValueError("count must be positive")
    cfg.validate()
    vocab = cfg.vocabulary()
    word_vecs, boundary = acoustic_tables(cfg)
    rng = np.random.default_rng(cfg.seed)
    step = FRAME_PERIOD_MS
    corpus = []
    for _ in range(count):
        n = int(rng.integers(cfg.words_min, cfg.words_max + 1))
        ids = rng.integers(0, cfg.vocab_size, size=n)
        gaps = rng.integers(0, cfg.gap_max_ms // step + 1, size=n)
        durs = rng.integers(cfg.word_min_ms // step, cfg.word_max_ms // step + 1, size=n)
        total = int(gaps.sum() + durs.sum())
        frames = np.zeros((total, cfg.feature_dim))
        ends = []
        t = 0
        for wid, g, d in zip(ids, gaps, durs):
            t += int(g)
            frames[t:t + d] = word_vecs[wid]
            t += int(d)
            frames[t - 1] += boundary
            ends.append(t * step)
        if cfg.noise_std > 0:
            frames += cfg.noise_std * rng.standard_normal(frames.shape)
        corpus.append(Utterance([vocab.words[i] for i in ids], ends, frames.astype(np.float32)))
    return corpus


def concat_augment(a: Utterance, b: Utterance, max_duration_ms: int = 6000) -> Utterance:
    """Join two utterances, shifting ``b``'s end times by ``a``'s duration."""
    if a.frame_period_ms != b.frame_period_ms:
        raise ValueError("frame periods differ")
    if a.duration_ms + b.duration_ms >= max_duration_ms:
        raise RangeError(f"combined duration {a.duration_ms + b.duration_ms} ms >= {max_duration_ms} ms")
    shift = a.duration_ms
    return Utterance(
        a.words + b.words,
        a.end_times_ms + [t + shift for t in b.end_times_ms],
        np.concatenate([a.frames, b.frames], axis=0),
        a.frame_period_ms,
    )


def augment_corpus(corpus: Sequence[Utterance], max_duration_ms: int = 6000) -> list[Utterance]:
    """Concatenate consecutive pairs (0,1), (2,3), ...; overflowing pairs are skipped."""
    out = []
    for i in range(0, len(corpus) - 1, 2):
        try:
            out.append(concat_augment(corpus[i], corpus[i + 1], max_duration_ms))
        except RangeError:
            continue
    return out


def generate_long(cfg: GeneratorConfig, count: int, min_ms: int, max_ms: int,
                  max_tries: int = 200) -> list[Utterance]:
    """Utterances whose duration lies in ``[min_ms, max_ms]``.

    Word counts are raised until the expected duration covers the window,
    then out-of-window draws are rejected.
    """
    mean_word = (cfg.word_min_ms + cfg.word_max_ms + cfg.gap_max_ms) / 2
    lo = max(1, int(min_ms // (cfg.word_max_ms + cfg.gap_max_ms)))
    hi = max(lo, int(max_ms // mean_word))
    hi = min(hi, (cfg.timestamp_count * cfg.resolution_ms - 1) // (cfg.word_max_ms + cfg.gap_max_ms))
    lo = min(lo, hi)
    out: list[Utterance] = []
    seed = cfg.seed
    for _ in range(max_tries):
        batch_cfg = replace(cfg, words_min=lo, words_max=hi, seed=seed)
        for utt in generate(batch_cfg, max(count, 64)):
            if min_ms <= utt.duration_ms <= max_ms:
                out.append(utt)
                if len(out) == count:
                    return out
        seed += 7919
    raise RuntimeError(f"could only draw {len(out)} of {count} utterances in [{min_ms}, {max_ms}] ms")


def histogram(corpus: Sequence[Utterance], vocab: Vocabulary) -> TimestampHistogram:
    if not corpus:
        raise ValueError("empty corpus")
    counts = np.zeros(vocab.timestamp_count, dtype=np.int64)
    for utt in corpus:
        seq = encode(utt.words, utt.end_times_ms, vocab).tokens
        for tok in seq[1::2]:
            counts[vocab.timestamp_index(tok)] += 1
    return TimestampHistogram(counts)


# --- corpus manifests -------------------------------------------------------
#
# One JSON object per line. Frames are stored either inline ("frames": rows)
# or as raw little-endian float32, row-major T x F, at a path relative to the
# manifest ("frames_path").


def write_manifest(corpus: Sequence[Utterance], path: str | os.PathLike, inline: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame_dir = path.with_name(path.stem + "_frames")
    if not inline:
        frame_dir.mkdir(exist_ok=True)
    lines = []
    for i, utt in enumerate(corpus):
        rec = {
            "id": f"utt{i:06d}",
            "words": list(utt.words),
            "end_times_ms": [int(t) for t in utt.end_times_ms],
            "T": int(utt.frames.shape[0]),
            "F": int(utt.frames.shape[1]),
            "frame_period_ms": utt.frame_period_ms,
        }
        if inline:
            rec["frames"] = utt.frames.astype(np.float32).tolist()
        else:
            rel = f"{frame_dir.name}/{rec['id']}.f32"
            (path.parent / rel).write_bytes(utt.frames.astype("<f4").tobytes())
            rec["frames_path"] = rel
        lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | os.PathLike) -> list[Utterance]:
    path = Path(path)
    corpus = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        shape = (rec["T"], rec["F"])
        if "frames" in rec:
            frames = np.asarray(rec["frames"], dtype=np.float32).reshape(shape)
        else:
            raw = (path.parent / rec["frames_path"]).read_bytes()
            frames = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        corpus.append(Utterance(rec["words"], rec["end_times_ms"], frames,
                                rec.get("frame_period_ms", FRAME_PERIOD_MS)))
    return corpus


__all__ = [
    "FRAME_PERIOD_MS", "GeneratorConfig", "TimestampHistogram", "Utterance",
    "acoustic_tables", "augment_corpus", "concat_augment", "generate",
    "generate_long", "histogram", "read_manifest", "write_manifest",
]
