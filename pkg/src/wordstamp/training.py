"""Loss stack, timestamp corruption and the training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .codec import Vocabulary, WellFormed, encode, parse
from .errors import ContractError, DomainError, NumericsError, ShapeError
from .model import ModelConfig, TinyDecoder, backward, build_model, save_checkpoint
from .synth import Utterance, augment_corpus

log = logging.getLogger(__name__)

ABLATION_W_REG = 0.1
ABLATION_P = 0.2


@dataclass(frozen=True)
class GaussianTarget:
    G: np.ndarray
    sigma: float

    @property
    def n(self) -> int:
        return self.G.shape[0]


def gaussian_target(n: int, sigma: float) -> GaussianTarget:
    """Target similarity ``G[i, j] = exp(-(i - j)**2 / (2 sigma**2))``."""
    if n < 2:
        raise DomainError("need at least two timestamp tokens")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    # G depends only on |i - j|: evaluate the n distinct values once, in scalar
    # double precision, and index
    by_offset = np.array([math.exp(-(k ** 2) / (2.0 * sigma ** 2)) for k in range(n)])
    idx = np.arange(n)
    return GaussianTarget(by_offset[np.abs(idx[:, None] - idx[None, :])], float(sigma))


def similarity_matrix(W: torch.Tensor) -> torch.Tensor:
    """Cosine similarities between rows of ``W``; normalization stays in the graph."""
    norms = W.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise NumericsError("cannot normalize an all-zero embedding row")
    Wn = W / norms
    return Wn @ Wn.T


def reg_loss(W: torch.Tensor, target: GaussianTarget) -> torch.Tensor:
    """Mean squared difference between the cosine similarity matrix of ``W`` and ``G``."""
    if W.shape[0] != target.n:
        raise ContractError(f"W has {W.shape[0]} rows, target is {target.n} x {target.n}")
    S = similarity_matrix(W)
    G = torch.as_tensor(target.G, dtype=W.dtype)
    return ((S - G) ** 2).mean()


def similarity_summary(W: torch.Tensor, target: GaussianTarget) -> dict:
    """MSE(S, G) and the mean Pearson correlation between matching rows of
    S and G with the diagonal entry removed."""
    with torch.no_grad():
        S = similarity_matrix(W.detach().double()).numpy()
    G = target.G
    n = G.shape[0]
    off = ~np.eye(n, dtype=bool)
    corrs = [np.corrcoef(S[i, off[i]], G[i, off[i]])[0, 1] for i in range(n)]
    return {"mse": float(((S - G) ** 2).mean()), "row_corr": float(np.nanmean(corrs)), "S": S}


def corrupt_timestamps(target_tokens: Sequence[int], p: float, rng: np.random.Generator,
                       vocab: Vocabulary) -> list[int]:
    """Replace each timestamp, with probability ``p``, by a uniform draw from
    ``[first timestamp, current timestamp]`` (inclusive).

    Word tokens are never touched, and the draw is always bounded by the
    ground-truth value, so no timestamp moves later.
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    outcome = parse(target_tokens, vocab)
    if not isinstance(outcome, WellFormed):
        raise ContractError(f"target sequence is malformed ({outcome.reason.value})")
    out = list(target_tokens)
    if p == 0.0:
        return out
    first = outcome.pairs[0][1]
    for pos in range(1, len(out), 2):
        cur = vocab.timestamp_index(out[pos])
        if rng.random() < p:
            lo = min(first, cur)
            out[pos] = vocab.timestamp_id(int(rng.integers(lo, cur + 1)))
    return out


@dataclass
class TrainConfig:
    w_reg: float = 0.0
    p: float = 0.0
    lr: float = 1e-3
    steps: int = 6000
    batch_size: int = 32
    length_aug: bool = False
    aug_mix: float = 0.5
    seed: int = 0
    sigma_divisor: float = 4.0
    warmup_frac: float = 0.01
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    asr_fraction: float = 0.0
    checkpoint_every: int = 0
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_words: int = 28

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError("p must lie in [0, 1]")
        if self.w_reg < 0:
            raise DomainError("w_reg must be non-negative")
        if not 0.0 <= self.aug_mix <= 1.0 or not 0.0 <= self.asr_fraction <= 1.0:
            raise DomainError("aug_mix and asr_fraction must lie in [0, 1]")

    def sigma(self, n: int) -> float:
        return n / self.sigma_divisor


@dataclass
class Batch:
    frames: torch.Tensor
    frame_lens: torch.Tensor
    inputs: torch.Tensor
    targets: torch.Tensor
    mask: torch.Tensor


def make_batch(utts: Sequence[Utterance], vocab: Vocabulary, p: float = 0.0,
               rng: np.random.Generator | None = None, tasks: Sequence[str] | None = None,
               dtype=torch.float32) -> Batch:
    """Pad a list of utterances into teacher-forced tensors.

    Inputs are ``[bos, task, w1, t1, ..., wk, tk]`` (timestamps possibly
    corrupted); targets are the clean sequence shifted by one and closed with
    ``eos``. The first position predicts the task token and is masked out.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tasks = tasks or ["srwt"] * len(utts)
    ins, tgts = [], []
    for utt, task in zip(utts, tasks):
        clean = list(encode(utt.words, utt.end_times_ms, vocab).tokens)
        if task == "asr":
            clean = clean[0::2]
            noisy = clean
        else:
            noisy = corrupt_timestamps(clean, p, rng, vocab)
        ins.append([vocab.bos, vocab.task_id(task)] + noisy)
        tgts.append([vocab.task_id(task)] + clean + [vocab.eos])
    B = len(utts)
    L = max(len(s) for s in ins)
    inputs = torch.full((B, L), vocab.eos, dtype=torch.long)
    targets = torch.full((B, L), vocab.eos, dtype=torch.long)
    mask = torch.zeros(B, L, dtype=torch.bool)
    for i, (a, b) in enumerate(zip(ins, tgts)):
        inputs[i, :len(a)] = torch.tensor(a)
        targets[i, :len(b)] = torch.tensor(b)
        mask[i, 1:len(b)] = True
    T = max(u.num_frames for u in utts)
    frames = torch.zeros(B, T, utts[0].frames.shape[1], dtype=dtype)
    for i, u in enumerate(utts):
        frames[i, :u.num_frames] = torch.from_numpy(np.asarray(u.frames, dtype=np.float32))
    lens = torch.tensor([u.num_frames for u in utts])
    return Batch(frames, lens, inputs, targets, mask)


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean token cross-entropy over positions where ``mask`` is set."""
    sel = mask.reshape(-1)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1])[sel], targets.reshape(-1)[sel])


def total_loss(model: TinyDecoder, batch: Batch, target: GaussianTarget, cfg: TrainConfig,
               logits: torch.Tensor | None = None) -> tuple[torch.Tensor, dict]:
    if logits is None:
        logits = model(batch.frames, batch.frame_lens, batch.inputs)
    ce = masked_cross_entropy(logits, batch.targets, batch.mask)
    reg = reg_loss(model.timestamp_embeddings, target)
    loss = ce + cfg.w_reg * reg
    if not torch.isfinite(loss):
        raise NumericsError(f"non-finite loss (ce={ce.detach().item()}, reg={reg.detach().item()})")
    return loss, {"ce": ce.item(), "reg": reg.item()}


@dataclass
class TrainState:
    step: int = 0
    optimizer: torch.optim.Optimizer | None = None
    ce: float = float("nan")
    reg: float = float("nan")


@dataclass
class StepRecord:
    step: int
    ce: float
    reg: float
    grad_norm: float
    lr: float

    def tsv(self) -> str:
        return f"{self.step}\t{self.ce:.6f}\t{self.reg:.6f}\t{self.grad_norm:.6f}\t{self.lr:.8f}"


@dataclass
class TrainResult:
    model: TinyDecoder
    log: list[StepRecord] = field(default_factory=list)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to ``cfg.lr`` then cosine decay to zero."""
    warm = max(1, int(round(cfg.warmup_frac * cfg.steps)))
    if step < warm:
        return cfg.lr * (step + 1) / warm
    progress = (step - warm) / max(1, cfg.steps - warm)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def model_config_for(vocab: Vocabulary, feature_dim: int, cfg: TrainConfig) -> ModelConfig:
    # bos, task, (word timestamp) * max_words, eos
    return ModelConfig.for_vocab(vocab, feature_dim, d_model=cfg.d_model, n_layers=cfg.n_layers,
                                 n_heads=cfg.n_heads, max_tokens=2 * cfg.max_words + 3)


def checkpoint_extra(vocab: Vocabulary, cfg: TrainConfig, step: int) -> dict:
    return {
        "vocab": {"words": list(vocab.words), "timestamp_count": vocab.timestamp_count,
                  "resolution_ms": vocab.resolution_ms, "specials": list(vocab.specials)},
        "train": asdict(cfg),
        "sigma": cfg.sigma(vocab.timestamp_count),
        "step": step,
    }


def train(corpus: Sequence[Utterance], cfg: TrainConfig, vocab: Vocabulary,
          out_dir: str | os.PathLike | None = None) -> TrainResult:
    """Train a fresh model on ``corpus``.

    With ``out_dir`` set, a tab-separated step log is written to
    ``train_log.tsv`` and, every ``cfg.checkpoint_every`` steps, a checkpoint
    to ``step_<n>.ckpt``. On a non-finite loss the current (last good)
    parameters are saved to ``last_good.ckpt`` before NumericsError is raised.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(cfg.seed)
    base = list(corpus)
    aug = augment_corpus(base, vocab.max_duration_ms) if cfg.length_aug else []
    longest = max(len(u.words) for u in base + aug)
    if longest > cfg.max_words:
        raise ShapeError(f"training utterance with {longest} words exceeds max_words={cfg.max_words}")
    model = build_model(model_config_for(vocab, base[0].frames.shape[1], cfg), cfg.seed)
    model.train()
    target = gaussian_target(vocab.timestamp_count, cfg.sigma(vocab.timestamp_count))

    decay = [p for p in model.parameters() if p.dim() >= 2]
    no_decay = [p for p in model.parameters() if p.dim() < 2]
    opt = torch.optim.AdamW([{"params": decay, "weight_decay": cfg.weight_decay},
                             {"params": no_decay, "weight_decay": 0.0}],
                            lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    state = TrainState(optimizer=opt)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.tsv", "w")
        log_fh.write("step\tce\treg\tgrad_norm\tlr\n")
    result = TrainResult(model)
    try:
        for step in range(cfg.steps):
            items = []
            for _ in range(cfg.batch_size):
                if aug and rng.random() < cfg.aug_mix:
                    items.append(aug[int(rng.integers(len(aug)))])
                else:
                    items.append(base[int(rng.integers(len(base)))])
            tasks = ["asr" if cfg.asr_fraction and rng.random() < cfg.asr_fraction else "srwt"
                     for _ in items]
            batch = make_batch(items, vocab, cfg.p, rng, tasks)
            lr = lr_at(step, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            try:
                loss, comp = total_loss(model, batch, target, cfg)
                tape = backward(model, loss)
            except NumericsError:
                if out is not None:
                    save_checkpoint(model, out / "last_good.ckpt", checkpoint_extra(vocab, cfg, step))
                raise
            grad_norm = tape.global_norm()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            state.step, state.ce, state.reg = step + 1, comp["ce"], comp["reg"]
            rec = StepRecord(step, comp["ce"], comp["reg"], grad_norm, lr)
            result.log.append(rec)
            if log_fh:
                log_fh.write(rec.tsv() + "\n")
            if step % 200 == 0:
                log.info("step %d ce %.4f reg %.4f |g| %.3f lr %.2e", step, rec.ce, rec.reg, grad_norm, lr)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(model, out / f"step_{step + 1}.ckpt", checkpoint_extra(vocab, cfg, step + 1))
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return result


def vocab_from_extra(extra: dict) -> Vocabulary:
    v = extra["vocab"]
    return Vocabulary(tuple(v["words"]), v["timestamp_count"], v["resolution_ms"], tuple(v["specials"]))


__all__ = [
    "Batch", "GaussianTarget", "ABLATION_P", "ABLATION_W_REG", "StepRecord",
    "TrainConfig", "TrainResult", "TrainState", "corrupt_timestamps", "gaussian_target",
    "make_batch", "masked_cross_entropy", "reg_loss", "similarity_matrix", "total_loss", "train",
]
