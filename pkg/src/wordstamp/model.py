"""Tiny prefix-conditioned autoregressive decoder.

Frames are downsampled by stacking ``downsample`` consecutive frames and
projecting them to the model width. The resulting acoustic prefix is
prepended to the token sequence. Prefix positions attend to each other
freely; token positions attend to the whole prefix and causally to earlier
tokens.

Token embeddings are tied to the output projection, so the timestamp block
of the embedding table is a single matrix shared by input and output.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import InterleavedSequence, Vocabulary
from .errors import NumericsError, ShapeError, UsageError, VersionError


@dataclass
class ModelConfig:
    vocab_size: int
    timestamp_offset: int
    timestamp_count: int
    feature_dim: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    downsample: int = 5
    max_prefix: int = 120
    max_tokens: int = 64

    @classmethod
    def for_vocab(cls, vocab: Vocabulary, feature_dim: int, frame_period_ms: int = 10, **kw) -> "ModelConfig":
        kw.setdefault("max_prefix", math.ceil(vocab.max_duration_ms / frame_period_ms / kw.get("downsample", 5)))
        return cls(vocab.size, vocab.timestamp_offset, vocab.timestamp_count, feature_dim, **kw)


class Block(nn.Module):
    def __init__(self, d: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, ff_mult * d)
        self.ff_out = nn.Linear(ff_mult * d, d)

    def forward(self, x, allowed):
        B, S, D = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(D, dim=-1)
        q, k, v = (t.view(B, S, self.n_heads, D // self.n_heads).transpose(1, 2) for t in (q, k, v))
        att = F.scaled_dot_product_attention(q, k, v, attn_mask=allowed)
        x = x + self.proj(att.transpose(1, 2).reshape(B, S, D))
        return x + self.ff_out(F.gelu(self.ff_in(self.ln2(x))))


class TinyDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.d_model % cfg.n_heads:
            raise ShapeError("d_model must be divisible by n_heads")
        self.cfg = cfg
        d = cfg.d_model
        self.tok_emb = nn.Embedding(cfg.vocab_size, d)
        self.adapter = nn.Linear(cfg.downsample * cfg.feature_dim, d)
        self.prefix_pos = nn.Parameter(torch.zeros(cfg.max_prefix, d))
        self.token_pos = nn.Parameter(torch.zeros(cfg.max_tokens, d))
        self.blocks = nn.ModuleList(Block(d, cfg.n_heads, cfg.ff_mult) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(d)
        self.out_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if p.dim() >= 2:
                nn.init.normal_(p, std=0.02)
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    @property
    def timestamp_embeddings(self) -> torch.Tensor:
        """The N x d timestamp rows of the embedding table (a view, not a copy)."""
        c = self.cfg
        return self.tok_emb.weight[c.timestamp_offset:c.timestamp_offset + c.timestamp_count]

    def prefix_lengths(self, frame_lens: torch.Tensor) -> torch.Tensor:
        return (frame_lens + self.cfg.downsample - 1) // self.cfg.downsample

    def forward(self, frames: torch.Tensor, frame_lens: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Logits of shape (B, L, vocab) for ``tokens`` of shape (B, L).

        ``frames`` is (B, T, F), zero padded past ``frame_lens``.
        """
        c = self.cfg
        if frames.dim() != 3 or frames.shape[-1] != c.feature_dim:
            raise ShapeError(f"frames must be (B, T, {c.feature_dim}), got {tuple(frames.shape)}")
        if tokens.dim() != 2 or tokens.shape[0] != frames.shape[0]:
            raise ShapeError("tokens must be (B, L) with the same batch size as frames")
        B, T, _ = frames.shape
        L = tokens.shape[1]
        if T == 0 or bool((frame_lens < 1).any()):
            raise ShapeError("every item needs at least one frame")
        P = -(-T // c.downsample)
        if P > c.max_prefix or L > c.max_tokens:
            raise ShapeError(f"prefix {P} / tokens {L} exceed limits {c.max_prefix} / {c.max_tokens}")
        if L and (int(tokens.min()) < 0 or int(tokens.max()) >= c.vocab_size):
            raise ShapeError("token id outside vocabulary")

        # frames past each item's length must not reach the adapter
        frames = frames * (torch.arange(T)[None, :] < frame_lens[:, None])[..., None].to(frames.dtype)
        pad = P * c.downsample - T
        if pad:
            frames = F.pad(frames, (0, 0, 0, pad))
        stacked = frames.reshape(B, P, c.downsample * c.feature_dim)
        x = torch.cat([self.adapter(stacked) + self.prefix_pos[:P],
                       self.tok_emb(tokens) + self.token_pos[:L]], dim=1)

        allowed = self._attention_mask(self.prefix_lengths(frame_lens), P, L)
        for blk in self.blocks:
            x = blk(x, allowed)
        h = self.ln_f(x[:, P:])
        return h @ self.tok_emb.weight.T + self.out_bias

    @staticmethod
    def _attention_mask(prefix_lens: torch.Tensor, P: int, L: int) -> torch.Tensor:
        S = P + L
        B = prefix_lens.shape[0]
        allowed = torch.zeros(B, S, S, dtype=torch.bool)
        key_ok = torch.arange(P)[None, :] < prefix_lens[:, None]
        allowed[:, :, :P] = key_ok[:, None, :]
        allowed[:, P:, P:] = torch.tril(torch.ones(L, L, dtype=torch.bool))
        return allowed[:, None]


def build_model(cfg: ModelConfig, seed: int = 0) -> TinyDecoder:
    torch.manual_seed(seed)
    return TinyDecoder(cfg)


def _as_frames(frames) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(frames) if not isinstance(frames, torch.Tensor) else frames)
    if t.dim() != 2:
        raise ShapeError(f"frames must be a T x F matrix, got shape {tuple(t.shape)}")
    return t


def forward(model: TinyDecoder, frames, input_tokens: Sequence[int]) -> torch.Tensor:
    """Single-utterance forward pass: (len(input_tokens), vocab) logits."""
    f = _as_frames(frames).to(_dtype(model))
    toks = torch.as_tensor(list(input_tokens), dtype=torch.long).reshape(1, -1)
    return model(f[None], torch.tensor([f.shape[0]]), toks)[0]


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


class GradientTape(dict):
    """Parameter name -> gradient tensor, shaped like the parameter."""

    def global_norm(self) -> float:
        return math.sqrt(sum(float((g.double() ** 2).sum()) for g in self.values()))


def backward(model: nn.Module, loss: torch.Tensor) -> GradientTape:
    """Zero the model's gradients, backpropagate ``loss`` and snapshot the result."""
    if getattr(loss, "_wordstamp_consumed", False):
        raise UsageError("backward already ran for this loss; run forward again")
    if not torch.isfinite(loss).all():
        raise NumericsError(f"non-finite loss {loss.detach().item()}")
    model.zero_grad(set_to_none=False)
    try:
        loss.backward()
    except RuntimeError as exc:
        raise UsageError(str(exc)) from exc
    loss._wordstamp_consumed = True
    tape = GradientTape()
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for {name}")
        tape[name] = g.detach().clone()
    return tape


DecodeHook = Callable[[int, torch.Tensor, torch.Tensor], torch.Tensor]


@torch.no_grad()
def greedy_decode_batch(model: TinyDecoder, frames_list: Sequence, vocab: Vocabulary, max_len: int,
                        task: str = "srwt", hook: DecodeHook | None = None) -> list[InterleavedSequence]:
    """Greedy decoding for several utterances at once.

    ``hook(step, history, proposed)`` may rewrite the proposed next tokens
    (shape (B,)) before they are appended; ``history`` holds tokens emitted
    so far, shape (B, step).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    was_training = model.training
    model.eval()
    dtype = _dtype(model)
    mats = [_as_frames(f).to(dtype) for f in frames_list]
    B = len(mats)
    lens = torch.tensor([m.shape[0] for m in mats])
    frames = torch.zeros(B, int(lens.max()), model.cfg.feature_dim, dtype=dtype)
    for i, m in enumerate(mats):
        frames[i, :m.shape[0]] = m
    prompt = torch.tensor([[vocab.bos, vocab.task_id(task)]] * B)
    max_len = min(max_len, model.cfg.max_tokens - prompt.shape[1] + 1)
    seq = prompt
    done = torch.zeros(B, dtype=torch.bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for step in range(max_len):
        logits = model(frames, lens, seq)[:, -1]
        nxt = logits.argmax(dim=-1)
        if hook is not None:
            nxt = hook(step, seq[:, prompt.shape[1]:], nxt)
        for i in range(B):
            if done[i]:
                continue
            if int(nxt[i]) == vocab.eos:
                done[i] = True
            else:
                out[i].append(int(nxt[i]))
        if bool(done.all()) or seq.shape[1] >= model.cfg.max_tokens:
            break
        seq = torch.cat([seq, nxt[:, None]], dim=1)
    model.train(was_training)
    return [InterleavedSequence(o) for o in out]


def greedy_decode(model: TinyDecoder, frames, vocab: Vocabulary, max_len: int,
                  task: str = "srwt") -> InterleavedSequence:
    """Argmax decoding until end-of-sequence or ``max_len`` tokens.

    The raw token stream is returned with no repair, so malformed outputs
    stay observable.
    """
    return greedy_decode_batch(model, [frames], vocab, max_len, task)[0]


# --- checkpoints --------------------------------------------------------------
#
# Layout: 8-byte magic, uint32 format version, uint32 header length, a UTF-8
# JSON header (config plus tensor index), then each tensor as little-endian
# float32 in header order.

MAGIC = b"WSTAMP\x00\x01"
FORMAT_VERSION = 1


def save_checkpoint(model: TinyDecoder, path: str | os.PathLike, extra: dict | None = None) -> Path:
    path = Path(path)
    blobs = []
    index = []
    offset = 0
    for name, p in model.state_dict().items():
        raw = p.detach().cpu().numpy().astype("<f4").tobytes()
        index.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"model": asdict(model.cfg), "extra": extra or {}, "tensors": index},
                        sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def read_checkpoint_header(path: str | os.PathLike) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic[:6] != MAGIC[:6]:
            raise VersionError(f"{path} is not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION or magic != MAGIC:
            raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        header = json.loads(fh.read(hlen))
    return header, len(MAGIC) + 8 + hlen


def load_checkpoint(path: str | os.PathLike) -> tuple[TinyDecoder, dict]:
    header, start = read_checkpoint_header(path)
    model = TinyDecoder(ModelConfig(**header["model"]))
    data = Path(path).read_bytes()[start:]
    state = {}
    for t in header["tensors"]:
        arr = np.frombuffer(data, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32).reshape(t["shape"]))
    model.load_state_dict(state)
    return model, header["extra"]
