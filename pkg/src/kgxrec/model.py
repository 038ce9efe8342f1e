"""Dual-attention encoder, rating head, explanation decoder and joint loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from kgxrec.attention import (
    NEG_INF,
    AttentionParams,
    assignment_matrix,
    build_component_mask,
    gather_with,
    global_attention,
    graph_attention,
    multi_head_attention,
    pool_with,
)
from kgxrec.decoding import beam_search
from kgxrec.graph import EncodedSequence


@dataclass
class ModelConfig:
    d: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ffn_dim: int = 0  # 0 -> 4 * d
    vocab_size: int = 0
    max_source_len: int = 512
    max_explanation_len: int = 128
    lambda_r: float = 0.01
    lambda_e: float = 1.0
    dropout: float = 0.0
    graph_attention: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.lambda_r < 0 or self.lambda_e < 0:
            raise ValueError("loss weights must be non-negative")
        if self.max_explanation_len < 1:
            raise ValueError("max_explanation_len must be >= 1")

    @classmethod
    def full_size(cls, vocab_size: int = 50256) -> "ModelConfig":
        """Full-size settings (512-d, 2 encoder layers, explanations of 128 tokens)."""
        return cls(d=512, heads=8, vocab_size=vocab_size)

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.d

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class Attention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        std = 1.0 / math.sqrt(d)
        self.w_q = nn.Parameter(torch.randn(d, d) * std)
        self.w_k = nn.Parameter(torch.randn(d, d) * std)
        self.w_v = nn.Parameter(torch.randn(d, d) * std)
        self.w_o = nn.Parameter(torch.randn(d, d) * std)
        self.heads = heads

    def params(self) -> AttentionParams:
        return AttentionParams(self.w_q, self.w_k, self.w_v, self.w_o, self.heads)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    """Pre-norm layer: global attention and graph attention share the normed input;
    the graph branch is gathered back onto tokens and added before the residual."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d)
        self.global_attn = Attention(cfg.d, cfg.heads)
        self.graph_attn = Attention(cfg.d, cfg.heads) if cfg.graph_attention else None
        self.norm2 = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_padding, assign, graph_mask):
        y = self.norm1(x)
        mixed = global_attention(y, self.global_attn.params(), key_padding)
        if self.graph_attn is not None:
            pooled = pool_with(y, assign)
            comp = graph_attention(pooled, graph_mask, self.graph_attn.params())
            mixed = gather_with(comp, mixed, assign)
        x = x + self.drop(mixed)
        return x + self.drop(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d)
        self.self_attn = Attention(cfg.d, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.d)
        self.cross_attn = Attention(cfg.d, cfg.heads)
        self.norm3 = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, causal_mask, memory, memory_mask):
        y = self.norm1(x)
        x = x + self.drop(multi_head_attention(y, self.self_attn.params(), causal_mask))
        y = self.norm2(x)
        x = x + self.drop(multi_head_attention(y, self.cross_attn.params(), memory_mask, memory=memory))
        return x + self.drop(self.ffn(self.norm3(x)))


@dataclass
class EncodedBatch:
    ids: torch.Tensor  # (B, n) long
    key_padding: torch.Tensor  # (B, n) bool, True at padding
    assign: torch.Tensor  # (B, n, m) token -> component one-hot
    graph_mask: torch.Tensor  # (B, m, m) additive
    user_mask: torch.Tensor  # (B, n) bool
    item_mask: torch.Tensor  # (B, n) bool
    ratings: torch.Tensor | None = None  # (B,)
    dec_in: torch.Tensor | None = None  # (B, T) long
    dec_out: torch.Tensor | None = None  # (B, T) long
    dec_pad: torch.Tensor | None = None  # (B, T) bool

    def __len__(self) -> int:
        return self.ids.shape[0]

    def to(self, dtype: torch.dtype) -> "EncodedBatch":
        return replace(self, assign=self.assign.to(dtype), graph_mask=self.graph_mask.to(dtype),
                       ratings=None if self.ratings is None else self.ratings.to(dtype))


def encode_target(vocab, explanation: str, max_len: int) -> list[int]:
    """Explanation ids truncated so that, with the trailing EOS, at most ``max_len`` remain."""
    return vocab.encode(explanation)[: max_len - 1] + [vocab.eos_id]


def collate(seqs: Sequence[EncodedSequence], pad_id: int = 0,
            ratings: Sequence[float] | None = None,
            targets: Sequence[Sequence[int]] | None = None, bos_id: int = 2) -> EncodedBatch:
    """Pad a list of linearized graphs (and optional targets) into one batch."""
    if not seqs:
        raise ValueError("cannot collate an empty batch")
    B = len(seqs)
    n = max(len(s) for s in seqs)
    m = max(s.num_components for s in seqs)
    ids = torch.full((B, n), pad_id, dtype=torch.long)
    pad = torch.ones(B, n, dtype=torch.bool)
    comp = torch.full((B, n), -1, dtype=torch.long)
    umask = torch.zeros(B, n, dtype=torch.bool)
    imask = torch.zeros(B, n, dtype=torch.bool)
    adj = np.zeros((B, m, m), dtype=bool)
    for b, s in enumerate(seqs):
        k = len(s)
        ids[b, :k] = torch.tensor(s.ids)
        pad[b, :k] = False
        comp[b, :k] = torch.tensor(s.component_of)
        umask[b, :k] = torch.tensor(s.user_mask)
        imask[b, :k] = torch.tensor(s.item_mask)
        c = s.num_components
        adj[b, :c, :c] = s.adjacency
    gmask = torch.stack([build_component_mask(a) for a in adj])
    batch = EncodedBatch(ids, pad, assignment_matrix(comp, m), gmask, umask, imask)
    if ratings is not None:
        batch.ratings = torch.tensor(list(ratings), dtype=torch.get_default_dtype())
    if targets is not None:
        T = max(len(t) for t in targets)
        dec_in = torch.full((B, T), pad_id, dtype=torch.long)
        dec_out = torch.full((B, T), pad_id, dtype=torch.long)
        dec_pad = torch.ones(B, T, dtype=torch.bool)
        for b, t in enumerate(targets):
            dec_out[b, : len(t)] = torch.tensor(t)
            dec_in[b, : len(t)] = torch.tensor([bos_id] + list(t[:-1]))
            dec_pad[b, : len(t)] = False
        batch.dec_in, batch.dec_out, batch.dec_pad = dec_in, dec_out, dec_pad
    return batch


@dataclass
class EncodedState:
    hidden: torch.Tensor  # (B, n, d), last encoder layer output
    key_padding: torch.Tensor
    user_mask: torch.Tensor
    item_mask: torch.Tensor

    def select(self, i: int) -> "EncodedState":
        return EncodedState(self.hidden[i:i + 1], self.key_padding[i:i + 1],
                            self.user_mask[i:i + 1], self.item_mask[i:i + 1])


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of the rows of ``x`` (B, n, d) where ``mask`` (B, n) is True."""
    counts = mask.sum(dim=-1, keepdim=True)
    if (counts == 0).any():
        raise ValueError("selector mask selects no tokens")
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(dim=-2) / counts.to(x.dtype)


def _causal_mask(t: int, dtype) -> torch.Tensor:
    return torch.full((t, t), NEG_INF, dtype=dtype).triu(1)


class KGXRec(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size < 1:
            raise ValueError("ModelConfig.vocab_size must be set")
        self.cfg = cfg
        d = cfg.d
        self.tok_emb = nn.Embedding(cfg.vocab_size, d)
        self.enc_pos = nn.Embedding(cfg.max_source_len, d)
        self.dec_pos = nn.Embedding(cfg.max_explanation_len, d)
        nn.init.normal_(self.enc_pos.weight, std=0.1)
        nn.init.normal_(self.dec_pos.weight, std=0.1)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.encoder_layers))
        self.w_user = nn.Parameter(torch.randn(d, d) / math.sqrt(d))
        self.w_item = nn.Parameter(torch.randn(d, d) / math.sqrt(d))
        # per-token linear layer between the encoder and the decoder's cross-attention
        self.enc_proj = nn.Linear(d, d)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.decoder_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)
        self.unk_id = 1

    def rating_parameters(self) -> list[nn.Parameter]:
        return [self.w_user, self.w_item]

    def explanation_parameters(self) -> list[nn.Parameter]:
        """Parameters used only on the explanation path."""
        mods = [self.dec_pos, self.enc_proj, self.decoder, self.dec_norm, self.out_proj]
        return [p for m in mods for p in m.parameters()]

    # -- encoder --------------------------------------------------------------

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Token lookup plus learned absolute position, ``(..., n) -> (..., n, d)``."""
        ids = torch.where((ids >= 0) & (ids < self.cfg.vocab_size), ids,
                          torch.full_like(ids, self.unk_id))
        n = ids.shape[-1]
        if n > self.cfg.max_source_len:
            raise ValueError(f"sequence of {n} tokens exceeds max_source_len={self.cfg.max_source_len}")
        return self.tok_emb(ids) + self.enc_pos(torch.arange(n))

    def encode(self, batch: EncodedBatch) -> EncodedState:
        x = self.drop(self.embed(batch.ids))
        assign = batch.assign.to(x.dtype)
        gmask = batch.graph_mask.to(x.dtype)
        for layer in self.encoder:
            x = layer(x, batch.key_padding, assign, gmask)
        if not torch.isfinite(x).all():
            raise FloatingPointError("encoder produced non-finite values")
        return EncodedState(x, batch.key_padding, batch.user_mask, batch.item_mask)

    def predict_rating(self, state: EncodedState) -> torch.Tensor:
        """Dot product of the projected mean user and item token representations, shape (B,)."""
        xu = masked_mean(state.hidden, state.user_mask) @ self.w_user
        xv = masked_mean(state.hidden, state.item_mask) @ self.w_item
        return (xu * xv).sum(dim=-1)

    # -- decoder --------------------------------------------------------------

    def memory(self, state: EncodedState) -> tuple[torch.Tensor, torch.Tensor]:
        mem = self.enc_proj(state.hidden)
        mask = torch.zeros(state.key_padding.shape, dtype=mem.dtype)
        mask = mask.masked_fill(state.key_padding, NEG_INF).unsqueeze(-2)
        return mem, mask

    def decode_logits(self, dec_in: torch.Tensor, memory: torch.Tensor,
                      memory_mask: torch.Tensor) -> torch.Tensor:
        T = dec_in.shape[-1]
        if T > self.cfg.max_explanation_len:
            raise ValueError(f"decoder input of {T} tokens exceeds max_explanation_len")
        x = self.drop(self.tok_emb(dec_in) + self.dec_pos(torch.arange(T)))
        causal = _causal_mask(T, x.dtype)
        for layer in self.decoder:
            x = layer(x, causal, memory, memory_mask)
        return self.out_proj(self.dec_norm(x))

    def explanation_logits(self, state: EncodedState, dec_in: torch.Tensor) -> torch.Tensor:
        mem, mask = self.memory(state)
        return self.decode_logits(dec_in, mem, mask)

    @torch.no_grad()
    def generate_explanation(self, state: EncodedState, beam_size: int = 5,
                             bos_id: int = 2, eos_id: int = 3,
                             length_penalty: float = 1.0) -> list[list[int]]:
        """Beam-decode one explanation per batch row. Outputs include the EOS if emitted."""
        out = []
        for i in range(state.hidden.shape[0]):
            mem, mask = self.memory(state.select(i))

            def step(prefixes: torch.Tensor) -> torch.Tensor:
                k = prefixes.shape[0]
                dec_in = torch.cat([torch.full((k, 1), bos_id, dtype=torch.long), prefixes], dim=1)
                logits = self.decode_logits(dec_in, mem.expand(k, -1, -1), mask.expand(k, -1, -1))
                return F.log_softmax(logits[:, -1], dim=-1)

            hyp = beam_search(step, eos_id, beam_size, self.cfg.max_explanation_len, length_penalty)
            out.append(list(hyp.tokens))
        return out

    # -- objective ------------------------------------------------------------

    def token_nll(self, state: EncodedState, batch: EncodedBatch) -> torch.Tensor:
        """Per-example mean negative log-likelihood of the reference tokens, shape (B,)."""
        logits = self.explanation_logits(state, batch.dec_in)
        logp = F.log_softmax(logits, dim=-1)
        nll = -logp.gather(-1, batch.dec_out.unsqueeze(-1)).squeeze(-1)
        keep = (~batch.dec_pad).to(nll.dtype)
        return (nll * keep).sum(-1) / keep.sum(-1)

    def joint_loss(self, batch: EncodedBatch, lambda_r: float | None = None,
                   lambda_e: float | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(total, rating MSE, explanation NLL) for a batch with targets."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        lr_ = self.cfg.lambda_r if lambda_r is None else lambda_r
        le_ = self.cfg.lambda_e if lambda_e is None else lambda_e
        state = self.encode(batch)
        r_hat = self.predict_rating(state)
        loss_r = ((batch.ratings.to(r_hat.dtype) - r_hat) ** 2).mean()
        loss_e = self.token_nll(state, batch).mean()
        return lr_ * loss_r + le_ * loss_e, loss_r, loss_e
