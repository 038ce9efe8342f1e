"""Attention kernels: global self-attention, component mask, pooling,
graph-masked attention and the gather-combine fusion.

All functions accept arbitrary leading batch dimensions unless noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

# stands in for -inf so fully masked rows cannot produce NaN after max-subtraction
NEG_INF = -1e9


@dataclass
class AttentionParams:
    """Projection weights of one attention block, each ``d x d``.

    ``w_o`` is the output projection applied after concatenating heads; it
    may be ``None`` for the bare single-head form.
    """

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_o: torch.Tensor | None = None
    num_heads: int = 1

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % self.num_heads:
            raise ValueError(f"embedding size {d} not divisible by {self.num_heads} heads")
        for w in (self.w_q, self.w_k, self.w_v) + ((self.w_o,) if self.w_o is not None else ()):
            if w.shape != (d, d):
                raise ValueError(f"projection of shape {tuple(w.shape)}, expected ({d}, {d})")

    @property
    def d_k(self) -> int:
        return self.w_q.shape[0] // self.num_heads


def build_component_mask(adjacency, dtype: torch.dtype | None = None) -> torch.Tensor:
    """Additive mask: 0 where components are connected (or i == j), NEG_INF elsewhere.

    ``adjacency`` is a boolean ``m x m`` array or anything with an
    ``adjacency_matrix()`` method (a :class:`~kgxrec.graph.UserItemGraph`).
    """
    if hasattr(adjacency, "adjacency_matrix"):
        adjacency = adjacency.adjacency_matrix()
    adj = torch.as_tensor(np.asarray(adjacency, dtype=bool))
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {tuple(adj.shape)}")
    adj = adj | adj.T | torch.eye(adj.shape[0], dtype=torch.bool)
    mask = torch.full(adj.shape, NEG_INF, dtype=dtype or torch.get_default_dtype())
    return mask.masked_fill(adj, 0.0)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(q k^T / sqrt(d_k) + mask) v. Returns (output, weights)."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores + mask
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    e = scores.exp()
    weights = e / e.sum(dim=-1, keepdim=True)
    return weights @ v, weights


def multi_head_attention(x: torch.Tensor, params: AttentionParams,
                         mask: torch.Tensor | None = None,
                         memory: torch.Tensor | None = None,
                         return_weights: bool = False):
    """Multi-head attention of ``x`` (queries) over ``memory`` (keys/values, default ``x``).

    ``mask`` is additive and broadcast against ``(..., heads, n_q, n_kv)``.
    """
    kv = x if memory is None else memory
    h, dk = params.num_heads, params.d_k

    def split(t):
        return t.reshape(*t.shape[:-1], h, dk).transpose(-3, -2)

    q = split(x @ params.w_q)
    k = split(kv @ params.w_k)
    v = split(kv @ params.w_v)
    if mask is not None and mask.ndim >= 3:
        mask = mask.unsqueeze(-3)
    out, weights = scaled_dot_attention(q, k, v, mask)
    out = out.transpose(-3, -2).reshape(*x.shape[:-1], h * dk)
    if params.w_o is not None:
        out = out @ params.w_o
    return (out, weights) if return_weights else out


def global_attention(x: torch.Tensor, params: AttentionParams,
                     key_padding: torch.Tensor | None = None,
                     return_weights: bool = False):
    """Token-level self-attention over the whole linearized sequence.

    ``key_padding`` is a boolean ``(..., n)`` tensor, True at padded positions.
    """
    if x.shape[-2] < 1:
        raise ValueError("global attention needs at least one token")
    if not torch.isfinite(x).all():
        raise ValueError("global attention input contains non-finite values")
    mask = None
    if key_padding is not None:
        mask = torch.zeros(key_padding.shape, dtype=x.dtype).masked_fill(key_padding, NEG_INF)
        mask = mask.unsqueeze(-2)
    return multi_head_attention(x, params, mask, return_weights=return_weights)


def graph_attention(xg: torch.Tensor, mask: torch.Tensor, params: AttentionParams,
                    return_weights: bool = False):
    """Component-level attention restricted by the graph mask."""
    m = xg.shape[-2]
    if mask.shape[-2:] != (m, m):
        raise ValueError(f"mask of shape {tuple(mask.shape)} does not match {m} components")
    return multi_head_attention(xg, params, mask.to(xg.dtype), return_weights=return_weights)


def assignment_matrix(component_of: Sequence[int] | torch.Tensor, num_components: int,
                      dtype: torch.dtype | None = None) -> torch.Tensor:
    """One-hot ``(..., n, m)`` map from tokens to components; rows of marker tokens (-1) are zero."""
    comp = torch.as_tensor(component_of, dtype=torch.long)
    valid = comp >= 0
    onehot = torch.nn.functional.one_hot(comp.clamp(min=0), num_components)
    return (onehot * valid.unsqueeze(-1)).to(dtype or torch.get_default_dtype())


def spans_to_component_of(spans: Sequence[Sequence[int]], n: int) -> list[int]:
    comp = [-1] * n
    for c, span in enumerate(spans):
        if not span:
            raise ValueError(f"component {c} has an empty span")
        for t in span:
            if comp[t] != -1:
                raise ValueError(f"token {t} belongs to components {comp[t]} and {c}")
            comp[t] = c
    return comp


def pool_with(x: torch.Tensor, assign: torch.Tensor) -> torch.Tensor:
    """Mean of token rows per component given an assignment matrix.

    Components with no tokens (batch padding) pool to zero.
    """
    counts = assign.sum(dim=-2).clamp(min=1.0).unsqueeze(-1)
    return assign.transpose(-2, -1) @ x / counts


def gather_with(xg: torch.Tensor, x: torch.Tensor, assign: torch.Tensor) -> torch.Tensor:
    """Broadcast component rows back onto their tokens and add to ``x``."""
    return x + assign @ xg


def pool_components(x: torch.Tensor, spans: Sequence[Sequence[int]]) -> torch.Tensor:
    """``m x d`` matrix whose row i is the mean of the rows of ``x`` listed in ``spans[i]``."""
    comp = spans_to_component_of(spans, x.shape[-2])
    return pool_with(x, assignment_matrix(comp, len(spans), x.dtype))


def gather_combine(xg_tilde: torch.Tensor, x_l: torch.Tensor,
                   spans: Sequence[Sequence[int]]) -> torch.Tensor:
    comp = spans_to_component_of(spans, x_l.shape[-2])
    if xg_tilde.shape[-2] != len(spans):
        raise ValueError(f"{xg_tilde.shape[-2]} component rows for {len(spans)} spans")
    return gather_with(xg_tilde, x_l, assignment_matrix(comp, len(spans), x_l.dtype))
