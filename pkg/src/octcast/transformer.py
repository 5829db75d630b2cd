"""Object-centric transformer: masked attention, blocks, encoder, decoder.

Each block computes

    Q, K, V = split(W [q_in; k_in; v_in])
    Q'      = q_in + Att(Q, K, V, M)
    out     = Q' + MLP(LN(Q'))

with no normalization in front of the attention branch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptyHistory, ShapeMismatch
from .tokens import N_TOKENS, sinusoidal_table, uniform_init_

NEG_INF = -1e9


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None, heads: int) -> torch.Tensor:
    """Multi-head scaled dot-product attention with an additive mask.

    ``q`` is (..., n, D), ``k``/``v`` are (..., m, D), ``mask`` broadcasts to
    (..., n, m) and holds 0 or ``NEG_INF``. Each head of width D/heads computes
    softmax((q k^T + M) / sqrt(D/heads)) v. Rows whose keys are all masked
    return zeros.
    """
    n, D = q.shape[-2:]
    m = k.shape[-2]
    if k.shape[-1] != D or v.shape[-1] != D or v.shape[-2] != m or D % heads:
        raise ShapeMismatch(f"attention shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)} heads={heads}")
    d = D // heads

    def split(x):
        return x.reshape(x.shape[:-1] + (heads, d)).transpose(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2)
    if mask is not None:
        if mask.shape[-2:] != (n, m) and mask.shape[-1] != m:
            raise ShapeMismatch(f"mask shape {tuple(mask.shape)} does not fit ({n}, {m})")
        scores = scores + mask.unsqueeze(-3)
    weights = torch.softmax(scores / math.sqrt(d), dim=-1)
    out = (weights @ vh).transpose(-3, -2)
    out = out.reshape(out.shape[:-2] + (D,))
    if mask is not None:
        dead = (mask <= NEG_INF / 2).all(dim=-1, keepdim=True)
        if dead.any():
            out = out.masked_fill(dead.expand(out.shape[:-1] + (1,)), 0.0)
    return out


def key_padding_mask(pad: torch.Tensor, n_queries: int) -> torch.Tensor:
    """(B, m) boolean padding -> (B, n, m) additive mask."""
    m = torch.zeros(pad.shape, dtype=torch.get_default_dtype()).masked_fill(pad, NEG_INF)
    return m[:, None, :].expand(pad.shape[0], n_queries, pad.shape[1])


class Block(nn.Module):
    def __init__(self, D: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.D, self.heads = D, heads
        self.qkv = nn.Linear(D, 3 * D)
        self.ln = nn.LayerNorm(D)
        self.mlp = nn.Sequential(nn.Linear(D, 4 * D), nn.GELU(), nn.Linear(4 * D, D))
        self.drop = nn.Dropout(dropout)
        uniform_init_(self)

    def forward(self, q_in: torch.Tensor, mask: torch.Tensor | None, kv_in: torch.Tensor | None = None) -> torch.Tensor:
        if kv_in is None:
            q, k, v = self.qkv(q_in).chunk(3, dim=-1)
        else:
            wq, wk, wv = self.qkv.weight.chunk(3, dim=0)
            bq, bk, bv = self.qkv.bias.chunk(3, dim=0)
            q = F.linear(q_in, wq, bq)
            k = F.linear(kv_in, wk, bk)
            v = F.linear(kv_in, wv, bv)
        mask = None if mask is None else mask.to(q.dtype)
        x = q_in + self.drop(attention(q, k, v, mask, self.heads))
        return x + self.drop(self.mlp(self.ln(x)))


def encoding_block(q_in: torch.Tensor, pad: torch.Tensor, block: Block) -> torch.Tensor:
    """Self-attention block over a (B, n, D) sequence with key padding (B, n)."""
    return block(q_in, key_padding_mask(pad, q_in.shape[-2]).to(q_in.dtype))


@dataclass
class EncoderOutput:
    Z: torch.Tensor  # (B, 5, T, D)
    pad_mask: torch.Tensor  # (B, 5, T)

    @property
    def Z_gT(self) -> torch.Tensor:
        return self.Z[:, N_TOKENS - 1, -1]

    @property
    def Z_T(self) -> torch.Tensor:
        return self.Z[:, :, -1]

    @property
    def pad_T(self) -> torch.Tensor:
        return self.pad_mask[:, :, -1]

    def repeat(self, k: int) -> "EncoderOutput":
        return EncoderOutput(self.Z.repeat_interleave(k, 0), self.pad_mask.repeat_interleave(k, 0))


class Encoder(nn.Module):
    def __init__(self, D: int, heads: int, n_blocks: int, dropout: float = 0.0):
        super().__init__()
        self.blocks = nn.ModuleList(Block(D, heads, dropout) for _ in range(n_blocks))

    def forward(self, tokens: torch.Tensor, pad: torch.Tensor) -> EncoderOutput:
        B, C, T, D = tokens.shape
        x = tokens.reshape(B, C * T, D)
        flat_pad = pad.reshape(B, C * T)
        for blk in self.blocks:
            x = encoding_block(x, flat_pad, blk)
        return EncoderOutput(x.reshape(B, C, T, D), pad)


class Decoder(nn.Module):
    """Autoregressive decoder over hand-location history.

    Keys and values of every block are the five last-frame encoder tokens
    followed by the causal prefix of the query stream; padded last-frame
    tokens are masked out.
    """

    def __init__(self, D: int, heads: int, n_blocks: int, dropout: float = 0.0, loc_dim: int = 4):
        super().__init__()
        self.D = D
        self.embed = nn.Linear(loc_dim, D)
        self.blocks = nn.ModuleList(Block(D, heads, dropout) for _ in range(n_blocks))
        uniform_init_(self.embed)

    def mask(self, pad_T: torch.Tensor, L: int, dtype) -> torch.Tensor:
        B = pad_T.shape[0]
        enc = torch.zeros(B, L, pad_T.shape[1], dtype=dtype).masked_fill(pad_T[:, None, :], NEG_INF)
        causal = torch.full((L, L), NEG_INF, dtype=dtype).triu(1)
        return torch.cat([enc, causal.expand(B, L, L)], dim=-1)

    def forward(self, history: torch.Tensor, enc: EncoderOutput) -> torch.Tensor:
        """history (B, L, 4) -> decoder features (B, L, D) for every position."""
        L = history.shape[1]
        if L == 0:
            raise EmptyHistory("decoder needs at least h_T")
        x = self.embed(history) + sinusoidal_table(L, self.D, history.dtype)[None]
        z_t = enc.Z_T
        mask = self.mask(enc.pad_T, L, x.dtype)
        for blk in self.blocks:
            x = blk(x, mask, kv_in=torch.cat([z_t, x], dim=1))
        return x

    def decode_step(self, history: torch.Tensor, enc: EncoderOutput) -> torch.Tensor:
        return self.forward(history, enc)[:, -1]
