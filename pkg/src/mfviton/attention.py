"""Attention primitives and the shared UNet building blocks."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor):
    """Single-head scaled dot-product attention over the key axis.

    Returns ``(output, weights)`` with ``weights`` of shape ``(..., Nq, Nk)``.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention dims disagree: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


def decoupled_cross_attention(q, k_prompt, v_prompt, k_sem, v_sem, lam: float = 1.0):
    """``Attention(Q, K_j, V_j) + lam * Attention(Q, K_i, V_i)``.

    The prompt branch and the semantic branch are normalized independently.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    out_j, _ = attention(q, k_prompt, v_prompt)
    if lam == 0:
        return out_j
    out_i, _ = attention(q, k_sem, v_sem)
    return out_j + lam * out_i


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = (t * 1000.0)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def position_encoding(h: int, w: int, dim: int, dtype=torch.float32, max_period: float = 100.0) -> torch.Tensor:
    """Fixed 2D sinusoidal code, ``(h * w, dim)``: rows in the first half of the channels, columns in the second."""
    quarter = dim // 4
    freqs = torch.exp(-math.log(max_period) * torch.arange(quarter, dtype=dtype) / max(quarter, 1))
    rows = torch.arange(h, dtype=dtype)[:, None] * freqs
    cols = torch.arange(w, dtype=dtype)[:, None] * freqs
    rows = torch.cat([torch.sin(rows), torch.cos(rows)], -1)[:, None].expand(h, w, -1)
    cols = torch.cat([torch.sin(cols), torch.cos(cols)], -1)[None].expand(h, w, -1)
    code = torch.cat([rows, cols], -1).reshape(h * w, -1)
    return F.pad(code, (0, dim - code.shape[1]))


def _groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int | None = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(temb_dim, out_ch) if temb_dim else None
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.temb is not None:
            h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class AttentionBlock(nn.Module):
    """Self-attention (optionally extended with reference tokens) then cross-attention.

    Reference tokens join the self-attention keys and values; both token sets
    carry the same position code in their queries and keys, so a feature can
    find the reference token at its own location. Cross-attention
    uses the prompt embeddings and, when ``semantic`` is set, adds a decoupled
    branch over semantic tokens scaled by ``lam``.
    """

    def __init__(self, dim: int, ctx_dim: int, semantic: bool = True):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_q = nn.Linear(dim, dim, bias=False)
        self.cross_k = nn.Linear(ctx_dim, dim, bias=False)
        self.cross_v = nn.Linear(ctx_dim, dim, bias=False)
        if semantic:
            self.sem_k = nn.Linear(ctx_dim, dim, bias=False)
            self.sem_v = nn.Linear(ctx_dim, dim, bias=False)
        self.semantic = semantic
        self.cross_out = nn.Linear(dim, dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    record = False  # keep the last self-attention weights for probing

    def self_attention(self, x, ref=None, pos=None):
        """``pos``: optional ``(N, C)`` position code of the ``x`` tokens, reused for ``ref``."""
        n = self.norm1(x)
        kv_in = n if ref is None else torch.cat([n, self.norm1(ref)], dim=1)
        if pos is None:
            return attention(self.to_q(n), self.to_k(kv_in), self.to_v(kv_in))
        if ref is not None and ref.shape[1] != x.shape[1]:
            raise ValueError(f"reference has {ref.shape[1]} tokens, expected {x.shape[1]} on the same grid")
        kpos = pos if ref is None else torch.cat([pos, pos])
        return attention(self.to_q(n + pos), self.to_k(kv_in + kpos), self.to_v(kv_in))

    def forward(self, x, prompt, ref=None, sem=None, lam: float = 1.0):
        """``x``: (B, C, h, w) feature map; returns the same shape.

        Also returns the post-block token sequence, which ReferenceNet exports.
        """
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        pos = position_encoding(h, w, c, tokens.dtype)
        attn_out, weights = self.self_attention(tokens, ref, pos)
        tokens = tokens + self.to_out(attn_out)
        n = self.norm2(tokens)
        q = self.cross_q(n)
        if self.semantic and sem is not None:
            cross = decoupled_cross_attention(
                q, self.cross_k(prompt), self.cross_v(prompt), self.sem_k(sem), self.sem_v(sem), lam
            )
        else:
            cross, _ = attention(q, self.cross_k(prompt), self.cross_v(prompt))
        tokens = tokens + self.cross_out(cross)
        tokens = tokens + self.ff(self.norm3(tokens))
        if self.record:
            self.last_weights = weights.detach()
        return tokens.transpose(1, 2).reshape(b, c, h, w), tokens


class Downsample(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))
