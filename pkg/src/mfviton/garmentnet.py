"""Garment branch: ReferenceNet (per-layer fine features) and the semantic adapter."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .attention import AttentionBlock, Downsample, ResBlock
from .attention import decoupled_cross_attention  # noqa: F401  (part of the garment-branch API)
from .synthworld import VOCAB_SIZE

ATTENTION_LAYERS = ("down1", "down2", "mid")


@dataclass(frozen=True)
class Topology:
    latent_channels: int = 48
    context_channels: int = 97
    widths: tuple[int, int, int] = (32, 64, 128)
    ctx_dim: int = 64
    temb_dim: int = 128
    n_sem: int = 4
    lam: float = 1.0
    vocab_size: int = VOCAB_SIZE
    trunk_seed: int = 20240301
    trunk_channels: tuple[int, int, int] = (16, 32, 64)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class ReferenceNet(nn.Module):
    """Encoder half of the TryonNet topology, with its own weights and no timestep.

    ``forward`` returns one token tensor per attention layer, in
    :data:`ATTENTION_LAYERS` order, shaped ``(B, h_i * w_i, C_i)``.
    """

    def __init__(self, topo: Topology):
        super().__init__()
        w0, w1, w2 = topo.widths
        self.conv_in = nn.Conv2d(topo.latent_channels, w0, 3, padding=1)
        self.res0 = ResBlock(w0, w0)
        self.down1 = Downsample(w0, w1)
        self.res1 = ResBlock(w1, w1)
        self.attn1 = AttentionBlock(w1, topo.ctx_dim, semantic=False)
        self.down2 = Downsample(w1, w2)
        self.res2 = ResBlock(w2, w2)
        self.attn2 = AttentionBlock(w2, topo.ctx_dim, semantic=False)
        self.res_mid = ResBlock(w2, w2)
        self.attn_mid = AttentionBlock(w2, topo.ctx_dim, semantic=False)

    def forward(self, garment_latent: torch.Tensor, prompt_emb: torch.Tensor) -> list[torch.Tensor]:
        h = self.res0(self.conv_in(garment_latent))
        h, f1 = self.attn1(self.res1(self.down1(h)), prompt_emb)
        h, f2 = self.attn2(self.res2(self.down2(h)), prompt_emb)
        _, f3 = self.attn_mid(self.res_mid(h), prompt_emb)
        return [f1, f2, f3]


def _frozen_conv_weights(seed: int, channels) -> list[tuple[torch.Tensor, torch.Tensor]]:
    g = torch.Generator().manual_seed(seed)
    weights = []
    in_ch = 3
    for out_ch in channels:
        fan_in = in_ch * 9
        w = torch.randn(out_ch, in_ch, 3, 3, generator=g) * (2.0 / fan_in) ** 0.5
        b = torch.zeros(out_ch)
        weights.append((w, b))
        in_ch = out_ch
    return weights


class SemanticEncoder(nn.Module):
    """Frozen random conv trunk + trainable projection to ``n_sem`` tokens.

    The trunk tensors are buffers, never parameters, so no optimizer can move
    them; the projection and its LayerNorm train normally.
    """

    def __init__(self, topo: Topology):
        super().__init__()
        for i, (w, b) in enumerate(_frozen_conv_weights(topo.trunk_seed, topo.trunk_channels)):
            self.register_buffer(f"trunk_w{i}", w)
            self.register_buffer(f"trunk_b{i}", b)
        self.n_layers = len(topo.trunk_channels)
        self.n_sem = topo.n_sem
        self.ctx_dim = topo.ctx_dim
        feat = topo.trunk_channels[-1] * 4
        self.proj = nn.Linear(feat, topo.n_sem * topo.ctx_dim)
        self.norm = nn.LayerNorm(topo.ctx_dim)

    @torch.no_grad()
    def trunk(self, image: torch.Tensor) -> torch.Tensor:
        """``image``: (B, 3, H, W) in [0, 1] -> pooled trunk features (B, 4 C)."""
        h = image - 0.5
        for i in range(self.n_layers):
            w = getattr(self, f"trunk_w{i}").to(h.dtype)
            b = getattr(self, f"trunk_b{i}").to(h.dtype)
            h = F.relu(F.conv2d(h, w, b, stride=2, padding=1))
        return F.adaptive_avg_pool2d(h, (2, 2)).flatten(1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        tokens = self.proj(self.trunk(image)).reshape(-1, self.n_sem, self.ctx_dim)
        return self.norm(tokens)
