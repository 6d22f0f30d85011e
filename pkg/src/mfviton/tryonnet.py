"""The try-on denoiser, its conditioning contexts and the attention probe."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import latentcodec
from .attention import AttentionBlock, Downsample, ResBlock, Upsample, timestep_embedding
from .errors import DivergenceError
from .garmentnet import ATTENTION_LAYERS, ReferenceNet, SemanticEncoder, Topology
from .synthworld import MASK_FILL, SceneRender

# Copy-path constants: offset of the 1/t factor and the initial gate logit.
COPY_EPS = 1e-3
COPY_GATE_INIT = -2.4  # hardsigmoid(-2.4) = 0.1
# Codec latents lie in [-0.5, 0.5]; the flow runs on latents times this factor so
# that image content has roughly unit variance against unit noise. A power of
# two keeps the conversion exact.
LATENT_SCALE = 4.0

# ---------------------------------------------------------------------------
# contexts


@dataclass
class ContextBundle:
    """Latent-space conditioning, ``(h, w, C)`` with identical ``C`` in both modes.

    masked:   [E(masked person) | mask (1 channel) | E(pose)]
    maskfree: [E(conditional person) | zeros]
    """

    mode: str
    channels: np.ndarray

    def __post_init__(self):
        if self.mode not in ("masked", "maskfree"):
            raise ValueError(f"unknown context mode {self.mode!r}")


def context_channels(patch_factor: int = latentcodec.PATCH_FACTOR) -> int:
    c = 3 * patch_factor * patch_factor
    return 2 * c + 1


def downsample_mask(mask: np.ndarray, patch_factor: int = latentcodec.PATCH_FACTOR) -> np.ndarray:
    h, w = mask.shape
    f = patch_factor
    return mask.reshape(h // f, f, w // f, f).max(axis=(1, 3)).astype(np.float64)


def masked_person(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask).astype(bool)[..., None], np.float32(MASK_FILL), image).astype(np.float32)


def masked_context(image: np.ndarray, mask: np.ndarray, pose_map: np.ndarray) -> ContextBundle:
    """Gray out ``mask`` in ``image`` and stack it with the mask and pose latents."""
    mask = np.asarray(mask)
    if mask.shape != image.shape[:2] or pose_map.shape != image.shape:
        raise ValueError(f"mask {mask.shape} / pose {pose_map.shape} do not match image {image.shape}")
    person = latentcodec.encode(masked_person(image, mask))
    m = downsample_mask(mask)[..., None]
    pose = latentcodec.encode(pose_map)
    return ContextBundle("masked", np.concatenate([person, m, pose], axis=-1))


def build_masked_context(scene: SceneRender, mask: np.ndarray) -> ContextBundle:
    return masked_context(scene.image, mask, scene.pose_map)


def build_maskfree_context(cond_image: np.ndarray, canvas=None) -> ContextBundle:
    if canvas is not None and tuple(cond_image.shape[:2]) != tuple(canvas):
        raise ValueError(f"conditional image is {cond_image.shape[:2]}, canvas is {canvas}")
    cond = latentcodec.encode(cond_image)
    pad = np.zeros(cond.shape[:-1] + (cond.shape[-1] + 1,))
    return ContextBundle("maskfree", np.concatenate([cond, pad], axis=-1))


def to_nchw(latent: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Codec latent ``(..., h, w, c)`` -> flow-space ``(B, c, h, w)`` tensor."""
    t = torch.as_tensor(np.asarray(latent) * LATENT_SCALE, dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(t: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`to_nchw`, back to float64 codec latents."""
    return t.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float64) / LATENT_SCALE


def image_to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(image), dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


# ---------------------------------------------------------------------------
# networks


class TryonNet(nn.Module):
    """Three-level UNet over ``[z_t | context]`` predicting the velocity.

    Attention sits at the 8x6 and 4x3 encoder levels and at the bottleneck.
    """

    def __init__(self, topo: Topology):
        super().__init__()
        w0, w1, w2 = topo.widths
        self.temb_in = w0 * 2
        self.time_mlp = nn.Sequential(nn.Linear(self.temb_in, topo.temb_dim), nn.SiLU(), nn.Linear(topo.temb_dim, topo.temb_dim))
        td = topo.temb_dim
        self.conv_in = nn.Conv2d(topo.latent_channels + topo.context_channels, w0, 3, padding=1)
        self.res0 = ResBlock(w0, w0, td)
        self.down1 = Downsample(w0, w1)
        self.res1 = ResBlock(w1, w1, td)
        self.attn1 = AttentionBlock(w1, topo.ctx_dim)
        self.down2 = Downsample(w1, w2)
        self.res2 = ResBlock(w2, w2, td)
        self.attn2 = AttentionBlock(w2, topo.ctx_dim)
        self.res_mid = ResBlock(w2, w2, td)
        self.attn_mid = AttentionBlock(w2, topo.ctx_dim)
        self.up_res2 = ResBlock(2 * w2, w2, td)
        self.up2 = Upsample(w2, w1)
        self.up_res1 = ResBlock(2 * w1, w1, td)
        self.up1 = Upsample(w1, w0)
        self.up_res0 = ResBlock(2 * w0, w0, td)
        self.norm_out = nn.GroupNorm(8, w0)
        self.conv_out = nn.Conv2d(w0, topo.latent_channels, 3, padding=1)
        # Per-position linear bypass from [z_t | context] to the output with a
        # timestep-dependent channel gain; the trunk is narrower than the latent.
        c = topo.latent_channels
        self.skip = nn.Conv2d(c + topo.context_channels, c, 1)
        self.skip_gain = nn.Linear(td, c)
        # Copy path: where the context shows the target pixels the exact velocity
        # is (z_t - context person) / t. A learned gate decides where that holds;
        # it starts nearly closed so the 1/t term cannot dominate early training.
        # Besides the inputs and decoder features the gate sees how large the copy
        # velocity is: about unit size where the context agrees with the target,
        # growing like 1/t where it does not.
        self.copy_gate = nn.Conv2d(c + topo.context_channels + w0 + 1, c, 1)
        with torch.no_grad():
            self.copy_gate.weight.zero_()
            self.copy_gate.bias.fill_(COPY_GATE_INIT)

    def attention_blocks(self) -> dict[str, AttentionBlock]:
        return {"down1": self.attn1, "down2": self.attn2, "mid": self.attn_mid}

    def forward(self, z, t, context, prompt, ref, sem, lam):
        def check(name, x):
            if not torch.isfinite(x).all():
                raise DivergenceError(f"non-finite activations in TryonNet layer {name!r}")
            return x

        temb = self.time_mlp(timestep_embedding(t.to(z.dtype), self.temb_in))
        x = torch.cat([z, context], dim=1)
        h0 = check("res0", self.res0(self.conv_in(x), temb))
        h1, _ = self.attn1(self.res1(self.down1(h0), temb), prompt, ref[0], sem, lam)
        check("down1", h1)
        h2, _ = self.attn2(self.res2(self.down2(h1), temb), prompt, ref[1], sem, lam)
        check("down2", h2)
        m, _ = self.attn_mid(self.res_mid(h2, temb), prompt, ref[2], sem, lam)
        check("mid", m)
        u = self.up2(self.up_res2(torch.cat([m, h2], 1), temb))
        u = self.up1(self.up_res1(torch.cat([u, h1], 1), temb))
        u = self.up_res0(torch.cat([u, h0], 1), temb)
        c = z.shape[1]
        inv_t = 1.0 / (t.to(z.dtype) + COPY_EPS)
        copy = (z - context[:, :c]) * inv_t[:, None, None, None]
        agreement = torch.log1p(copy.pow(2).mean(1, keepdim=True))
        gate = F.hardsigmoid(self.copy_gate(torch.cat([x, u, agreement], 1)))
        gain = 1.0 + self.skip_gain(F.silu(temb))[:, :, None, None]
        return check("out", self.conv_out(F.silu(self.norm_out(u))) + gain * self.skip(x) + gate * copy)


@dataclass
class GarmentFeatures:
    reference: list[torch.Tensor]
    semantic: torch.Tensor


@dataclass
class Conditioning:
    """Everything the velocity predictor needs besides ``(z_t, t)``.

    ``prompt`` holds token ids (mode token first); ``ref_prompt`` the attribute
    tokens fed to ReferenceNet. ``garment`` caches precomputed garment features.
    """

    context: torch.Tensor
    prompt: torch.Tensor
    ref_prompt: torch.Tensor
    garment_latent: torch.Tensor
    garment_image: torch.Tensor
    garment: GarmentFeatures | None = None


class MFVitonModel(nn.Module):
    """TryonNet + ReferenceNet + semantic adapter + prompt embedding table."""

    def __init__(self, topo: Topology = Topology()):
        super().__init__()
        self.topo = topo
        self.prompt_embed = nn.Embedding(topo.vocab_size, topo.ctx_dim)
        self.tryon = TryonNet(topo)
        self.reference = ReferenceNet(topo)
        self.adapter = SemanticEncoder(topo)

    # garment branch
    def extract_reference_features(self, garment_latent, ref_prompt_tokens) -> list[torch.Tensor]:
        c, h, w = garment_latent.shape[1:]
        if c != self.topo.latent_channels or h % 4 or w % 4:
            raise ValueError(
                f"garment latent {tuple(garment_latent.shape[1:])} does not fit the topology "
                f"({self.topo.latent_channels} channels, spatial dims divisible by 4)"
            )
        return self.reference(garment_latent, self.prompt_embed(ref_prompt_tokens))

    def encode_semantics(self, garment_image) -> torch.Tensor:
        return self.adapter(garment_image)

    def garment_features(self, cond: Conditioning) -> GarmentFeatures:
        if cond.garment is not None:
            return cond.garment
        return GarmentFeatures(
            self.extract_reference_features(cond.garment_latent, cond.ref_prompt),
            self.encode_semantics(cond.garment_image),
        )

    @staticmethod
    def reference_token_counts(latent_hw) -> list[int]:
        h, w = latent_hw
        return [(h // 2) * (w // 2), (h // 4) * (w // 4), (h // 4) * (w // 4)]

    def predict_velocity(self, z_t, t, context, prompt_tokens, reference, semantic, lam: float | None = None):
        if context.shape[1] != self.topo.context_channels:
            raise ValueError(f"context has {context.shape[1]} channels, expected {self.topo.context_channels}")
        if z_t.shape[1] != self.topo.latent_channels:
            raise ValueError(f"latent has {z_t.shape[1]} channels, expected {self.topo.latent_channels}")
        if t.ndim == 0:
            t = t.expand(z_t.shape[0])
        lam = self.topo.lam if lam is None else lam
        return self.tryon(z_t, t, context, self.prompt_embed(prompt_tokens), reference, semantic, lam)

    def velocity(self, z_t, t, cond: Conditioning):
        """Predictor signature used by :func:`flowmatch.cfm_loss` and the sampler."""
        g = self.garment_features(cond)
        return self.predict_velocity(z_t, t, cond.context, cond.prompt, g.reference, g.semantic)

    def prepare(self, cond: Conditioning) -> Conditioning:
        """Precompute garment features once, for repeated sampler calls."""
        with torch.no_grad():
            g = self.garment_features(cond)
        return Conditioning(cond.context, cond.prompt, cond.ref_prompt, cond.garment_latent, cond.garment_image, g)

    @contextmanager
    def recording(self, layer: str):
        blocks = self.tryon.attention_blocks()
        if layer not in blocks:
            raise ValueError(f"invalid attention layer {layer!r}; choose from {list(blocks)}")
        block = blocks[layer]
        block.record = True
        try:
            yield block
        finally:
            block.record = False

    @torch.no_grad()
    def attention_probe(self, z_t, t, cond: Conditioning, layer: str = "down1") -> torch.Tensor:
        """Self-attention mass each latent position puts on reference tokens, ``(B, h_l, w_l)``."""
        with self.recording(layer) as block:
            self.velocity(z_t, t, cond)
            weights = block.last_weights
        idx = ATTENTION_LAYERS.index(layer)
        scale = 2 if idx == 0 else 4
        h, w = z_t.shape[-2] // scale, z_t.shape[-1] // scale
        n_self = h * w
        return weights[:, :, n_self:].sum(-1).reshape(-1, h, w)


def make_conditioning(contexts, prompts, ref_prompts, garment_images, dtype=torch.float32) -> Conditioning:
    """Batch numpy inputs into a :class:`Conditioning`.

    ``contexts``: list of ContextBundle; ``garment_images``: list of product shots.
    """
    ctx = to_nchw(np.stack([c.channels for c in contexts]), dtype)
    images = np.stack(garment_images)
    return Conditioning(
        context=ctx,
        prompt=torch.as_tensor(np.asarray(prompts), dtype=torch.long),
        ref_prompt=torch.as_tensor(np.asarray(ref_prompts), dtype=torch.long),
        garment_latent=to_nchw(latentcodec.encode(images), dtype),
        garment_image=image_to_tensor(images, dtype),
    )
