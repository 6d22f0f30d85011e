"""Rectified-flow matching objective and deterministic Euler sampler.

The path is ``z_t = (1 - t) x0 + t eps`` with velocity target ``u = eps - x0``;
sampling integrates ``dz/dt = v(z, t)`` from ``t = 1`` down to ``t = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .errors import DivergenceError

VelocityFn = Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor]


@dataclass(frozen=True)
class FlowConfig:
    weighting: str = "uniform"  # or "t_scaled": lambda(t) = t (1 - t)
    num_sample_steps: int = 20
    t_distribution: str = "uniform01"  # or "logit_normal"

    def __post_init__(self):
        if self.weighting not in ("uniform", "t_scaled"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.t_distribution not in ("uniform01", "logit_normal"):
            raise ValueError(f"unknown t distribution {self.t_distribution!r}")
        if self.num_sample_steps < 1:
            raise ValueError("num_sample_steps must be >= 1")


def _check_pair(x0, noise):
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(noise.shape)}")


def _broadcast_t(t, like):
    if isinstance(t, torch.Tensor) and t.ndim == 1:
        return t.reshape(-1, *([1] * (like.ndim - 1))).to(like.dtype)
    return t


def interpolate(x0, noise, t):
    """Point on the straight path; ``t`` may be a scalar or one value per batch row."""
    _check_pair(x0, noise)
    if not isinstance(t, torch.Tensor) and not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    t = _broadcast_t(t, x0)
    return (1 - t) * x0 + t * noise


def velocity_target(x0, noise):
    _check_pair(x0, noise)
    return noise - x0


def loss_weight(t: torch.Tensor, weighting: str) -> torch.Tensor:
    if weighting == "uniform":
        return torch.ones_like(t)
    return t * (1 - t)


def sample_t(batch: int, config: FlowConfig, generator: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    if config.t_distribution == "uniform01":
        return torch.rand(batch, generator=generator, dtype=dtype)
    return torch.sigmoid(torch.randn(batch, generator=generator, dtype=dtype))


def cfm_loss(
    predictor: VelocityFn,
    x0: torch.Tensor,
    cond,
    generator: torch.Generator,
    config: FlowConfig = FlowConfig(),
    t: torch.Tensor | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Weighted mean squared velocity error, averaged over elements then batch.

    ``t`` and ``noise`` are drawn from ``generator`` unless given. The returned
    scalar is differentiable with respect to whatever ``predictor`` closes over.
    """
    b = x0.shape[0]
    if t is None:
        t = sample_t(b, config, generator, dtype=x0.dtype)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    z_t = interpolate(x0, noise, t)
    u = velocity_target(x0, noise)
    v = predictor(z_t, t, cond)
    if v.shape != u.shape:
        raise ValueError(f"predictor returned {tuple(v.shape)}, expected {tuple(u.shape)}")
    per_sample = ((v - u) ** 2).reshape(b, -1).mean(dim=1)
    loss = (loss_weight(t, config.weighting) * per_sample).mean()
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite flow-matching loss: {loss.item()}")
    return loss


def seeded_noise(shape, seeds, dtype=torch.float32) -> torch.Tensor:
    """One standard-normal draw per batch row, each from its own seed.

    Keeps every sample's starting point independent of batch composition.
    """
    rows = []
    for seed in seeds:
        g = torch.Generator().manual_seed(int(seed))
        rows.append(torch.randn(tuple(shape), generator=g, dtype=dtype))
    return torch.stack(rows)


@torch.no_grad()
def euler_sample(
    predictor: VelocityFn,
    cond,
    steps: int,
    noise: torch.Tensor,
) -> torch.Tensor:
    """Integrate from ``z_1 = noise`` to ``t = 0`` with ``steps`` equal Euler steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = noise.clone()
    dt = -1.0 / steps
    b = z.shape[0]
    for k in range(steps):
        t = torch.full((b,), 1.0 - k / steps, dtype=z.dtype)
        z = z + dt * predictor(z, t, cond)
        if not torch.isfinite(z).all():
            norm = float(torch.nan_to_num(z, nan=0.0, posinf=0.0, neginf=0.0).norm())
            raise DivergenceError(f"sampler state became non-finite at step {k} (finite-part norm {norm:.3g})")
    return z

