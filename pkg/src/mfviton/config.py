"""Flat ``key = value`` run configuration with a stable content hash."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .flowmatch import FlowConfig
from .garmentnet import Topology


@dataclass(frozen=True)
class RunConfig:
    # world
    canvas_h: int = 64
    canvas_w: int = 48
    patch_factor: int = 4
    n_train: int = 512
    n_test: int = 64
    seed: int = 0
    # model
    widths: tuple[int, int, int] = (32, 64, 128)
    ctx_dim: int = 64
    n_sem: int = 4
    lam: float = 1.0
    # optimization
    optimizer: str = "adamw"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.0
    warmup_steps: int = 100
    grad_clip: float = 1.0
    batch_size: int = 8
    stage1_steps: int = 3000
    stage2_steps: int = 4000
    freeze_garment_branch: bool = False
    # flow matching
    weighting: str = "uniform"
    t_distribution: str = "uniform01"
    sample_steps: int = 20
    # mask-free dataset
    corrupt_fraction: float = 0.5
    corrupt_magnitudes: tuple[int, ...] = (2, 3, 4)
    clean_mode: bool = False
    wild_ratio: float = 0.2
    gen_chunk: int = 32
    stage: str = "none"

    def topology(self) -> Topology:
        c = 3 * self.patch_factor**2
        return Topology(
            latent_channels=c, context_channels=2 * c + 1, widths=self.widths, ctx_dim=self.ctx_dim, n_sem=self.n_sem, lam=self.lam
        )

    def flow(self) -> FlowConfig:
        return FlowConfig(weighting=self.weighting, num_sample_steps=self.sample_steps, t_distribution=self.t_distribution)

    @property
    def canvas(self) -> tuple[int, int]:
        return (self.canvas_h, self.canvas_w)

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """SHA-256 over the resolved text form, excluding the stage tag."""
        text = "".join(line + "\n" for line in self.to_text().splitlines() if not line.startswith("stage "))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return replace(self, **{k: _coerce(self, k, v) for k, v in overrides.items()})

    def snapshot(self, directory: Path, name: str = "resolved_config.txt") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / name
        path.write_text(f"# config_hash = {self.hash()}\n" + self.to_text())
        return path


def _coerce(cfg: RunConfig, key: str, raw):
    defaults = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    if key not in defaults:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    current = defaults[key]
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(current, tuple):
            kind = type(current[0]) if current else int
            return tuple(kind(x) for x in raw.split(",") if x.strip())
        return type(current)(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n} is not 'key = value': {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            from .errors import ArtifactIOError

            raise ArtifactIOError(f"cannot read config {path}: {exc}") from exc
        cfg = cfg.with_overrides(parse_config_text(text))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
