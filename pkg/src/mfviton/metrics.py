"""Paired and unpaired image metrics over a pinned random feature extractor.

The extractor is a frozen three-layer ReLU CNN whose weights are drawn from
numpy's PCG64 generator (``np.random.Generator(np.random.PCG64(seed))``,
``standard_normal`` in float64, C order, scaled by ``sqrt(2 / fan_in)``), so
features are identical across runs and machines. Reported names carry a star
(``FID*``, ``KID*``, ``LPIPS*``, ``CLIP-I*``): these are stand-ins and are not
comparable with numbers computed from Inception, VGG or CLIP features.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

EXTRACTOR_SEED = 77002025
EXTRACTOR_CHANNELS = (16, 32, 64)
EXTRACTOR_ID = f"randcnn-pcg64-{EXTRACTOR_SEED}-" + "x".join(map(str, EXTRACTOR_CHANNELS))

SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_TRUNCATE = 0.01, 0.03, 1.5, 3.5


def _check_pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11-tap Gaussian window (sigma 1.5), averaged over channels.

    Local statistics are taken only where the window fits inside the image.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    radius = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    crop = (slice(radius, -radius), slice(radius, -radius))

    def blur(x):
        out = ndimage.gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="constant")
        return out[crop]

    values = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cov = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# feature extractor


@lru_cache(maxsize=None)
def _extractor_weights(seed: int = EXTRACTOR_SEED, channels=EXTRACTOR_CHANNELS):
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    in_ch = 3
    for out_ch in channels:
        fan_in = in_ch * 9
        w = rng.standard_normal((out_ch, in_ch, 3, 3)) * np.sqrt(2.0 / fan_in)
        b = rng.standard_normal(out_ch) * 0.1
        layers.append((torch.from_numpy(w), torch.from_numpy(b)))
        in_ch = out_ch
    return tuple(layers)


@torch.no_grad()
def _activations(images) -> list[torch.Tensor]:
    x = torch.as_tensor(np.asarray(images, dtype=np.float64))
    if x.ndim == 3:
        x = x[None]
    h = x.permute(0, 3, 1, 2) - 0.5
    acts = []
    for w, b in _extractor_weights():
        h = F.relu(F.conv2d(h, w, b, stride=2, padding=1))
        acts.append(h)
    return acts


@dataclass
class FeatureMatrix:
    features: np.ndarray
    extractor_id: str = EXTRACTOR_ID

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]


def extract_features(images, batch_size: int = 64) -> FeatureMatrix:
    """Global-average-pooled last-layer activations, one row per image."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    rows = []
    for i in range(0, len(images), batch_size):
        rows.append(_activations(images[i : i + batch_size])[-1].mean(dim=(2, 3)).numpy())
    feats = np.concatenate(rows, axis=0) if rows else np.zeros((0, EXTRACTOR_CHANNELS[-1]))
    return FeatureMatrix(feats)


def _unit_normalize(act: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return act / (act.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)


def perceptual_distance(a: np.ndarray, b: np.ndarray) -> float:
    """LPIPS-style distance: channel-normalized activation differences, spatially averaged and summed over layers."""
    a, b = _check_pair(a, b)
    total = 0.0
    for fa, fb in zip(_activations(a), _activations(b)):
        diff = (_unit_normalize(fa) - _unit_normalize(fb)).pow(2).sum(dim=1)
        total += float(diff.mean())
    return total


def feature_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    fa = extract_features(a).features.ravel()
    fb = extract_features(b).features.ravel()
    denom = np.linalg.norm(fa) * np.linalg.norm(fb)
    if denom == 0:
        return 1.0 if np.array_equal(fa, fb) else 0.0
    return float(np.clip(fa @ fb / denom, -1.0, 1.0))


# ---------------------------------------------------------------------------
# distribution distances


def _as_matrix(f) -> np.ndarray:
    return np.asarray(f.features if isinstance(f, FeatureMatrix) else f, dtype=np.float64)


def _ridged_cov(x: np.ndarray, ridge: bool) -> np.ndarray:
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    d = cov.shape[0]
    if ridge or np.linalg.eigvalsh(cov).min() < 1e-10:
        eps = 1e-6 * max(np.trace(cov), 1e-12) / d
        cov = cov + eps * np.eye(d)
    return cov


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(fa, fb, ridge: bool = False) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The cross term uses ``tr sqrt(S_a^1/2 S_b S_a^1/2)``, computed with
    symmetric eigendecompositions. Sets with ``n <= d`` need ``ridge=True``.
    """
    a, b = _as_matrix(fa), _as_matrix(fb)
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    d = a.shape[1]
    for name, x in (("first", a), ("second", b)):
        if x.shape[0] < d + 1 and not ridge:
            raise ValueError(f"FID needs n >= d + 1 = {d + 1} samples per set ({name} set has {x.shape[0]}); pass ridge=True")
        if x.shape[0] < 2:
            raise ValueError("FID needs at least 2 samples per set")
    mu_a, mu_b = a.mean(0), b.mean(0)
    sa, sb = _ridged_cov(a, ridge), _ridged_cov(b, ridge)
    root_a = _sqrtm_psd(sa)
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(root_a @ sb @ root_a), 0.0, None)).sum()
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb) - 2.0 * cross)
    return max(value, 0.0)


KID_SCALE = 100.0


def _poly_kernel(x, y, d):
    return (x @ y.T / d + 1.0) ** 3


def mmd2_unbiased(fa, fb) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel (diagonal terms excluded)."""
    x, y = _as_matrix(fa), _as_matrix(fb)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError("KID needs at least 2 samples per set")
    d = x.shape[1]
    kxx, kyy, kxy = _poly_kernel(x, x, d), _poly_kernel(y, y, d), _poly_kernel(x, y, d)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def kid(fa, fb) -> float:
    """KID as reported in tables: unbiased MMD^2 multiplied by 100."""
    return KID_SCALE * mmd2_unbiased(fa, fb)


# ---------------------------------------------------------------------------
# protocols


@dataclass
class PairedSet:
    generated: list
    targets: list

    def __post_init__(self):
        if len(self.generated) != len(self.targets):
            raise ValueError("paired evaluation needs aligned lists of equal length")


@dataclass
class UnpairedSet:
    generated: list
    reference: list


def evaluate_paired(pairs: PairedSet) -> dict:
    if not isinstance(pairs, PairedSet):
        raise TypeError("evaluate_paired expects a PairedSet")
    g, t = pairs.generated, pairs.targets
    return {
        "protocol": "paired",
        "n": len(g),
        "extractor": EXTRACTOR_ID,
        "SSIM": float(np.mean([ssim(a, b) for a, b in zip(g, t)])),
        "LPIPS*": float(np.mean([perceptual_distance(a, b) for a, b in zip(g, t)])),
        "CLIP-I*": float(np.mean([feature_cosine(a, b) for a, b in zip(g, t)])),
    }


def evaluate_unpaired(sets: UnpairedSet) -> dict:
    if not isinstance(sets, UnpairedSet):
        raise TypeError("evaluate_unpaired expects an UnpairedSet")
    fg, fr = extract_features(sets.generated), extract_features(sets.reference)
    ridge = min(len(fg), len(fr)) < fg.d + 1
    return {
        "protocol": "unpaired",
        "n_generated": len(fg),
        "n_reference": len(fr),
        "extractor": EXTRACTOR_ID,
        "FID*": fid(fg, fr, ridge=ridge),
        "FID_ridge": ridge,
        "KID*": kid(fg, fr),
        "KID_scale": KID_SCALE,
    }
