import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg
from skimage.metrics import structural_similarity

from mfviton import metrics as M
from mfviton import synthworld as sw

from conftest import random_image


def images(seed, n=4):
    rng = np.random.default_rng(seed)
    return [random_image(rng) for _ in range(n)]


def scalar_ssim(x, y):
    """Direct loop implementation: Gaussian window, valid positions only, population moments."""
    sigma, radius = 1.5, 5
    taps = [math.exp(-(k * k) / (2 * sigma * sigma)) for k in range(-radius, radius + 1)]
    s = sum(taps)
    taps = [t / s for t in taps]
    c1, c2 = 0.01**2, 0.03**2
    h, w = len(x), len(x[0])
    vals = []
    for i in range(radius, h - radius):
        for j in range(radius, w - radius):
            mx = my = sxx = syy = sxy = 0.0
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    g = taps[di + radius] * taps[dj + radius]
                    a, b = x[i + di][j + dj], y[i + di][j + dj]
                    mx += g * a
                    my += g * b
                    sxx += g * a * a
                    syy += g * b * b
                    sxy += g * a * b
            vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


# --- SSIM -----------------------------------------------------------------


def test_ssim_identity():
    for img in images(0, 3):
        assert M.ssim(img, img) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_symmetric(seed):
    a, b = images(seed, 2)
    assert abs(M.ssim(a, b) - M.ssim(b, a)) < 1e-9


def test_ssim_inverted_pattern_negative_matches_scalar_oracle():
    yy, xx = np.mgrid[0:20, 0:18]
    x = 0.5 + 0.25 * np.sin(yy / 2.0) * np.cos(xx / 3.0)
    y = 1.0 - x
    value = M.ssim(x, y)
    assert value < 0
    assert value == pytest.approx(scalar_ssim(x.tolist(), y.tolist()), abs=1e-10)


def test_ssim_matches_reference_library():
    a, b = images(3, 2)
    ref = structural_similarity(
        a.astype(np.float64), b.astype(np.float64), data_range=1.0, channel_axis=-1,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    )
    assert M.ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        M.ssim(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


# --- features -------------------------------------------------------------


def test_features_deterministic_and_shaped():
    imgs = images(1, 5)
    a, b = M.extract_features(imgs), M.extract_features(imgs)
    assert a.features.shape == (5, 64) and a.d == 64 and len(a) == 5
    assert np.array_equal(a.features, b.features)
    assert a.extractor_id == M.EXTRACTOR_ID


def test_extractor_weights_follow_documented_generator():
    rng = np.random.Generator(np.random.PCG64(M.EXTRACTOR_SEED))
    w0 = rng.standard_normal((16, 3, 3, 3)) * np.sqrt(2.0 / 27)
    assert np.array_equal(M._extractor_weights()[0][0].numpy(), w0)


def test_feature_rows_follow_input_permutation():
    imgs = images(2, 6)
    perm = [3, 0, 5, 1, 4, 2]
    f = M.extract_features(imgs).features
    fp = M.extract_features([imgs[i] for i in perm]).features
    np.testing.assert_allclose(fp, f[perm], rtol=0, atol=1e-12)


def test_color_populations_separate_in_feature_space():
    rng = np.random.default_rng(0)
    person = sw.sample_person(rng)

    def population(hue, n=12):
        out = []
        for _ in range(n):
            g = sw.sample_garment(rng)
            g = sw.GarmentSpec(**{**sw.spec_to_dict(g), "base_color": sw._saturated_color(rng, hue)})
            out.append(sw.render_scene(person, g, sw.BackgroundSpec()).image)
        return M.extract_features(out).features

    a, b = population(0.0), population(0.6)

    def mean_dist(x, y, same):
        d = np.linalg.norm(x[:, None] - y[None], axis=-1)
        return d[~np.eye(len(x), dtype=bool)].mean() if same else d.mean()

    between = mean_dist(a, b, False)
    assert between > mean_dist(a, a, True) and between > mean_dist(b, b, True)


# --- perceptual distance and cosine ---------------------------------------


def test_identity_values():
    x = images(4, 1)[0]
    assert M.perceptual_distance(x, x) == 0.0
    assert M.feature_cosine(x, x) == pytest.approx(1.0, abs=1e-12)


def test_symmetry():
    a, b = images(5, 2)
    assert M.perceptual_distance(a, b) == pytest.approx(M.perceptual_distance(b, a), abs=1e-12)
    assert abs(M.feature_cosine(a, b) - M.feature_cosine(b, a)) < 1e-9


def test_distance_monotone_along_interpolation_to_noise():
    x = sw.render_scene(sw.sample_person(np.random.default_rng(0)), sw.GarmentSpec((0.9, 0.2, 0.1)), sw.BackgroundSpec()).image
    noise = np.random.default_rng(9).random(x.shape)
    d = [M.perceptual_distance(x, (1 - s) * x + s * noise) for s in np.linspace(0, 1, 5)]
    assert d[0] == 0 and all(a < b for a, b in zip(d, d[1:]))


# --- FID ------------------------------------------------------------------


def gaussian(n, d, mu=0.0, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d)) + mu


def test_fid_identity_and_symmetry():
    a, b = gaussian(200, 8, seed=1), gaussian(300, 8, 0.3, seed=2)
    assert M.fid(a, a) < 1e-6
    assert abs(M.fid(a, b) - M.fid(b, a)) < 1e-8


def test_fid_matches_scipy_sqrtm_formula():
    a, b = gaussian(400, 6, seed=3), gaussian(500, 6, 0.5, seed=4) @ np.diag([1, 2, 0.5, 1, 1, 3])
    mu_a, mu_b = a.mean(0), b.mean(0)
    sa, sb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ref = np.sum((mu_a - mu_b) ** 2) + np.trace(sa + sb - 2 * linalg.sqrtm(sa @ sb).real)
    assert M.fid(a, b) == pytest.approx(ref, rel=1e-8)


def test_fid_gaussian_closed_form():
    a, b = gaussian(5000, 8, seed=5), gaussian(5000, 8, 1.0, seed=6)
    assert abs(M.fid(a, b) - 8.0) / 8.0 < 0.05


def test_fid_small_sample_requires_ridge():
    a, b = gaussian(5, 8, seed=7), gaussian(5, 8, seed=8)
    with pytest.raises(ValueError, match="n >= d \\+ 1"):
        M.fid(a, b)
    assert M.fid(a, b, ridge=True) >= 0
    assert M.fid(a, a, ridge=True) < 1e-6


# --- KID ------------------------------------------------------------------


def brute_mmd2(x, y):
    d = x.shape[1]
    k = lambda u, v: (float(u @ v) / d + 1) ** 3  # noqa: E731
    m, n = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return sxx + syy - 2 * sxy


def test_mmd_matches_brute_force():
    x, y = gaussian(7, 3, seed=9), gaussian(6, 3, 0.4, seed=10)
    assert M.mmd2_unbiased(x, y) == pytest.approx(brute_mmd2(x, y), rel=1e-12)


def scene_features(n, seed=0):
    rng = np.random.default_rng(seed)
    imgs = [sw.render_scene(sw.sample_person(rng), sw.sample_garment(rng), sw.sample_background(rng)).image for _ in range(n)]
    return M.extract_features(imgs).features


def test_kid_split_halves_near_zero():
    f = scene_features(2000)
    assert abs(M.mmd2_unbiased(f[:1000], f[1000:])) < 1e-3


def test_kid_degenerate_identical_sets_zero():
    a = np.ones((10, 4)) * 0.5
    assert M.mmd2_unbiased(a, a) == 0.0


def test_kid_scaling_and_symmetry():
    x, y = gaussian(50, 4, seed=12), gaussian(60, 4, 0.5, seed=13)
    assert M.kid(x, y) == 100 * M.mmd2_unbiased(x, y)
    assert M.kid(x, y) == pytest.approx(M.kid(y, x), abs=1e-12)
    with pytest.raises(ValueError):
        M.kid(x[:1], y)


# --- protocols ------------------------------------------------------------


def test_paired_report():
    imgs = images(14, 3)
    rep = M.evaluate_paired(M.PairedSet(imgs, imgs))
    assert rep["SSIM"] == pytest.approx(1.0) and rep["LPIPS*"] == 0.0 and rep["CLIP-I*"] == pytest.approx(1.0)
    assert rep["n"] == 3 and rep["extractor"] == M.EXTRACTOR_ID


def test_unpaired_report_uses_ridge_for_small_sets():
    rep = M.evaluate_unpaired(M.UnpairedSet(images(15, 6), images(16, 6)))
    assert rep["FID_ridge"] is True and rep["FID*"] >= 0 and rep["KID_scale"] == 100


def test_protocols_enforced_by_type():
    imgs = images(17, 2)
    with pytest.raises(TypeError):
        M.evaluate_paired(M.UnpairedSet(imgs, imgs))
    with pytest.raises(TypeError):
        M.evaluate_unpaired(M.PairedSet(imgs, imgs))
    with pytest.raises(ValueError):
        M.PairedSet(imgs, imgs[:1])
