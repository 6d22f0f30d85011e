import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mfviton import latentcodec as lc
from mfviton import synthworld as sw

from conftest import PERSON, RED, STUDIO

pixel_images = hnp.arrays(
    np.float32,
    st.tuples(st.sampled_from([4, 8, 16]), st.sampled_from([4, 12]), st.just(3)),
    elements=st.integers(0, 255).map(lambda k: np.float32(k / 255)),
)


def test_shape_arithmetic():
    z = lc.encode(np.zeros((64, 48, 3), np.float32))
    assert z.shape == (16, 12, 48) == lc.latent_shape((64, 48, 3))


def test_constant_image_gives_constant_latent():
    z = lc.encode(np.full((64, 48, 3), 0.75, np.float32))
    assert np.all(z == 0.75 - lc.OFFSET)


def test_zero_latent_decodes_to_offset():
    img = lc.decode(np.zeros((16, 12, 48)))
    assert img.dtype == np.float32 and np.all(img == np.float32(lc.OFFSET))


@settings(max_examples=50, deadline=None)
@given(pixel_images)
def test_round_trip_is_bit_exact(img):
    assert np.array_equal(lc.decode(lc.encode(img)), img)


def test_round_trip_uniform_float32_noise():
    img = np.random.default_rng(0).random((2, 64, 48, 3), dtype=np.float32)
    assert np.array_equal(lc.decode(lc.encode(img)), img)


def test_scene_round_trip():
    img = sw.render_scene(PERSON, RED, STUDIO).image
    assert np.array_equal(lc.decode(lc.encode(img)), img)


def test_encode_of_decode_is_identity_on_valid_latents():
    z = lc.encode(np.random.default_rng(1).random((64, 48, 3), dtype=np.float32))
    assert np.array_equal(lc.encode(lc.decode(z)), z)


def test_patch_layout_matches_manual_space_to_depth():
    img = np.random.default_rng(2).random((8, 8, 3)).astype(np.float32)
    z = lc.encode(img, patch_factor=4, normalize=False)
    for i in range(2):
        for j in range(2):
            patch = img[4 * i : 4 * i + 4, 4 * j : 4 * j + 4, :]
            assert np.array_equal(z[i, j], patch.reshape(-1).astype(np.float64))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_linear_without_normalization(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((8, 12, 3)), rng.random((8, 12, 3))
    lhs = lc.encode(alpha * x + beta * y, normalize=False)
    rhs = alpha * lc.encode(x, normalize=False) + beta * lc.encode(y, normalize=False)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_batched_encode_matches_per_image():
    imgs = np.random.default_rng(3).random((3, 16, 12, 3), dtype=np.float32)
    batched = lc.encode(imgs)
    for k in range(3):
        assert np.array_equal(batched[k], lc.encode(imgs[k]))


def test_dimension_errors():
    with pytest.raises(ValueError):
        lc.encode(np.zeros((10, 48, 3)))
    with pytest.raises(ValueError):
        lc.encode(np.zeros((64, 48, 4)))
    with pytest.raises(ValueError):
        lc.decode(np.zeros((16, 12, 47)))
