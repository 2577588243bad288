import json

import numpy as np
import pytest

import floodgen


def test_depth_codec_matches_the_code_formula():
    rng = np.random.default_rng(0)
    codes = rng.integers(0, floodgen.MAX_DEPTH_CODE + 1, size=200)
    for code in codes:
        meters = floodgen.depth_from_code(int(code))
        assert meters == pytest.approx(int(code) * 655.36 / (2**24 - 1), abs=1e-9)
        assert floodgen.code_from_depth(meters) == code
    with pytest.raises(floodgen.OutOfRange):
        floodgen.code_from_depth(700.0)


def test_depth_image_round_trip():
    meters = np.linspace(0.5, 120.0, 12).reshape(3, 4)
    rgb = floodgen.encode_depth(meters)
    assert rgb.shape == (3, 4, 3) and rgb.dtype == np.uint8
    code = rgb[..., 0].astype(np.int64) * 65536 + rgb[..., 1].astype(np.int64) * 256 + rgb[..., 2]
    np.testing.assert_allclose(code * 655.36 / (2**24 - 1), meters, atol=655.36 / (2**24 - 1))
    np.testing.assert_allclose(floodgen.decode_depth(rgb), meters, atol=655.36 / (2**24 - 1))


def test_masks_and_scale():
    heights = np.array([[0.1, 0.4], [0.9, 1.6]])
    assert floodgen.flood_mask_metric(heights, 0.5).tolist() == [[1, 1], [0, 0]]
    assert floodgen.flood_mask_metric(heights, 0.1).sum() == 0
    low = floodgen.flood_mask_metric(heights, 0.5)
    high = floodgen.flood_mask_metric(heights, 1.0)
    assert np.all(high >= low)
    assert floodgen.flood_mask_percentile(heights, 0.5).sum() == 2
    assert floodgen.estimate_scale([(1.5, 0.5), (1.7, 0.5), (3.0, 0.1)]) == pytest.approx(3.4)


def test_flat_ground_heights():
    cam = floodgen.CameraModel.from_fov(8, 8, 90.0, 2.5)
    assert cam.fx == pytest.approx(4.0)
    v = np.arange(8)[:, None].astype(float)
    ray = (v - cam.cy) / cam.fy
    depth = np.where(ray > 0, 2.5 / np.maximum(ray, 1e-9), 50.0) * np.ones((8, 8))
    heights = floodgen.backproject_heights(depth, True, cam)
    np.testing.assert_allclose(heights[5:], 0.0, atol=1e-9)


def test_masked_cycle_loss_ignores_the_mask():
    rng = np.random.default_rng(1)
    x = rng.random((1, 3, 4, 4), dtype=np.float32)
    y = rng.random((1, 3, 4, 4), dtype=np.float32)
    mask = np.zeros((1, 1, 4, 4), dtype=np.float32)
    mask[..., :2, :] = 1
    expected = np.abs(x - y)[..., 2:, :].mean()
    assert floodgen.masked_cycle_loss(x, y, mask) == pytest.approx(expected, rel=1e-6)
    y2 = y.copy()
    y2[..., :2, :] = 5.0
    assert floodgen.masked_cycle_loss(x, y2, mask) == pytest.approx(expected, rel=1e-6)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "small.pt"
    arch = {"base_channels": 8, "n_residual_blocks": 1, "mlp_dim": 16, "disc_channels": 8,
            "seg_channels": 8, "domain_channels": 8, "height_channels": 8}
    floodgen.save_random_checkpoint(str(path), json.dumps(arch), 2)
    return path


def test_flooder_contract(checkpoint):
    flooder = floodgen.Flooder(str(checkpoint))
    rng = np.random.default_rng(3)
    image = rng.random((20, 28, 3), dtype=np.float32)

    same, mask, diag = flooder.flood(image, fraction=0.0)
    assert mask.sum() == 0
    np.testing.assert_array_equal(same, image)

    a, mask, diag = flooder.flood(image, fraction=0.4, style_seed=7)
    b, _, _ = flooder.flood(image, fraction=0.4, style_seed=7)
    np.testing.assert_array_equal(a, b)
    assert a.shape == image.shape
    assert mask.sum() > 0
    outside = mask == 0
    np.testing.assert_array_equal(a[outside], image[outside])
    assert diag["mask_mode"] == "percentile"

    low = flooder.flood(image, level_m=0.5)[1]
    high = flooder.flood(image, level_m=1.5)[1]
    assert np.all(high >= low)

    with pytest.raises(floodgen.BadRequest):
        flooder.flood(image, level_m=1.0, fraction=0.2)


def test_load_errors(tmp_path):
    with pytest.raises(floodgen.ModelLoadError):
        floodgen.Flooder(str(tmp_path / "missing.pt"))
    assert issubclass(floodgen.ModelLoadError, floodgen.FloodgenError)


def test_composite():
    original = np.zeros((2, 2, 3), dtype=np.float32)
    generated = np.ones((2, 2, 3), dtype=np.float32)
    mask = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    out = floodgen.composite(original, generated, mask)
    assert out[0, 0].tolist() == [1, 1, 1]
    assert out[1:].sum() == 0 and out[0, 1].sum() == 0
