import os
import subprocess

import numpy as np
import pytest
from PIL import Image

import refpaint


def scene(h, w, seed):
    rng = np.random.default_rng(seed)
    img = np.full((h, w, 3), 0.4, dtype=np.float32)
    for _ in range(h * w // 200):
        y, x = rng.integers(0, h - 12), rng.integers(0, w - 12)
        s = rng.integers(3, 12)
        img[y : y + s, x : x + s] += rng.choice([-1, 1]) * rng.uniform(0.25, 0.6)
    return np.clip(img, 0, 1)


def test_rtv_keeps_shape_and_range():
    img = scene(32, 32, 0)
    out = refpaint.rtv_smooth(img, iterations=2)
    assert out.shape == img.shape
    assert out.dtype == np.float32
    assert 0.0 <= out.min() and out.max() <= 1.0


def test_rtv_constant_is_fixed_point():
    img = np.full((24, 24, 3), 0.37, dtype=np.float32)
    np.testing.assert_array_equal(refpaint.rtv_smooth(img), img)


def test_metrics():
    a = np.zeros((16, 16, 3), dtype=np.float32)
    b = np.full((16, 16, 3), 10 / 255, dtype=np.float32)
    assert refpaint.psnr(a, b) == pytest.approx(28.13, abs=0.01)
    assert refpaint.ssim(b, b) == pytest.approx(1.0)


def test_buckets():
    mask = np.ones((20, 20), dtype=np.float32)
    mask.flat[:100] = 0
    assert refpaint.hole_ratio(mask) == 0.25
    assert refpaint.classify_bucket(mask) == 1
    mask.flat[:240] = 0
    assert refpaint.classify_bucket(mask) is None


def test_keypoints_and_mining():
    big = scene(200, 200, 3)
    frames, desc = refpaint.detect_keypoints(big)
    assert frames.shape[1] == 4 and desc.shape == (len(frames), 128)
    np.testing.assert_allclose(np.linalg.norm(desc, axis=1), 1.0, atol=1e-4)
    a, b = big[20:160, 30:170], big[20:160, 20:160]
    pairs = refpaint.mine_pairs(a, b, crop=64, min_matches=8)
    assert len(pairs) == 1
    iy, ix, ry, rx, _ = pairs[0]
    assert abs(ry - iy) <= 2 and abs(rx - (ix + 10)) <= 2


def test_gradcheck_component():
    assert "conv2d" in refpaint.gradcheck_components()
    passed, errors = refpaint.gradcheck("conv2d")
    assert passed and errors


@pytest.mark.skipif(not os.environ.get("REFPAINT_CLI"), reason="needs the refpaint CLI")
def test_model_inpaint(tmp_path):
    size = 32
    for name in ("a", "b"):
        Image.fromarray((scene(size, size, ord(name)) * 255).astype(np.uint8)).save(tmp_path / f"{name}.png")
    (tmp_path / "masks").mkdir()
    mask = np.full((size, size), 255, dtype=np.uint8)
    mask[8:20, 8:20] = 0
    Image.fromarray(mask).save(tmp_path / "masks" / "m.png")
    (tmp_path / "pairs.tsv").write_text("a.png\tb.png\ta\tb\t0\t0\t0\t0\t0\n")
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(
        "epochs = 0\n"
        f"network.image_size = {size}\n"
        "network.base_channels = 4\n"
        "network.encoder_depth = 3\n"
        "network.texture_layers = 1\n"
        "network.structure_layers = 2,3\n"
        f"manifest = {tmp_path / 'pairs.tsv'}\n"
        f"mask_dir = {tmp_path / 'masks'}\n"
        f"output_dir = {tmp_path / 'run'}\n"
    )
    subprocess.run([os.environ["REFPAINT_CLI"], "train", "--config", str(cfg)], check=True)

    model = refpaint.Model(str(tmp_path / "run" / "checkpoint"))
    assert model.image_size == size
    img = scene(size, size, 9)
    m = mask.astype(np.float32) / 255
    out = model.inpaint(img, m, reference=img)
    assert out.shape == img.shape
    known = m > 0.5
    np.testing.assert_allclose(out[known], img[known], atol=1e-6)
    assert model.inpaint(img, m).shape == img.shape
