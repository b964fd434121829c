import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fenceguide.guidance import estimate_shift
from fenceguide.edges import canny
from fenceguide.imagecore import load_image, load_mask
from fenceguide.synth import (
    DatasetManifest, SceneRecipe, SynthConfig, SynthError, augment, compose_pair,
    fence_template, fence_texture, generate_dataset, procedural_background, render_scene,
    salt_pepper, sample_recipe)


def _recipe(fg, bg, h=40, w=40):
    return SceneRecipe("procedural", "procedural", fg, bg, crop=(0, 0, h, w))


def test_zero_parallax_gives_identical_views():
    rng = np.random.default_rng(0)
    bg = procedural_background(40, 40, rng)
    fence = fence_template(40, 40, cell=10, wire=2)
    tex = fence_texture(40, 40, rng)
    left, right, gt = compose_pair(bg, fence, tex, _recipe(0, 0))
    np.testing.assert_array_equal(left, right)
    np.testing.assert_array_equal(gt, fence)


def test_dot_moves_by_fence_shift_and_background_by_its_own():
    bg = np.zeros((20, 40), np.uint8)
    bg[10, 20] = 200                       # background landmark
    fence = np.zeros((20, 40), np.uint8)
    fence[5, 15] = 1                       # single fence dot
    tex = np.full((20, 40), 50, np.uint8)
    left, right, gt = compose_pair(bg, fence, tex, _recipe(7, 2, 20, 30))
    assert right[5, 15] == 50 and gt[5, 15] == 1
    assert left[5, 15 - 7] == 50
    assert right[10, 20] == 200 and left[10, 20 - 2] == 200


def test_recipe_invariants():
    with pytest.raises(SynthError):
        SceneRecipe("a", "b", fg_shift=2, bg_shift=3)
    with pytest.raises(SynthError):
        SceneRecipe("a", "b", fg_shift=3, bg_shift=1, noise_p=0.7)
    r = SceneRecipe("a", "b", 5, 1, affine=(1.0, 1.1, 0.0, 2.0))
    assert SceneRecipe.from_dict(r.to_dict()) == r


def test_compose_errors():
    rng = np.random.default_rng(1)
    bg = procedural_background(20, 20, rng)
    fence = fence_template(20, 20)
    tex = fence_texture(20, 20, rng)
    with pytest.raises(SynthError):
        compose_pair(bg, fence, tex[:, :10], _recipe(3, 1, 20, 18))
    with pytest.raises(SynthError):
        compose_pair(bg, fence, tex, _recipe(3, 5 - 1, 20, 20))


def test_full_recipe_shift_is_recoverable():
    left, right, gt = render_scene(
        SceneRecipe("procedural", "procedural", 7, 2, crop=(0, 4, 128, 128), rng_seed=11,
                    fence_params={"kind": "diamond", "cell": 16, "wire": 2, "rotation": 4.0,
                                  "phase": [3.0, 5.0], "jitter": 0.15, "wave": 1.0, "seed": 2}),
        128, 28)
    assert gt.shape == left.shape == (128, 128)
    assert estimate_shift(canny(left), canny(right)).best_shift == 7


def test_gt_marks_fence_pixels_of_right_view():
    recipe = sample_recipe(SynthConfig(image_size=64), np.random.default_rng(3), [], [])
    left, right, gt = render_scene(recipe, 64, 28)
    assert 0 < gt.sum() < gt.size
    assert set(np.unique(gt)) <= {0, 1}


def test_augment_identity_and_jitter():
    img = np.random.default_rng(2).integers(0, 256, (17, 19), dtype=np.uint8)
    np.testing.assert_array_equal(augment(img), img)
    flat = np.full((5, 5), 100, np.uint8)
    np.testing.assert_array_equal(augment(flat, color_jitter=(20, 1.0)), 120)
    np.testing.assert_array_equal(augment(flat, color_jitter=(0, 2.0)), 72)
    np.testing.assert_array_equal(augment(img, crop=(2, 3, 4, 5)), img[2:6, 3:8])
    with pytest.raises(SynthError):
        augment(img, crop=(10, 10, 10, 10))


def test_augment_rotation_matches_rot90():
    img = np.random.default_rng(3).integers(0, 256, (15, 15), dtype=np.uint8)
    out = augment(img, affine=(90.0, 1.0, 0.0, 0.0)).astype(int)
    assert np.abs(out - np.rot90(img).astype(int)).max() <= 1


def test_salt_pepper():
    m = (np.random.default_rng(4).random((50, 50)) < 0.2).astype(np.uint8)
    np.testing.assert_array_equal(salt_pepper(m, 0.0, 1), m)
    np.testing.assert_array_equal(salt_pepper(m, 0.1, 9), salt_pepper(m, 0.1, 9))
    big = np.zeros((200, 200), np.uint8)
    flips = salt_pepper(big, 0.05, 3).sum()
    n, p = big.size, 0.05
    assert abs(flips - n * p) <= 3 * np.sqrt(n * p * (1 - p))
    with pytest.raises(SynthError):
        salt_pepper(m, 0.6, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampled_recipes_respect_parallax_order(seed):
    cfg = SynthConfig(image_size=64)
    r = sample_recipe(cfg, np.random.default_rng(seed), [], [])
    assert cfg.fg_shift_min <= r.fg_shift <= cfg.fg_shift_max
    assert 0 <= r.bg_shift < r.fg_shift
    assert 0 <= r.noise_p <= cfg.noise_p_max


def test_config_file(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("n_train = 3\nimage_size = 48  # small\nfence_jitter = 0.2\n")
    cfg = SynthConfig.from_file(p)
    assert cfg.n_train == 3 and cfg.image_size == 48 and cfg.fence_jitter == 0.2
    p.write_text("n_trian = 3\n")
    with pytest.raises(SynthError):
        SynthConfig.from_file(p)
    with pytest.raises(SynthError):
        SynthConfig(fg_shift_min=5, fg_shift_max=4)


def _digest(root):
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_generate_dataset(tmp_path):
    cfg = SynthConfig(n_train=4, n_test=1, image_size=48, seed=42, fg_shift_max=10)
    m = generate_dataset(cfg, tmp_path / "a")
    assert m.counts == {"train": 4, "test": 1}
    assert len([p for p in (tmp_path / "a").rglob("*.png")]) == 20
    m.validate()
    again = DatasetManifest.load(tmp_path / "a" / "manifest.jsonl")
    assert again.records == m.records
    for rec in m.records:
        gt = load_mask(m.path(rec, "gt_mask_path"))
        right = load_image(m.path(rec, "right_path"))
        assert gt.sum() > 0 and right.shape == gt.shape == (48, 48)
    generate_dataset(cfg, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    generate_dataset(cfg, tmp_path / "c", threads=2)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "c")


def test_manifest_validation_catches_missing_file(tmp_path):
    cfg = SynthConfig(n_train=1, n_test=0, image_size=40, fg_shift_max=8)
    m = generate_dataset(cfg, tmp_path)
    (tmp_path / m.records[0]["fm_path"]).unlink()
    with pytest.raises(SynthError):
        m.validate()
