import numpy as np
import pytest

from rlgs2d.dataset import DatasetConfig, random_affine, split_label, synth_dataset, warp_image
from rlgs2d.splat2d import Image, write_ppm


def small(**kw):
    return DatasetConfig(height=24, width=24, gt_splats=200, **kw)


def test_split_every_eighth_view_is_test():
    ds = synth_dataset(small(views=16), np.random.default_rng(0))
    assert [v.id for v in ds.test_views] == [0, 8]
    assert len(ds.train_views) == 14
    assert [split_label(i) for i in (0, 1, 7, 8, 16)] == ["test", "train", "train", "test", "test"]


def test_identity_views_give_identical_targets():
    ds = synth_dataset(small(views=10, identity_views=True), np.random.default_rng(1))
    first = ds.views[0].target.pixels
    assert all(np.array_equal(v.target.pixels, first) for v in ds.views)


def test_same_seed_same_dataset():
    a = synth_dataset(small(views=10), np.random.default_rng(5))
    b = synth_dataset(small(views=10), np.random.default_rng(5))
    for va, vb in zip(a.views, b.views):
        assert np.array_equal(va.target.pixels, vb.target.pixels)
        assert np.array_equal(va.linear, vb.linear)


def test_too_few_views_rejected():
    with pytest.raises(ValueError):
        synth_dataset(small(views=9), np.random.default_rng(0))


def test_random_affine_respects_jitter_bounds():
    cfg = small()
    rng = np.random.default_rng(2)
    for _ in range(200):
        lin, shift = random_affine(rng, cfg)
        u, s, vt = np.linalg.svd(lin)
        assert 0.85 - 1e-12 <= s.min() and s.max() <= 1.15 + 1e-12
        center = np.array([12.0, 12.0])
        moved = lin @ center + shift - center
        assert np.all(np.abs(moved) <= 0.10 * 24 + 1e-9)


def test_warp_identity_is_exact():
    px = np.random.default_rng(3).uniform(size=(12, 12, 3))
    out = warp_image(Image(px), np.eye(2), np.zeros(2), 12, 12)
    np.testing.assert_allclose(out.pixels, px, atol=1e-12)


def test_warp_integer_shift_moves_pixels():
    px = np.random.default_rng(4).uniform(size=(12, 12, 3))
    out = warp_image(Image(px), np.eye(2), np.array([2.0, 0.0]), 12, 12)
    np.testing.assert_allclose(out.pixels[:, 2:], px[:, :-2], atol=1e-12)
    # edge clamping repeats the border column
    np.testing.assert_allclose(out.pixels[:, 0], px[:, 0], atol=1e-12)


def test_image_source(tmp_path):
    px = np.random.default_rng(6).integers(0, 256, (24, 24, 3)) / 255.0
    write_ppm(tmp_path / "src.ppm", px)
    ds = synth_dataset(small(views=10, source_image=str(tmp_path / "src.ppm"), identity_views=True), np.random.default_rng(0))
    np.testing.assert_allclose(ds.views[3].target.pixels, px, atol=1e-12)


def test_unreadable_image_rejected(tmp_path):
    (tmp_path / "bad.ppm").write_bytes(b"garbage")
    with pytest.raises(ValueError):
        synth_dataset(small(views=10, source_image=str(tmp_path / "bad.ppm")), np.random.default_rng(0))
    with pytest.raises(ValueError):
        synth_dataset(small(views=10, source_image=str(tmp_path / "missing.ppm")), np.random.default_rng(0))
