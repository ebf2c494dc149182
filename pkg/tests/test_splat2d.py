import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_scene, random_view
from rlgs2d.splat2d import (
    ALPHA_MAX,
    CULL_SIGMAS,
    AffineView,
    Image,
    SceneGradients,
    Splat2D,
    SplatScene,
    alpha_at,
    covariance,
    rasterize,
    rasterize_backward,
    read_ppm,
    render_with_grad,
    write_ppm,
)


def brute_force_render(scene, view, h, w):
    """Per-pixel compositing straight from the splat definitions."""
    img = np.zeros((h, w, 3))
    order = sorted(range(len(scene)), key=lambda i: (scene.depths[i], i))
    a = view.linear
    for row in range(h):
        for col in range(w):
            trans = 1.0
            p = np.array([col + 0.5, row + 0.5])
            for i in order:
                s = scene.splat(i)
                cov = a @ covariance(s) @ a.T
                mean = a @ s.position + view.translation
                r = CULL_SIGMAS * np.sqrt(np.diag(cov))
                inside = col + 1 > mean[0] - r[0] and col < mean[0] + r[0] and row + 1 > mean[1] - r[1] and row < mean[1] + r[1]
                if not inside:
                    continue
                d = p - mean
                alpha = min(s.opacity * math.exp(-0.5 * d @ np.linalg.solve(cov, d)), ALPHA_MAX)
                img[row, col] += trans * alpha * s.color
                trans *= 1.0 - alpha
    return img


def test_covariance_trace_and_determinant():
    s = Splat2D([0, 0], [math.log(1.5), math.log(0.5)], rotation=0.7)
    cov = covariance(s)
    assert np.trace(cov) == pytest.approx(2.5, abs=1e-12)
    assert np.linalg.det(cov) == pytest.approx(0.5625, abs=1e-12)
    np.testing.assert_allclose(cov, cov.T, atol=0)


def test_alpha_at_center_and_one_sigma():
    s = Splat2D([3.0, 4.0], [0.0, math.log(2.0)], opacity_logit=0.0)
    assert alpha_at(s, [3.0, 4.0]) == pytest.approx(0.5)
    assert alpha_at(s, [3.0, 6.0]) == pytest.approx(0.5 * math.exp(-0.5))


def test_alpha_capped():
    s = Splat2D([0, 0], [0, 0], opacity_logit=20.0)
    assert alpha_at(s, [0, 0]) == ALPHA_MAX


@pytest.mark.parametrize("seed", range(3))
def test_rasterize_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, 4, extent=12.0)
    view = random_view(rng)
    np.testing.assert_allclose(rasterize(scene, view, 12, 12).pixels, brute_force_render(scene, view, 12, 12), atol=1e-12)


def test_empty_scene_renders_black():
    img = rasterize(SplatScene.empty(10), AffineView.identity(), 5, 7)
    assert img.shape == (5, 7, 3)
    assert not img.pixels.any()


def test_opaque_front_splat_hides_back():
    front = Splat2D([4, 4], [2, 2], color=[1, 0, 0], opacity_logit=30.0, depth=0.0)
    back = Splat2D([4, 4], [2, 2], color=[0, 1, 0], opacity_logit=30.0, depth=1.0)
    px = rasterize(SplatScene.from_splats([back, front]), AffineView.identity(), 8, 8).pixels[4, 4]
    # alpha is capped, so 1% of the back splat leaks through
    np.testing.assert_allclose(px, [ALPHA_MAX, ALPHA_MAX * (1 - ALPHA_MAX), 0.0], atol=1e-12)


def test_rasterize_is_deterministic():
    rng = np.random.default_rng(5)
    scene = random_scene(rng, 30)
    view = random_view(rng)
    a = rasterize(scene, view, 16, 16).pixels
    b = rasterize(scene, view, 16, 16).pixels
    assert np.array_equal(a, b)


def test_singular_view_rejected():
    with pytest.raises(ValueError):
        AffineView([[1, 2], [2, 4]], [0, 0])


def test_bad_canvas_rejected():
    with pytest.raises(ValueError):
        rasterize(SplatScene.empty(1), AffineView.identity(), 0, 4)


def _fd_check(scene, view, h, w, rng, step=1e-4):
    up = rng.normal(size=(h, w, 3))
    grads = rasterize_backward(scene, view, up)

    def f(s):
        return float(np.sum(up * rasterize(s, view, h, w).pixels))

    worst = 0.0
    for name in SceneGradients.FIELDS:
        arr, g = getattr(scene, name), getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            plus, minus = scene.copy(), scene.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            fd = (f(plus) - f(minus)) / (2 * step)
            err = abs(fd - g[idx])
            if err > 1e-6:
                worst = max(worst, err / abs(fd))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    assert _fd_check(random_scene(rng, 3), random_view(rng), 16, 16, rng) < 1e-3


def test_render_with_grad_agrees_with_separate_calls():
    rng = np.random.default_rng(1)
    scene, view = random_scene(rng, 6), random_view(rng)
    up = rng.normal(size=(16, 16, 3))
    loss, img, g = render_with_grad(scene, view, 16, 16, lambda im: (float(np.sum(up * im)), up))
    ref = rasterize_backward(scene, view, up)
    assert np.array_equal(img, rasterize(scene, view, 16, 16).pixels)
    assert loss == pytest.approx(float(np.sum(up * img)))
    for name in SceneGradients.FIELDS:
        assert np.array_equal(getattr(g, name), getattr(ref, name))


def test_visible_flags_mark_touched_splats():
    inside = Splat2D([4, 4], [0, 0])
    outside = Splat2D([100, 100], [0, 0])
    g = rasterize_backward(SplatScene.from_splats([inside, outside]), AffineView.identity(), np.ones((8, 8, 3)))
    assert g.visible.tolist() == [True, False]


def test_scene_text_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    scene = random_scene(rng, 7, budget=50)
    scene.save(tmp_path / "s.txt")
    back = SplatScene.load(tmp_path / "s.txt", budget=50)
    assert back.equals(scene)
    assert scene.dumps().splitlines()[0] == "splat2d v1 7"


def test_scene_take_and_extend():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 5, budget=10)
    first = scene.splat(0)
    scene.take(np.array([0, 2]))
    assert len(scene) == 2
    assert np.array_equal(scene.positions[0], first.position)
    scene.extend(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1), np.zeros((1, 3)), np.zeros(1), np.zeros(1))
    assert len(scene) == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_ppm_roundtrip_is_exact_on_8bit_values(h, w, seed):
    import tempfile
    from pathlib import Path

    px = np.random.default_rng(seed).integers(0, 256, (h, w, 3)) / 255.0
    with tempfile.TemporaryDirectory() as d:
        write_ppm(Path(d) / "x.ppm", Image(px))
        assert np.array_equal(read_ppm(Path(d) / "x.ppm").pixels, px)


def test_ppm_rounds_half_up(tmp_path):
    write_ppm(tmp_path / "h.ppm", np.full((1, 1, 3), 0.5 / 255.0))
    assert read_ppm(tmp_path / "h.ppm").pixels[0, 0, 0] == 1 / 255.0


def test_read_ppm_rejects_other_formats(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "x.pgm")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rendered_pixels_stay_in_unit_range(seed):
    rng = np.random.default_rng(seed)
    px = rasterize(random_scene(rng, 10), random_view(rng), 16, 16).pixels
    assert px.min() >= 0.0 and px.max() <= 1.0 + 1e-12


@pytest.mark.parametrize("raw", [b"garbage", b"P6\n4 4\n255\n\x00\x01", b"P6\n# comment only", b"P6\nx 4\n255\n"])
def test_read_ppm_rejects_malformed_files(tmp_path, raw):
    (tmp_path / "bad.ppm").write_bytes(raw)
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "bad.ppm")


def test_read_ppm_skips_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80")
    np.testing.assert_allclose(read_ppm(tmp_path / "c.ppm").pixels[0, 0], [1.0, 0.0, 128 / 255])
