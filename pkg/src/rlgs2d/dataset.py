"""Procedural and image-based multi-view datasets on a 2D canvas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .splat2d import AffineView, Image, SplatScene, rasterize, read_ppm

TEST_EVERY = 8


@dataclass
class DatasetConfig:
    views: int = 16
    height: int = 64
    width: int = 64
    max_rotation_deg: float = 15.0
    scale_range: tuple[float, float] = (0.85, 1.15)
    max_translation: float = 0.10  # fraction of extent
    source_image: str | None = None
    gt_splats: int = 4000
    gt_region: tuple[float, float] = (0.05, 0.95)  # fraction of extent holding splat centers
    gt_scale_range: tuple[float, float] = (0.35 / 64, 2.0 / 64)  # fraction of the shorter extent
    identity_views: bool = False


@dataclass
class Dataset:
    views: list[AffineView]
    source: Image | SplatScene | None = None
    labels: list[str] = field(default_factory=list)

    @property
    def train_views(self) -> list[AffineView]:
        return [v for v in self.views if v.label == "train"]

    @property
    def test_views(self) -> list[AffineView]:
        return [v for v in self.views if v.label == "test"]


def split_label(index: int) -> str:
    return "test" if index % TEST_EVERY == 0 else "train"


def random_affine(rng: np.random.Generator, cfg: DatasetConfig) -> tuple[np.ndarray, np.ndarray]:
    """Small rotation/scale about the canvas center plus a bounded shift."""
    ang = math.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    sx, sy = rng.uniform(*cfg.scale_range, size=2)
    shift = rng.uniform(-cfg.max_translation, cfg.max_translation, size=2) * np.array([cfg.width, cfg.height])
    c, s = math.cos(ang), math.sin(ang)
    linear = np.array([[c, -s], [s, c]]) @ np.diag([sx, sy])
    center = np.array([cfg.width / 2.0, cfg.height / 2.0])
    return linear, center - linear @ center + shift


def random_gt_scene(cfg: DatasetConfig, rng: np.random.Generator) -> SplatScene:
    n = cfg.gt_splats
    extent = np.array([cfg.width, cfg.height], dtype=np.float64)
    pos = rng.uniform(*cfg.gt_region, size=(n, 2)) * extent
    lo, hi = cfg.gt_scale_range
    log_scale = rng.uniform(math.log(lo), math.log(hi), size=(n, 2)) + math.log(min(extent))
    rot = rng.uniform(-math.pi, math.pi, n)
    color = rng.uniform(0.0, 1.0, size=(n, 3))
    opal = rng.uniform(0.5, 3.0, n)
    depth = rng.uniform(0.0, 1.0, n)
    return SplatScene(pos, log_scale, rot, color, opal, depth, budget=n)


def warp_image(src: Image, linear: np.ndarray, translation: np.ndarray, height: int, width: int) -> Image:
    """Bilinear resampling of ``src`` under the affine view map, clamping at the edges."""
    rows, cols = np.mgrid[0:height, 0:width]
    pts = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5])
    scene = np.linalg.solve(linear, pts - translation[:, None])
    coords = np.stack([scene[1] - 0.5, scene[0] - 0.5])
    out = np.empty((height, width, 3))
    for ch in range(3):
        out[..., ch] = map_coordinates(src.pixels[..., ch], coords, order=1, mode="nearest").reshape(height, width)
    return Image(np.clip(out, 0.0, 1.0))


def synth_dataset(cfg: DatasetConfig, rng: np.random.Generator) -> Dataset:
    if cfg.views < 10:
        raise ValueError(f"need at least 10 views, got {cfg.views}")
    if cfg.source_image:
        try:
            source = read_ppm(cfg.source_image)
        except (OSError, ValueError) as exc:
            raise ValueError(f"cannot read source image {cfg.source_image}: {exc}") from exc
    else:
        source = random_gt_scene(cfg, rng)
    views = []
    for i in range(cfg.views):
        if cfg.identity_views:
            linear, shift = np.eye(2), np.zeros(2)
        else:
            linear, shift = random_affine(rng, cfg)
        if isinstance(source, Image):
            target = warp_image(source, linear, shift, cfg.height, cfg.width)
        else:
            target = rasterize(source, AffineView(linear, shift), cfg.height, cfg.width)
        views.append(AffineView(linear, shift, target, id=i, label=split_label(i)))
    return Dataset(views, source, [v.label for v in views])
