"""Anisotropic 2D Gaussian splats, front-to-back compositing and its analytic gradient.

Coordinates are canvas units with the x axis along image columns.  Pixel
``(row, col)`` is sampled at its center ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

ALPHA_MAX = 0.99
CULL_SIGMAS = 3.0


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class Splat2D:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: float = 0.0
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    opacity_logit: float = 0.0
    depth: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(2)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        self.rotation = float(self.rotation)
        self.opacity_logit = float(self.opacity_logit)
        self.depth = float(self.depth)

    @property
    def opacity(self) -> float:
        return float(logistic(self.opacity_logit))


def covariance(splat: Splat2D) -> np.ndarray:
    """Return ``R S S^T R^T`` with ``S = diag(exp(log_scale))``."""
    rot = rotation_matrix(splat.rotation)
    s = np.diag(np.exp(splat.log_scale))
    return rot @ s @ s.T @ rot.T


def alpha_at(splat: Splat2D, point) -> float:
    """Opacity contributed by ``splat`` at ``point`` (capped at ``ALPHA_MAX``)."""
    d = np.asarray(point, dtype=np.float64) - splat.position
    q = d @ np.linalg.solve(covariance(splat), d)
    return min(splat.opacity * math.exp(-0.5 * q), ALPHA_MAX)


@dataclass
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixels, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass
class AffineView:
    """A 2D camera: ``view_xy = linear @ scene_xy + translation``."""

    linear: np.ndarray
    translation: np.ndarray
    target: Image | None = None
    id: int = 0
    label: str = "train"  # "train" or "test"; test views never feed a loss

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64).reshape(2, 2)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if abs(np.linalg.det(self.linear)) < 1e-12:
            raise ValueError(f"view {self.id}: affine map is not invertible")

    @classmethod
    def identity(cls, target: Image | None = None, id: int = 0, label: str = "train") -> "AffineView":
        return cls(np.eye(2), np.zeros(2), target, id, label)


class SplatScene:
    """Struct-of-arrays container for a splat set with a hard size budget."""

    FIELDS = ("positions", "log_scales", "rotations", "colors", "opacity_logits", "depths")

    def __init__(self, positions, log_scales, rotations, colors, opacity_logits, depths, budget: int):
        self.positions = np.array(positions, dtype=np.float64).reshape(-1, 2)
        n = len(self.positions)
        self.log_scales = np.array(log_scales, dtype=np.float64).reshape(n, 2)
        self.rotations = np.array(rotations, dtype=np.float64).reshape(n)
        self.colors = np.array(colors, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.array(opacity_logits, dtype=np.float64).reshape(n)
        self.depths = np.array(depths, dtype=np.float64).reshape(n)
        self.budget = int(budget)
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if n > self.budget:
            raise ValueError(f"{n} splats exceed budget {self.budget}")

    @classmethod
    def empty(cls, budget: int) -> "SplatScene":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), [], np.zeros((0, 3)), [], [], budget)

    @classmethod
    def from_splats(cls, splats, budget: int | None = None) -> "SplatScene":
        splats = list(splats)
        if not splats:
            return cls.empty(budget or 1)
        return cls(
            [s.position for s in splats],
            [s.log_scale for s in splats],
            [s.rotation for s in splats],
            [s.color for s in splats],
            [s.opacity_logit for s in splats],
            [s.depth for s in splats],
            budget if budget is not None else len(splats),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def splat(self, i: int) -> Splat2D:
        return Splat2D(
            self.positions[i].copy(),
            self.log_scales[i].copy(),
            self.rotations[i],
            self.colors[i].copy(),
            self.opacity_logits[i],
            self.depths[i],
        )

    def splats(self) -> list[Splat2D]:
        return [self.splat(i) for i in range(len(self))]

    def copy(self) -> "SplatScene":
        return SplatScene(*(getattr(self, f) for f in self.FIELDS), budget=self.budget)

    def take(self, index) -> None:
        """Keep only the rows selected by ``index`` (mask or integer array)."""
        for f in self.FIELDS:
            setattr(self, f, getattr(self, f)[index])

    def extend(self, positions, log_scales, rotations, colors, opacity_logits, depths) -> None:
        new = (positions, log_scales, rotations, colors, opacity_logits, depths)
        for f, rows in zip(self.FIELDS, new):
            cur = getattr(self, f)
            setattr(self, f, np.concatenate([cur, np.asarray(rows, dtype=np.float64).reshape((-1,) + cur.shape[1:])]))
        if len(self) > self.budget:
            raise ValueError(f"{len(self)} splats exceed budget {self.budget}")

    def equals(self, other: "SplatScene") -> bool:
        return self.budget == other.budget and all(
            getattr(self, f).shape == getattr(other, f).shape
            and getattr(self, f).tobytes() == getattr(other, f).tobytes()
            for f in self.FIELDS
        )

    # text dump: "splat2d v1 <count>" then "px py ls1 ls2 rot r g b opal depth" per splat
    def dumps(self) -> str:
        lines = [f"splat2d v1 {len(self)}"]
        for i in range(len(self)):
            vals = (
                *self.positions[i],
                *self.log_scales[i],
                self.rotations[i],
                *self.colors[i],
                self.opacity_logits[i],
                self.depths[i],
            )
            lines.append(" ".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, budget: int | None = None) -> "SplatScene":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty scene dump")
        head = lines[0].split()
        if len(head) != 3 or head[0] != "splat2d" or head[1] != "v1":
            raise ValueError(f"bad scene header: {lines[0]!r}")
        count = int(head[2])
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=np.float64).reshape(-1, 10)
        if len(rows) != count:
            raise ValueError(f"header declares {count} splats, found {len(rows)}")
        budget = budget if budget is not None else max(count, 1)
        return cls(rows[:, 0:2], rows[:, 2:4], rows[:, 4], rows[:, 5:8], rows[:, 8], rows[:, 9], budget)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path, budget: int | None = None) -> "SplatScene":
        return cls.loads(Path(path).read_text(), budget)


@dataclass
class SceneGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacity_logits: np.ndarray
    # splats that touched at least one pixel of the view
    visible: np.ndarray

    FIELDS = ("positions", "log_scales", "rotations", "colors", "opacity_logits")

    @classmethod
    def zeros(cls, n: int) -> "SceneGradients":
        return cls(np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n), np.zeros((n, 3)), np.zeros(n), np.zeros(n, dtype=bool))

    def __len__(self) -> int:
        return len(self.positions)


# ---------------------------------------------------------------------------
# view-space preparation


@dataclass
class _Projected:
    order: np.ndarray
    means: np.ndarray  # view-space means (N, 2)
    conics: np.ndarray  # (a, b, c) of the inverse view covariance
    radii: np.ndarray  # half extents of the 3-sigma bounding box (N, 2)
    opacities: np.ndarray
    colors: np.ndarray
    cov: np.ndarray  # scene-space covariances (N, 2, 2)
    view_cov: np.ndarray  # (N, 2, 2)


def _project(scene: SplatScene, view: AffineView) -> _Projected:
    a = view.linear
    if abs(np.linalg.det(a)) < 1e-12:
        raise ValueError(f"view {view.id}: affine map is not invertible")
    c, s = np.cos(scene.rotations), np.sin(scene.rotations)
    s1, s2 = np.exp(2.0 * scene.log_scales[:, 0]), np.exp(2.0 * scene.log_scales[:, 1])
    cov = np.empty((len(scene), 2, 2))
    cov[:, 0, 0] = s1 * c * c + s2 * s * s
    cov[:, 1, 1] = s1 * s * s + s2 * c * c
    cov[:, 0, 1] = cov[:, 1, 0] = (s1 - s2) * c * s
    view_cov = a @ cov @ a.T
    det = view_cov[:, 0, 0] * view_cov[:, 1, 1] - view_cov[:, 0, 1] ** 2
    conics = np.stack([view_cov[:, 1, 1] / det, -view_cov[:, 0, 1] / det, view_cov[:, 0, 0] / det], axis=1)
    radii = CULL_SIGMAS * np.sqrt(np.stack([view_cov[:, 0, 0], view_cov[:, 1, 1]], axis=1))
    # ties in depth resolved by splat index
    order = np.argsort(scene.depths, kind="stable").astype(np.int64)
    return _Projected(
        order=order,
        means=scene.positions @ a.T + view.translation,
        conics=conics,
        radii=radii,
        opacities=logistic(scene.opacity_logits),
        colors=scene.colors,
        cov=cov,
        view_cov=view_cov,
    )


@numba.njit(cache=True)
def _bbox(mx, my, rx, ry, height, width):
    c0 = max(0, int(math.floor(mx - rx)))
    c1 = min(width - 1, int(math.ceil(mx + rx)) - 1)
    r0 = max(0, int(math.floor(my - ry)))
    r1 = min(height - 1, int(math.ceil(my + ry)) - 1)
    return r0, r1, c0, c1


@numba.njit(cache=True)
def _forward_kernel(order, means, conics, radii, opacities, colors, height, width, alpha_max):
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for k in range(order.shape[0]):
        i = order[k]
        mx, my = means[i, 0], means[i, 1]
        ca, cb, cc = conics[i, 0], conics[i, 1], conics[i, 2]
        r0, r1, c0, c1 = _bbox(mx, my, radii[i, 0], radii[i, 1], height, width)
        for row in range(r0, r1 + 1):
            dy = row + 0.5 - my
            for col in range(c0, c1 + 1):
                dx = col + 0.5 - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                alpha = min(opacities[i] * math.exp(-0.5 * q), alpha_max)
                w = alpha * trans[row, col]
                for ch in range(3):
                    image[row, col, ch] += colors[i, ch] * w
                trans[row, col] *= 1.0 - alpha
    return image, trans


@numba.njit(cache=True)
def _backward_kernel(order, means, conics, radii, opacities, colors, height, width, alpha_max, trans_final, upstream):
    n = means.shape[0]
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opacity = np.zeros(n)
    g_color = np.zeros((n, 3))
    visible = np.zeros(n, dtype=np.bool_)
    trans = trans_final.copy()
    behind = np.zeros((height, width, 3))
    for k in range(order.shape[0] - 1, -1, -1):
        i = order[k]
        mx, my = means[i, 0], means[i, 1]
        ca, cb, cc = conics[i, 0], conics[i, 1], conics[i, 2]
        r0, r1, c0, c1 = _bbox(mx, my, radii[i, 0], radii[i, 1], height, width)
        for row in range(r0, r1 + 1):
            dy = row + 0.5 - my
            for col in range(c0, c1 + 1):
                visible[i] = True
                dx = col + 0.5 - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                gauss = math.exp(-0.5 * q)
                raw = opacities[i] * gauss
                alpha = min(raw, alpha_max)
                t_before = trans[row, col] / (1.0 - alpha)
                w = alpha * t_before
                g_alpha = 0.0
                for ch in range(3):
                    up = upstream[row, col, ch]
                    g_color[i, ch] += up * w
                    g_alpha += up * (colors[i, ch] * t_before - behind[row, col, ch] / (1.0 - alpha))
                    behind[row, col, ch] += colors[i, ch] * w
                trans[row, col] = t_before
                if raw > alpha_max:
                    continue
                g_opacity[i] += g_alpha * gauss
                g_q = -0.5 * raw * g_alpha
                g_mean[i, 0] -= g_q * 2.0 * (ca * dx + cb * dy)
                g_mean[i, 1] -= g_q * 2.0 * (cb * dx + cc * dy)
                g_conic[i, 0] += g_q * dx * dx
                g_conic[i, 1] += g_q * 2.0 * dx * dy
                g_conic[i, 2] += g_q * dy * dy
    return g_mean, g_conic, g_opacity, g_color, visible


def _render(scene: SplatScene, view: AffineView, height: int, width: int):
    if height < 1 or width < 1:
        raise ValueError("canvas dimensions must be positive")
    proj = _project(scene, view)
    image, trans = _forward_kernel(
        proj.order, proj.means, proj.conics, proj.radii, proj.opacities, proj.colors, height, width, ALPHA_MAX
    )
    return image, trans, proj


def rasterize(scene: SplatScene, view: AffineView, height: int, width: int) -> Image:
    """Composite ``scene`` front to back (increasing depth) as seen through ``view``."""
    image, _, _ = _render(scene, view, height, width)
    return Image(image)


def _backward(scene: SplatScene, view: AffineView, proj: _Projected, trans: np.ndarray, upstream: np.ndarray) -> SceneGradients:
    height, width = trans.shape
    g_mean, g_conic, g_opacity, g_color, visible = _backward_kernel(
        proj.order, proj.means, proj.conics, proj.radii, proj.opacities, proj.colors,
        height, width, ALPHA_MAX, trans, np.ascontiguousarray(upstream, dtype=np.float64),
    )
    a = view.linear
    # conic = inv(view_cov); gradient of a symmetric inverse
    gc = np.empty((len(scene), 2, 2))
    gc[:, 0, 0] = g_conic[:, 0]
    gc[:, 1, 1] = g_conic[:, 2]
    gc[:, 0, 1] = gc[:, 1, 0] = 0.5 * g_conic[:, 1]
    inv = np.linalg.inv(proj.view_cov) if len(scene) else proj.view_cov
    g_view_cov = -inv @ gc @ inv
    g_cov = a.T @ g_view_cov @ a

    c, s = np.cos(scene.rotations), np.sin(scene.rotations)
    s1, s2 = np.exp(2.0 * scene.log_scales[:, 0]), np.exp(2.0 * scene.log_scales[:, 1])
    g00, g11 = g_cov[:, 0, 0], g_cov[:, 1, 1]
    g01 = g_cov[:, 0, 1] + g_cov[:, 1, 0]
    # cov = s1 u1 u1^T + s2 u2 u2^T with u1 = (c, s), u2 = (-s, c)
    g_ls = np.stack(
        [2.0 * s1 * (c * c * g00 + c * s * g01 + s * s * g11), 2.0 * s2 * (s * s * g00 - c * s * g01 + c * c * g11)],
        axis=1,
    )
    sin2, cos2 = 2.0 * s * c, c * c - s * s
    g_rot = (s1 - s2) * (-sin2 * g00 + cos2 * g01 + sin2 * g11)
    g_opal = g_opacity * proj.opacities * (1.0 - proj.opacities)
    return SceneGradients(g_mean @ a, g_ls, g_rot, g_color, g_opal, visible)


def rasterize_backward(scene: SplatScene, view: AffineView, upstream) -> SceneGradients:
    """Gradient of ``sum(upstream * rasterize(scene, view))`` w.r.t. every splat parameter."""
    up = upstream.pixels if isinstance(upstream, Image) else np.asarray(upstream, dtype=np.float64)
    _, trans, proj = _render(scene, view, up.shape[0], up.shape[1])
    return _backward(scene, view, proj, trans, up)


def render_with_grad(scene: SplatScene, view: AffineView, height: int, width: int, loss_grad):
    """Render, then backpropagate ``loss_grad(image) -> (loss, dloss/dimage)`` in one pass."""
    image, trans, proj = _render(scene, view, height, width)
    loss, upstream = loss_grad(image)
    return loss, image, _backward(scene, view, proj, trans, upstream)


# ---------------------------------------------------------------------------
# binary portable pixmap I/O


def write_ppm(path, image: Image | np.ndarray) -> None:
    px = image.pixels if isinstance(image, Image) else np.asarray(image)
    data = np.floor(np.clip(px, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _ppm_tokens(raw: bytes, count: int):
    tokens, pos, end = [], 0, len(raw)
    while len(tokens) < count:
        while pos < end and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise ValueError("truncated pixmap header")
            continue
        start = pos
        while pos < end and not raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= end:
            raise ValueError("truncated pixmap header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> Image:
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _ppm_tokens(raw, 4)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary P6 pixmap")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed pixmap header") from exc
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    if len(raw) - offset < w * h * 3 * (2 if maxval >= 256 else 1):
        raise ValueError(f"{path}: truncated pixel data")
    if maxval >= 256:
        data = np.frombuffer(raw, dtype=">u2", count=w * h * 3, offset=offset)
    else:
        data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=offset)
    return Image(data.reshape(h, w, 3).astype(np.float64) / maxval)
