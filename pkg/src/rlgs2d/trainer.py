"""Desk-scale splat training backbone: per-group Adam, densification under a budget, pruning, snapshots."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics
from .splat2d import AffineView, SplatScene, rasterize, render_with_grad

log = logging.getLogger(__name__)

# optimizer group -> scene array
GROUPS = {
    "position": "positions",
    "scale": "log_scales",
    "rotation": "rotations",
    "opacity": "opacity_logits",
    "color": "colors",
}
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass(frozen=True)
class HyperParams:
    lr_position: float = 0.3
    lr_scale: float = 0.005
    lr_rotation: float = 0.02
    lr_opacity: float = 0.1
    lr_color: float = 0.02
    density_threshold: float = 1e-5
    split_factor: float = 1.6

    LR_FIELDS = ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color")
    DS_FIELDS = ("density_threshold", "split_factor")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return cls.LR_FIELDS + cls.DS_FIELDS

    def validate(self, allow_zero_lr: bool = True) -> "HyperParams":
        for name in self.LR_FIELDS:
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero_lr):
                raise ValueError(f"{name} must be positive, got {v}")
        if not self.density_threshold > 0:
            raise ValueError(f"density_threshold must be positive, got {self.density_threshold}")
        if not self.split_factor > 1:
            raise ValueError(f"split_factor must exceed 1, got {self.split_factor}")
        return self

    def vector(self, names=None) -> np.ndarray:
        return np.array([getattr(self, n) for n in (names or self.names())], dtype=np.float64)

    def with_values(self, names, values) -> "HyperParams":
        return replace(self, **{n: float(v) for n, v in zip(names, values)})

    def scaled(self, **factors: float) -> "HyperParams":
        return replace(self, **{k: getattr(self, k) * v for k, v in factors.items()})

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    total_iters: int = 2000
    densify_interval: int = 100
    densify_start: int = 200
    densify_end: int | None = None  # defaults to 0.6 * total_iters
    prune_opacity: float = 0.005
    budget: int = 2000
    lr_position_final: float = 0.003
    seed: int = 0
    size_threshold: float = 0.01  # fraction of canvas extent
    init_grid: int = 16
    log_interval: int = 50

    def __post_init__(self):
        if self.densify_end is None:
            self.densify_end = int(0.6 * self.total_iters)

    def validate(self) -> "TrainConfig":
        if self.total_iters < 0:
            raise ValueError("total_iters must be non-negative")
        if self.total_iters > 0 and not 0 < self.densify_start < self.densify_end <= self.total_iters:
            raise ValueError(
                f"need 0 < densify_start < densify_end <= total_iters, got "
                f"{self.densify_start}, {self.densify_end}, {self.total_iters}"
            )
        if not 0 < self.prune_opacity < 1:
            raise ValueError("prune_opacity must lie in (0, 1)")
        if self.budget < 1 or self.densify_interval < 1 or self.log_interval < 1:
            raise ValueError("budget, densify_interval and log_interval must be positive")
        return self

    def is_densify_iter(self, t: int) -> bool:
        return self.densify_start <= t <= self.densify_end and t % self.densify_interval == 0


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    steps: dict[str, int]
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_scene(cls, scene: SplatScene) -> "OptimizerState":
        m = {g: np.zeros_like(getattr(scene, f)) for g, f in GROUPS.items()}
        v = {g: np.zeros_like(getattr(scene, f)) for g, f in GROUPS.items()}
        return cls(m, v, {g: 0 for g in GROUPS})

    def take(self, index) -> None:
        for g in GROUPS:
            self.m[g] = self.m[g][index]
            self.v[g] = self.v[g][index]

    def extend(self, n: int) -> None:
        for g in GROUPS:
            pad = np.zeros((n,) + self.m[g].shape[1:])
            self.m[g] = np.concatenate([self.m[g], pad])
            self.v[g] = np.concatenate([self.v[g], pad])

    def reset_rows(self, rows) -> None:
        for g in GROUPS:
            self.m[g][rows] = 0.0
            self.v[g][rows] = 0.0

    def adam_step(self, group: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.steps[group] += 1
        k = self.steps[group]
        m, v = self.m[group], self.v[group]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**k)
        v_hat = v / (1.0 - self.beta2**k)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class ViewSampler:
    """Epoch-wise shuffled pass over a pool of view ids."""

    def __init__(self, pool):
        self.set_pool(pool)

    def set_pool(self, pool) -> None:
        self.pool = np.array(sorted(int(i) for i in pool), dtype=np.int64)
        self.order = np.zeros(0, dtype=np.int64)
        self.cursor = 0

    def next(self, rng: np.random.Generator) -> int:
        if len(self.pool) == 0:
            raise ValueError("empty training pool")
        if self.cursor >= len(self.order):
            self.order = rng.permutation(self.pool)
            self.cursor = 0
        vid = int(self.order[self.cursor])
        self.cursor += 1
        return vid


@dataclass
class TrainerState:
    scene: SplatScene
    opt: OptimizerState
    grad_accum: np.ndarray
    grad_count: np.ndarray
    t: int
    rng: np.random.Generator
    sampler: ViewSampler
    losses: list[float] = field(default_factory=list)


Snapshot = TrainerState


def snapshot(state: TrainerState) -> Snapshot:
    return copy.deepcopy(state)


def restore(snap: Snapshot) -> TrainerState:
    return copy.deepcopy(snap)


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray):
        return isinstance(b, np.ndarray) and a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return type(a) is type(b) and len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def states_equal(a: TrainerState, b: TrainerState) -> bool:
    """Field-for-field, bit-level comparison of two trainer states."""
    return (
        a.scene.equals(b.scene)
        and _same(a.opt.m, b.opt.m)
        and _same(a.opt.v, b.opt.v)
        and a.opt.steps == b.opt.steps
        and _same(a.grad_accum, b.grad_accum)
        and _same(a.grad_count, b.grad_count)
        and a.t == b.t
        and _same(a.rng.bit_generator.state, b.rng.bit_generator.state)
        and _same(a.sampler.pool, b.sampler.pool)
        and _same(a.sampler.order, b.sampler.order)
        and a.sampler.cursor == b.sampler.cursor
        and _same(a.losses, b.losses)
    )


def init_scene(height: int, width: int, cfg: TrainConfig, rng: np.random.Generator) -> SplatScene:
    """Splats on a jittered grid: small isotropic scales, mid-gray, opacity 0.1."""
    g = cfg.init_grid
    step = np.array([width / g, height / g])
    ij = np.stack(np.meshgrid(np.arange(g), np.arange(g), indexing="xy"), axis=-1).reshape(-1, 2)
    pos = (ij + 0.5) * step + rng.uniform(-0.25, 0.25, size=ij.shape) * step
    n = len(pos)
    if n > cfg.budget:
        raise ValueError(f"initial grid of {n} splats exceeds budget {cfg.budget}")
    log_scale = np.full((n, 2), np.log(0.5 * step.min()))
    opal = np.full(n, np.log(0.1 / 0.9))
    return SplatScene(pos, log_scale, np.zeros(n), np.full((n, 3), 0.5), opal, rng.uniform(0.0, 1.0, n), cfg.budget)


def position_lr_factor(t: int, total: int, final_ratio: float) -> float:
    """Log-linear decay from 1 at t=0 to ``final_ratio`` at t=total."""
    if total <= 0:
        return 1.0
    frac = min(max(t / total, 0.0), 1.0)
    return math.exp(frac * math.log(final_ratio))


def _l1_grad(target: np.ndarray):
    def loss_grad(image):
        diff = image - target
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size

    return loss_grad


class Trainer:
    """Owns the dataset views, schedule and default hyperparameters of one training run."""

    def __init__(self, train_views, test_views, cfg: TrainConfig, hp_orig: HyperParams):
        self.cfg = cfg.validate()
        self.hp_orig = hp_orig
        self.views = {v.id: v for v in train_views}
        self.test_views = list(test_views)
        if any(getattr(v, "label", "train") == "test" for v in self.views.values()):
            raise ValueError("test views may not enter the training pool")
        first = next(iter(self.views.values()))
        self.height, self.width = first.target.height, first.target.width
        self.steps_taken = 0  # compute accounting; deliberately outside snapshots

    @property
    def pool_ids(self) -> list[int]:
        return sorted(self.views)

    def new_state(self, scene: SplatScene | None = None) -> TrainerState:
        rng = np.random.default_rng(self.cfg.seed)
        if scene is None:
            scene = init_scene(self.height, self.width, self.cfg, rng)
        n = len(scene)
        return TrainerState(scene, OptimizerState.for_scene(scene), np.zeros(n), np.zeros(n), 0, rng, ViewSampler(self.pool_ids))

    def position_lr(self, hp: HyperParams, t: int) -> float:
        ratio = self.cfg.lr_position_final / self.hp_orig.lr_position
        return hp.lr_position * position_lr_factor(t, self.cfg.total_iters, ratio)

    def train_step(self, state: TrainerState, view: AffineView, hp: HyperParams) -> float:
        """One render / L1 / backprop / Adam iteration against ``view``."""
        if getattr(view, "label", "train") == "test":
            raise RuntimeError("attempted to train on a test view")
        scene, opt = state.scene, state.opt
        loss, _, grads = render_with_grad(scene, view, self.height, self.width, _l1_grad(view.target.pixels))
        lrs = {
            "position": self.position_lr(hp, state.t),
            "scale": hp.lr_scale,
            "rotation": hp.lr_rotation,
            "opacity": hp.lr_opacity,
            "color": hp.lr_color,
        }
        for group, attr in GROUPS.items():
            opt.adam_step(group, getattr(scene, attr), getattr(grads, attr), lrs[group])
        np.clip(scene.colors, 0.0, 1.0, out=scene.colors)
        state.grad_accum += np.where(grads.visible, np.linalg.norm(grads.positions, axis=1), 0.0)
        state.grad_count += grads.visible
        state.t += 1
        self.steps_taken += 1
        return loss

    def step(self, state: TrainerState, hp: HyperParams) -> float:
        view = self.views[state.sampler.next(state.rng)]
        loss = self.train_step(state, view, hp)
        state.losses.append(loss)
        return loss

    def advance(self, state: TrainerState, hp: HyperParams, n_steps: int, densify: bool = True, trace=None) -> list[float]:
        """Run ``n_steps`` scheduled iterations (densify+prune first where the schedule says so).

        When ``trace`` is a list, an evaluation row is appended at every log point.
        """
        out = []
        for _ in range(n_steps):
            if densify and self.cfg.is_densify_iter(state.t):
                densify_scene(state, hp, self.cfg, self.size_threshold)
                prune(state, self.cfg.prune_opacity)
            out.append(self.step(state, hp))
            if trace is not None and (state.t % self.cfg.log_interval == 0 or state.t == self.cfg.total_iters):
                trace.append(self.evaluate(state))
        return out

    @property
    def size_threshold(self) -> float:
        return self.cfg.size_threshold * max(self.height, self.width)

    def render(self, state: TrainerState, view: AffineView):
        return rasterize(state.scene, view, self.height, self.width)

    def mean_psnr(self, state: TrainerState, view_ids) -> float:
        return float(np.mean([metrics.psnr(self.render(state, self.views[i]), self.views[i].target) for i in view_ids]))

    def evaluate(self, state: TrainerState) -> dict:
        train = [metrics.l1(self.render(state, v), v.target) for v in self.views.values()]
        test_imgs = [(self.render(state, v), v.target) for v in self.test_views]
        return {
            "iteration": state.t,
            "train_loss": float(np.mean(train)),
            "test_psnr": float(np.mean([metrics.psnr(a, b) for a, b in test_imgs])) if test_imgs else float("nan"),
            "test_ssim": float(np.mean([metrics.ssim(a, b) for a, b in test_imgs])) if test_imgs else float("nan"),
            "splats": len(state.scene),
        }

    def run(self, hp: HyperParams | None = None, state: TrainerState | None = None, densify: bool = True):
        """Plain training loop; returns (final state, metrics trace)."""
        hp = hp or self.hp_orig
        state = state or self.new_state()
        trace = [self.evaluate(state)]
        self.advance(state, hp, self.cfg.total_iters - state.t, densify=densify, trace=trace)
        return state, trace


def densify_scene(state: TrainerState, hp: HyperParams, cfg: TrainConfig, size_threshold: float) -> int:
    """Clone small / split large high-gradient splats until the budget is reached.

    Returns the net number of splats added.  Statistics are reset afterwards.
    """
    scene, rng = state.scene, state.rng
    n0 = len(scene)
    mean_grad = np.divide(state.grad_accum, state.grad_count, out=np.zeros(n0), where=state.grad_count > 0)
    room = scene.budget - n0
    new_rows, reset_rows = [], []
    shrink = math.log(hp.split_factor)
    for i in np.flatnonzero(mean_grad > hp.density_threshold):
        if room <= 0:
            break
        s = scene.splat(i)
        cov_chol = np.linalg.cholesky(_cov(s.rotation, s.log_scale))
        if np.exp(s.log_scale).max() < size_threshold:
            pos = s.position + cov_chol @ rng.standard_normal(2)
            new_rows.append((pos, s.log_scale, s.rotation, s.color, s.opacity_logit, rng.uniform()))
        else:
            a = s.position + cov_chol @ rng.standard_normal(2)
            b = s.position + cov_chol @ rng.standard_normal(2)
            scene.positions[i] = a
            scene.log_scales[i] = s.log_scale - shrink
            reset_rows.append(i)
            new_rows.append((b, s.log_scale - shrink, s.rotation, s.color, s.opacity_logit, rng.uniform()))
        room -= 1
    if reset_rows:
        state.opt.reset_rows(np.array(reset_rows))
    if new_rows:
        cols = list(zip(*new_rows))
        scene.extend(*(np.array(c) for c in cols))
        state.opt.extend(len(new_rows))
    n = len(scene)
    state.grad_accum = np.zeros(n)
    state.grad_count = np.zeros(n)
    return n - n0


def _cov(rotation: float, log_scale: np.ndarray) -> np.ndarray:
    c, s = math.cos(rotation), math.sin(rotation)
    r = np.array([[c, -s], [s, c]])
    return r @ np.diag(np.exp(2.0 * log_scale)) @ r.T


def prune(state: TrainerState, eps: float) -> int:
    """Drop splats whose opacity fell below ``eps``."""
    opac = 1.0 / (1.0 + np.exp(-state.scene.opacity_logits))
    keep = opac >= eps
    removed = int(len(keep) - keep.sum())
    if removed:
        state.scene.take(keep)
        state.opt.take(keep)
        state.grad_accum = state.grad_accum[keep]
        state.grad_count = state.grad_count[keep]
    return removed
