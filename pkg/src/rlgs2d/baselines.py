"""Offline hyperparameter search baselines: random search and a per-dimension TPE."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .trainer import HyperParams

MIN_SPLIT_FACTOR = 1.01


@dataclass(frozen=True)
class Dim:
    name: str
    lo: float
    hi: float
    default: float
    log: bool = True

    def __post_init__(self):
        if not self.lo <= self.default <= self.hi:
            raise ValueError(f"{self.name}: default {self.default} outside [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log-scaled range needs lo > 0")

    def to_unit(self, x: float) -> float:
        return math.log(x) if self.log else float(x)

    def from_unit(self, u: float) -> float:
        if self.lo == self.hi:
            return self.lo
        return min(max(math.exp(u) if self.log else u, self.lo), self.hi)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.to_unit(self.lo), self.to_unit(self.hi)


@dataclass
class SearchSpace:
    dims: list[Dim]
    base: HyperParams | None = None

    @classmethod
    def around(cls, hp: HyperParams, factor: float = 10.0) -> "SearchSpace":
        """Log-uniform ``[default / factor, default * factor]`` for all seven hyperparameters."""
        dims = []
        for name in HyperParams.names():
            d = getattr(hp, name)
            lo, hi = d / factor, d * factor
            if name == "split_factor":
                lo = max(lo, MIN_SPLIT_FACTOR)
            dims.append(Dim(name, min(lo, d), hi, d))
        return cls(dims, hp)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def default(self) -> np.ndarray:
        return np.array([d.default for d in self.dims])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(0.0, 1.0, len(self.dims))
        out = []
        for d, ui in zip(self.dims, u):
            lo, hi = d.bounds
            out.append(d.from_unit(lo + ui * (hi - lo)))
        return np.array(out)

    def contains(self, x) -> bool:
        return all(d.lo <= v <= d.hi for d, v in zip(self.dims, x))

    def decode(self, x):
        if self.base is not None:
            return self.base.with_values(self.names, x)
        return dict(zip(self.names, (float(v) for v in x)))


@dataclass
class Trial:
    index: int
    params: np.ndarray
    objective: float
    test_psnr: float = float("nan")
    test_ssim: float = float("nan")
    seed: int = 0
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]

    def best_so_far(self) -> list[float]:
        return list(np.maximum.accumulate([t.objective for t in self.trials]))


Evaluate = Callable[[object], dict]


def _run_trial(index: int, x: np.ndarray, space: SearchSpace, evaluate: Evaluate, seed: int) -> Trial:
    start = time.perf_counter()
    out = evaluate(space.decode(x))
    return Trial(
        index,
        np.asarray(x, dtype=np.float64),
        float(out["objective"]),
        float(out.get("test_psnr", float("nan"))),
        float(out.get("test_ssim", float("nan"))),
        seed,
        time.perf_counter() - start,
        {k: v for k, v in out.items() if k not in ("objective", "test_psnr", "test_ssim")},
    )


def _best(trials: list[Trial]) -> Trial:
    finite = [t for t in trials if math.isfinite(t.objective)]
    return max(finite or trials, key=lambda t: t.objective)


def random_search(
    space: SearchSpace, n_trials: int, evaluate: Evaluate, seed: int = 0, force_default_first: bool = False
) -> SearchResult:
    """Independent log-uniform draws; each one a full training run scored by ``evaluate``."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rng = np.random.default_rng(seed)
    trials = []
    for i in range(n_trials):
        x = space.sample(rng)
        if force_default_first and i == 0:
            x = space.default()
        trials.append(_run_trial(i, x, space, evaluate, seed))
    return SearchResult(_best(trials), trials)


def _kernel_logpdf(x: np.ndarray, centers: np.ndarray, bw: float) -> np.ndarray:
    z = (x[:, None] - centers[None, :]) / bw
    return logsumexp(-0.5 * z * z, axis=1) - math.log(len(centers) * bw * math.sqrt(2.0 * math.pi))


def tpe_suggest(
    history: list[Trial],
    space: SearchSpace,
    rng: np.random.Generator,
    n_startup: int = 8,
    gamma: float = 0.25,
    n_candidates: int = 24,
) -> np.ndarray:
    """Next point to evaluate given past ``history`` (objective is maximized)."""
    # the startup draw is always consumed so the first n_startup suggestions mirror random search
    if len(history) < n_startup:
        x = space.sample(rng)
        return space.default() if not history else x
    done = [t for t in history if math.isfinite(t.objective)]
    ys = np.array([t.objective for t in done])
    n_good = int(math.ceil(gamma * len(done)))
    order = np.argsort(-ys, kind="stable")
    if n_good < 1 or len(done) - n_good < 1:
        return space.sample(rng)
    unit = np.array([[d.to_unit(v) for d, v in zip(space.dims, t.params)] for t in done])
    good, bad = unit[order[:n_good]], unit[order[n_good:]]

    cands = np.empty((n_candidates, len(space.dims)))
    score = np.zeros(n_candidates)
    for k, d in enumerate(space.dims):
        lo, hi = d.bounds
        span = hi - lo
        if span == 0:
            cands[:, k] = lo
            continue
        bw_good = max(span / math.sqrt(len(good)), 0.01 * span)
        bw_bad = max(span / math.sqrt(len(bad)), 0.01 * span)
        picks = good[rng.integers(0, len(good), n_candidates), k]
        cands[:, k] = np.clip(picks + bw_good * rng.standard_normal(n_candidates), lo, hi)
        score += _kernel_logpdf(cands[:, k], good[:, k], bw_good) - _kernel_logpdf(cands[:, k], bad[:, k], bw_bad)
    best = cands[int(np.argmax(score))]
    return np.array([d.from_unit(u) for d, u in zip(space.dims, best)])


def bo_search(
    space: SearchSpace, n_trials: int, evaluate: Evaluate, seed: int = 0, n_startup: int = 8, gamma: float = 0.25, n_candidates: int = 24
) -> SearchResult:
    """Sequential TPE: suggest, train, record."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    for i in range(n_trials):
        x = tpe_suggest(trials, space, rng, n_startup, gamma, n_candidates)
        trials.append(_run_trial(i, x, space, evaluate, seed))
    return SearchResult(_best(trials), trials)
