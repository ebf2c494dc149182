"""Online hyperparameter control by two Gaussian policies scored on simulated rollouts.

Training is folded into phases of ``K`` steps.  Each phase, the learning-rate
policy (and, in phases containing a densification event, the densification
policy) samples multiplicative adjustments of the default hyperparameters.
Every candidate is scored by training a throwaway copy of the trainer state
for ``K`` steps and measuring PSNR on held-out reward views relative to the
default configuration.  The best candidate is then applied to the real phase.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .policy import PolicyNet, PolicyRecord, sample_action
from .trainer import HyperParams, Trainer, TrainerState, snapshot, states_equal

log = logging.getLogger(__name__)

ABLATIONS = {
    "no_rllr": "w/o RLLR",
    "no_rlds": "w/o RLDS",
    "no_gru": "w/o GRU",
    "no_entropy": "w/o Entropy",
    "no_loss_input": "w/o Loss input",
    "no_reward_sampling": "w/o Reward sampling",
}
MIN_SPLIT_FACTOR = 1.01


@dataclass
class RLGSConfig:
    K: int = 20
    N_LR: int = 4
    N_DS: int = 2
    I_shuffle: int = 1000
    reward_set_len: int = 2
    beta: float = 0.01  # entropy weight
    hidden: int = 32
    policy_lr: float = 1e-4
    grad_clip: float = 2.4
    mu_base_init: float = 0.0
    log_sigma_base_init: float = math.log(0.2)
    reward_metric: str = "psnr"  # "psnr" (higher is better) or "l1" (error; sign flipped)
    no_rllr: bool = False
    no_rlds: bool = False
    no_gru: bool = False
    no_entropy: bool = False
    no_loss_input: bool = False
    no_reward_sampling: bool = False
    force_zero_action: bool = False
    pin_default: bool = False
    audit: bool = False  # also score h_orig itself every phase

    def validate(self) -> "RLGSConfig":
        if self.K < 1 or self.N_LR < 0 or self.N_DS < 0 or self.I_shuffle < 1:
            raise ValueError("K, I_shuffle must be positive and N_LR, N_DS non-negative")
        if self.reward_set_len < 1:
            raise ValueError("reward_set_len must be positive")
        if self.reward_metric not in ("psnr", "l1"):
            raise ValueError(f"unknown reward metric {self.reward_metric!r}")
        return self

    @property
    def use_lr(self) -> bool:
        return self.N_LR > 0 and not self.no_rllr

    @property
    def use_ds(self) -> bool:
        return self.N_DS > 0 and not self.no_rlds

    @property
    def active(self) -> bool:
        return self.use_lr or self.use_ds


@dataclass(frozen=True)
class PhaseState:
    prev_phase_loss: float
    progress: float

    def vector(self) -> np.ndarray:
        return np.array([self.prev_phase_loss, self.progress])


def build_state(prev_phase_loss: float, t: int, total: int, no_loss_input: bool = False) -> PhaseState:
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    progress = t / total if total else 0.0
    return PhaseState(0.0 if no_loss_input else float(prev_phase_loss), progress)


def apply_action(h_orig: HyperParams, multipliers, which: str) -> HyperParams:
    """Scale the ``lr`` (5 values) or ``ds`` (2 values) group of ``h_orig`` componentwise."""
    names = {"lr": HyperParams.LR_FIELDS, "ds": HyperParams.DS_FIELDS}.get(which)
    if names is None:
        raise ValueError(f"unknown action group {which!r}")
    m = np.asarray(multipliers, dtype=np.float64)
    if m.shape != (len(names),):
        raise ValueError(f"{which} action needs {len(names)} multipliers, got shape {m.shape}")
    h = h_orig.with_values(names, h_orig.vector(names) * m)
    if h.split_factor <= 1.0:
        log.warning("split factor %.4g <= 1 after scaling; clamped to %.2f", h.split_factor, MIN_SPLIT_FACTOR)
        h = h.with_values(["split_factor"], [MIN_SPLIT_FACTOR])
    return h


@dataclass
class ViewSplit:
    reward_views: list[int]
    training_views: list[int]
    last_shuffle_iteration: int


def maybe_reshuffle_views(
    split: ViewSplit | None,
    t: int,
    rng: np.random.Generator,
    pool,
    reward_set_len: int = 2,
    I_shuffle: int = 1000,
    withhold: bool = True,
) -> ViewSplit:
    """Redraw the reward/training partition of ``pool`` once ``I_shuffle`` iterations have passed.

    With ``withhold=False`` reward views are drawn from the pool every call and
    stay in the training set.
    """
    pool = sorted(int(i) for i in pool)
    if reward_set_len >= len(pool):
        raise ValueError(f"reward_set_len {reward_set_len} must be smaller than the pool ({len(pool)})")
    if withhold and split is not None and t - split.last_shuffle_iteration < I_shuffle:
        return split
    perm = rng.permutation(pool)
    reward = sorted(int(i) for i in perm[:reward_set_len])
    training = sorted(int(i) for i in perm[reward_set_len:]) if withhold else pool
    last = t if withhold or split is None else split.last_shuffle_iteration
    return ViewSplit(reward, training, last)


@dataclass
class TrialRecord:
    phase: int
    state: PhaseState
    action: object  # ActionSample
    hp: HyperParams
    reward: float
    psnr: float


@dataclass
class PhaseContext:
    baseline: float  # reward metric of h_orig for this phase
    reward_views: list[int]
    densify: bool


@dataclass
class RLGSResult:
    state: TrainerState
    trace: list[dict]
    phases: list[dict]
    neutral: list[bool] = field(default_factory=list)
    default_rewards: list[float] = field(default_factory=list)


class RLGS:
    """Runs a full training with phase-wise policy control of ``trainer``'s hyperparameters."""

    def __init__(self, trainer: Trainer, cfg: RLGSConfig, seed: int = 0):
        self.trainer = trainer
        self.cfg = cfg.validate()
        if trainer.cfg.total_iters % cfg.K:
            raise ValueError(f"K={cfg.K} must divide total_iters={trainer.cfg.total_iters}")
        init_seq, sample_seq = np.random.SeedSequence([seed, 7]).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(sample_seq)
        encoder = "linear" if cfg.no_gru else "gru"
        common = dict(
            hidden=cfg.hidden,
            encoder=encoder,
            mu_base=cfg.mu_base_init,
            log_sigma_base=cfg.log_sigma_base_init,
            lr=cfg.policy_lr,
            max_grad_norm=cfg.grad_clip,
            rng=init_rng,
        )
        self.pi_lr = PolicyNet(len(HyperParams.LR_FIELDS), **common)
        self.pi_ds = PolicyNet(len(HyperParams.DS_FIELDS), **common)
        self.split: ViewSplit | None = None

    @property
    def beta(self) -> float:
        return 0.0 if self.cfg.no_entropy else self.cfg.beta

    # -- reward ------------------------------------------------------------

    def reward_metric(self, state: TrainerState, view_ids) -> float:
        tr = self.trainer
        if self.cfg.reward_metric == "psnr":
            return tr.mean_psnr(state, view_ids)
        return float(np.mean([metrics.l1(tr.render(state, tr.views[i]), tr.views[i].target) for i in view_ids]))

    def _improvement(self, value: float, baseline: float) -> float:
        return value - baseline if self.cfg.reward_metric == "psnr" else baseline - value

    def simulate(self, state: TrainerState, h: HyperParams, ctx_views, do_densify: bool) -> float:
        """Metric after ``K`` steps of ``h`` on a throwaway copy of ``state`` (NaN if training diverged)."""
        sim = snapshot(state)
        losses = self.trainer.advance(sim, h, self.cfg.K, densify=do_densify)
        if not np.all(np.isfinite(losses)):
            return float("nan")
        return self.reward_metric(sim, ctx_views)

    def rollout_reward(self, state: TrainerState, h: HyperParams, ctx: PhaseContext, do_densify: bool | None = None):
        """``(R, metric)`` for candidate ``h``; ``R = -inf`` when the rollout diverges."""
        densify = ctx.densify if do_densify is None else do_densify
        value = self.simulate(state, h, ctx.reward_views, densify)
        if not math.isfinite(value):
            return -math.inf, value
        return self._improvement(value, ctx.baseline), value

    # -- phase loop ----------------------------------------------------------

    def _sample(self, mu, log_sigma):
        z = np.zeros_like(mu) if self.cfg.force_zero_action else None
        return sample_action(mu, log_sigma, self.rng, z=z)

    def _explore(self, j, state, ctx, s, policy: PolicyNet, n, which, base_hp):
        hidden_before = policy.h.copy()
        mu, log_sigma = policy.forward(s.vector())
        trials = []
        for _ in range(n):
            act = self._sample(mu, log_sigma)
            h = apply_action(base_hp, act.multipliers, which)
            reward, value = self.rollout_reward(state, h, ctx)
            trials.append(TrialRecord(j, s, act, h, reward, value))
        policy.update([PolicyRecord(s.vector(), hidden_before, t.action.z, t.reward) for t in trials], self.beta)
        return trials, mu, log_sigma

    def _select(self, trials, fallback: HyperParams, floor: float):
        if self.cfg.pin_default or not trials:
            return fallback, floor
        best = max(trials, key=lambda t: t.reward)
        if not math.isfinite(best.reward) or best.reward < floor:
            return fallback, floor
        return best.hp, best.reward

    def run_phase(self, j: int, state: TrainerState, prev_loss: float, trace: list | None = None, result: RLGSResult | None = None):
        cfg, tr = self.cfg, self.trainer
        h_orig = tr.hp_orig
        t0 = state.t
        if cfg.active:
            split = maybe_reshuffle_views(
                self.split, t0, self.rng, tr.pool_ids, cfg.reward_set_len, cfg.I_shuffle, withhold=not cfg.no_reward_sampling
            )
            if self.split is None or split.training_views != self.split.training_views:
                state.sampler.set_pool(split.training_views)
            self.split = split
        phase_start = snapshot(state)
        densify_now = any(tr.cfg.is_densify_iter(t) for t in range(t0, t0 + cfg.K))
        s = build_state(prev_loss, t0, tr.cfg.total_iters, cfg.no_loss_input)
        row = {"phase": j, "t": t0, "state_loss": s.prev_phase_loss, "state_progress": s.progress, "densify": densify_now}
        chosen, lr_trials, ds_trials = h_orig, [], []
        if cfg.active:
            baseline = self.simulate(state, h_orig, self.split.reward_views, densify_now)
            ctx = PhaseContext(baseline, self.split.reward_views, densify_now)
            row["baseline_metric"] = baseline
            row["reward_views"] = json.dumps(self.split.reward_views)
            if cfg.audit and result is not None:
                result.default_rewards.append(self.rollout_reward(state, h_orig, ctx)[0])
            floor = 0.0
            if cfg.use_lr:
                lr_trials, mu, ls = self._explore(j, state, ctx, s, self.pi_lr, cfg.N_LR, "lr", h_orig)
                chosen, floor = self._select(lr_trials, h_orig, 0.0)
                row.update(lr_mu=_js(mu), lr_sigma=_js(np.exp(ls)))
            if densify_now and cfg.use_ds:
                ds_trials, mu, ls = self._explore(j, state, ctx, s, self.pi_ds, cfg.N_DS, "ds", chosen)
                chosen, _ = self._select(ds_trials, chosen, floor)
                row.update(ds_mu=_js(mu), ds_sigma=_js(np.exp(ls)))
        if result is not None:
            result.neutral.append(states_equal(state, phase_start))
        losses = tr.advance(state, chosen, cfg.K, densify=True, trace=trace)
        row.update(
            lr_multipliers=_js([t.action.multipliers for t in lr_trials]),
            lr_rewards=_js([t.reward for t in lr_trials]),
            ds_multipliers=_js([t.action.multipliers for t in ds_trials]),
            ds_rewards=_js([t.reward for t in ds_trials]),
            chosen=json.dumps(chosen.as_dict()),
            phase_loss=float(np.mean(losses)),
            splats=len(state.scene),
        )
        return chosen, row

    def run(self, state: TrainerState | None = None) -> RLGSResult:
        tr = self.trainer
        state = state or tr.new_state()
        self.pi_lr.reset()
        self.pi_ds.reset()
        self.split = None
        result = RLGSResult(state, [tr.evaluate(state)], [])
        prev_loss = 0.0
        for j in range(tr.cfg.total_iters // self.cfg.K):
            _, row = self.run_phase(j, state, prev_loss, result.trace, result)
            prev_loss = row["phase_loss"]
            row["test_psnr"] = float(np.mean([metrics.psnr(tr.render(state, v), v.target) for v in tr.test_views]))
            result.phases.append(row)
        result.state = state
        return result


def _js(x) -> str:
    return json.dumps(np.asarray(x, dtype=np.float64).round(8).tolist())
