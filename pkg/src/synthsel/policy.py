"""Policy-gradient updates: PPO with a clipped surrogate, and REINFORCE.

Per-candidate keep/discard decisions are treated as independent two-way
choices; a step's objective averages the per-candidate terms so gradient
magnitudes do not grow with pool size.  The step advantage is the
EMA-smoothed reward minus the learned state value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import controller as ctrl
from . import numkit as nk
from .errors import ConfigError, NumericError, StateError
from .numkit import Tensor


@dataclass
class PPOConfig:
    epsilon: float = 0.2
    ppo_epochs: int = 4
    learning_rate: float = 2.5e-4
    value_loss_weight: float = 0.5
    entropy_weight: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"clip epsilon must be positive, got {self.epsilon}")
        if self.ppo_epochs < 1:
            raise ConfigError(f"ppo_epochs must be >= 1, got {self.ppo_epochs}")


class RewardTracker:
    """Exponential moving average of rewards; the first update passes through.

    The recursion is alpha*previous + (1-alpha)*raw; the result is clamped to
    the running [min, max] of raw rewards, which only absorbs float rounding
    at the boundary (the exact value always lies inside).
    """

    def __init__(self, alpha: float = 0.8):
        if not (0.0 < alpha < 1.0):
            raise ConfigError(f"EMA alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha
        self.raw_history: list[float] = []
        self.smoothed_history: list[float] = []

    def update(self, raw: float) -> float:
        raw = float(raw)
        if not math.isfinite(raw):
            raise NumericError("reward must be finite")
        self.raw_history.append(raw)
        if len(self.raw_history) == 1:
            smoothed = raw
        else:
            smoothed = self.alpha * self.smoothed_history[-1] + (1.0 - self.alpha) * raw
            lo, hi = min(self.raw_history), max(self.raw_history)
            smoothed = min(max(smoothed, lo), hi)
        self.smoothed_history.append(smoothed)
        return smoothed


def ema_update(tracker: RewardTracker, raw: float) -> float:
    return tracker.update(raw)


def advantage(smoothed_reward: float, state_value: float) -> float:
    return float(smoothed_reward) - float(state_value)


def prob_ratio(new_log_prob: float, old_log_prob: float) -> float:
    """exp(new - old) at the same state-action pair; old is the collection snapshot."""
    return math.exp(float(new_log_prob) - float(old_log_prob))


def ppo_surrogate(ratio: float, adv: float, epsilon: float) -> float:
    """min(ratio*adv, clip(ratio, 1-eps, 1+eps)*adv); maximized by the update."""
    if epsilon <= 0:
        raise ConfigError(f"clip epsilon must be positive, got {epsilon}")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * adv, clipped * adv)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryStep:
    """One batch step of an episode, with everything needed to replay it."""

    batch_index: int
    candidate_ids: list[tuple[int, int]]
    features: np.ndarray
    classes: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    value: float
    raw_reward: float | None = None
    smoothed_reward: float | None = None
    adv: float | None = None
    output: ctrl.PolicyOutput | None = None

    def finish(self, raw: float, smoothed: float) -> None:
        self.raw_reward = float(raw)
        self.smoothed_reward = float(smoothed)
        self.adv = advantage(smoothed, self.value)


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)

    def validate(self) -> None:
        if not self.steps:
            raise StateError("trajectory has no steps")
        for step in self.steps:
            if step.raw_reward is None or step.smoothed_reward is None or step.adv is None:
                raise StateError(f"step {step.batch_index} was never finished with a reward")
            if len(step.actions) != len(step.log_probs):
                raise StateError(f"step {step.batch_index}: actions/log-probs length mismatch")
            if step.adv != advantage(step.smoothed_reward, step.value):
                raise StateError(f"step {step.batch_index}: stored advantage is inconsistent")

    def total_candidates(self) -> int:
        return sum(len(s.actions) for s in self.steps)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamOptimizer:
    """Adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m[:] = b1 * m + (1 - b1) * g
            v[:] = b2 * v + (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.step_count)
            v_hat = v / (1 - b2 ** self.step_count)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grads(self) -> None:
        nk.zero_grads(self.params)


def make_optimizer(params: ctrl.ControllerParams, cfg: PPOConfig) -> AdamOptimizer:
    return AdamOptimizer(params.param_list(), cfg.learning_rate,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _step_terms(logits_node: Tensor, value_node: Tensor, step: TrajectoryStep,
                cfg: PPOConfig, use_ratio: bool, epsilon: float | None):
    """Per-step (policy_sum, value_sq, entropy_sum, ratios) tape nodes."""
    rows = np.arange(len(step.actions))
    logp = nk.t_log_softmax_rows(logits_node)
    chosen = nk.t_pick(logp, rows, step.actions)
    adv_col = nk.constant(np.full((len(step.actions), 1), step.adv))
    if use_ratio:
        eps = cfg.epsilon if epsilon is None else epsilon
        ratio = nk.t_exp(nk.t_sub(chosen, nk.constant(step.log_probs.reshape(-1, 1))))
        clipped = nk.t_clip(ratio, 1.0 - eps, 1.0 + eps)
        surr = nk.t_minimum(nk.t_mul(ratio, adv_col), nk.t_mul(clipped, adv_col))
        policy_sum = nk.t_sum_all(surr)
        ratios = ratio.value[:, 0].copy()
    else:
        policy_sum = nk.t_sum_all(nk.t_mul(chosen, adv_col))
        ratios = np.ones(len(step.actions))
    diff = nk.t_sub(value_node, nk.constant([[step.smoothed_reward]]))
    value_sq = nk.t_mul(diff, diff)
    probs = nk.t_softmax_rows(logits_node)
    ent = nk.t_scale(nk.t_sum_all(nk.t_mul(probs, logp)), -1.0)
    return policy_sum, value_sq, ent, ratios


@dataclass
class EpochStats:
    mean_ratio: float
    clip_fraction: float
    value_loss: float
    policy_objective: float
    entropy: float


@dataclass
class UpdateStats:
    algorithm: str
    epochs: list[EpochStats]

    @property
    def mean_ratio(self) -> float:
        return self.epochs[-1].mean_ratio

    @property
    def clip_fraction(self) -> float:
        return self.epochs[-1].clip_fraction

    @property
    def value_loss(self) -> float:
        return self.epochs[-1].value_loss


def _episode_loss(params: ctrl.ControllerParams, trajectory: Trajectory, cfg: PPOConfig,
                  use_ratio: bool, epsilon: float | None = None,
                  reuse_outputs: bool = False) -> tuple[Tensor, EpochStats]:
    """Build the scalar loss for one pass over the trajectory.

    loss = -mean(policy term) + value_weight*mean((V - smoothed)^2)
           - entropy_weight*mean(entropy)
    where candidate terms average over all (step, candidate) pairs and the
    value term averages over steps.
    """
    total = trajectory.total_candidates()
    policy_sum = value_sum = ent_sum = None
    all_ratios = []
    for step in trajectory.steps:
        if reuse_outputs:
            if step.output is None:
                raise StateError(f"step {step.batch_index} kept no forward output")
            out = step.output
        else:
            out = ctrl.forward(params, step.features, step.classes)
        if not np.all(np.isfinite(out.logits)) or not math.isfinite(out.value):
            raise NumericError(f"non-finite controller output at step {step.batch_index}")
        p_sum, v_sq, ent, ratios = _step_terms(out.logits_node, out.value_node, step, cfg,
                                               use_ratio, epsilon)
        all_ratios.append(ratios)
        policy_sum = p_sum if policy_sum is None else nk.t_add(policy_sum, p_sum)
        value_sum = v_sq if value_sum is None else nk.t_add(value_sum, v_sq)
        ent_sum = ent if ent_sum is None else nk.t_add(ent_sum, ent)
    n_steps = len(trajectory.steps)
    loss = nk.t_scale(policy_sum, -1.0 / total)
    loss = nk.t_add(loss, nk.t_scale(value_sum, cfg.value_loss_weight / n_steps))
    loss = nk.t_add(loss, nk.t_scale(ent_sum, -cfg.entropy_weight / total))
    if not math.isfinite(loss.item()):
        raise NumericError("non-finite episode loss")
    ratios = np.concatenate(all_ratios)
    eps = cfg.epsilon if epsilon is None else epsilon
    stats = EpochStats(
        mean_ratio=float(ratios.mean()),
        clip_fraction=float(((ratios < 1.0 - eps) | (ratios > 1.0 + eps)).mean()),
        value_loss=float(value_sum.item() / n_steps),
        policy_objective=float(policy_sum.item() / total),
        entropy=float(ent_sum.item() / total),
    )
    return loss, stats


def reinforce_loss(trajectory: Trajectory) -> Tensor:
    """-mean over (step, candidate) of log-prob * advantage, from the
    forward tapes captured while the episode was collected."""
    trajectory.validate()
    total = trajectory.total_candidates()
    acc = None
    for step in trajectory.steps:
        if step.output is None:
            raise StateError(f"step {step.batch_index} kept no forward output")
        rows = np.arange(len(step.actions))
        logp = nk.t_log_softmax_rows(step.output.logits_node)
        chosen = nk.t_pick(logp, rows, step.actions)
        adv_col = nk.constant(np.full((len(step.actions), 1), step.adv))
        term = nk.t_sum_all(nk.t_mul(chosen, adv_col))
        acc = term if acc is None else nk.t_add(acc, term)
    return nk.t_scale(acc, -1.0 / total)


def ppo_update(params: ctrl.ControllerParams, trajectory: Trajectory, cfg: PPOConfig,
               optimizer: AdamOptimizer | None = None) -> UpdateStats:
    """K clipped-surrogate epochs over the trajectory; old log-probs are the
    snapshot taken at collection time."""
    trajectory.validate()
    if optimizer is None:
        optimizer = make_optimizer(params, cfg)
    epochs = []
    for _ in range(cfg.ppo_epochs):
        params.zero_grads()
        loss, stats = _episode_loss(params, trajectory, cfg, use_ratio=True)
        nk.backward(loss)
        optimizer.step()
        epochs.append(stats)
    return UpdateStats("ppo", epochs)


def reinforce_update(params: ctrl.ControllerParams, trajectory: Trajectory, cfg: PPOConfig,
                     optimizer: AdamOptimizer | None = None) -> UpdateStats:
    """Single gradient pass on the REINFORCE-with-baseline objective (same
    value and entropy terms as PPO, no ratio clipping)."""
    trajectory.validate()
    if optimizer is None:
        optimizer = make_optimizer(params, cfg)
    params.zero_grads()
    loss, stats = _episode_loss(params, trajectory, cfg, use_ratio=False, reuse_outputs=True)
    nk.backward(loss)
    optimizer.step()
    return UpdateStats("reinforce", [stats])
