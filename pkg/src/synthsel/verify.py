"""Gradient verification suite: every differentiable composite in the package
is checked against central differences at small shapes.

Shared by the `grad-check` CLI command and the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import controller as ctrl
from . import numkit as nk
from . import policy as pol
from .evaluator import ClassifierConfig, classifier_loss
from .numkit import RngStream, grad_check

TOLERANCE = 1e-5
EPSILON = 1e-5

_SEQ_LEN = 6
_INPUT_DIM = 8


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _small_config(variant: str) -> ctrl.ControllerConfig:
    return ctrl.ControllerConfig(
        input_dim=_INPUT_DIM, class_count=3, variant=variant,
        model_dim=8, head_count=2, key_dim=4, value_dim=4,
        encoder_layers=2, ffn_hidden_dim=16, class_embedding_dim=8,
    )


def _randomize_heads(params: ctrl.ControllerParams, gen, scale: float = 0.5) -> None:
    # Policy/value heads start at zero by design; give them mass so the
    # check exercises gradients through the whole stack.
    for name in ("policy.w", "policy.b", "value.w", "value.b"):
        t = params.tensors[name]
        t.value[:] = gen.normal(0.0, scale, size=t.value.shape)


def check_attention_layer() -> CheckResult:
    gen = RngStream(11, "controller-init").generator()
    q = nk.parameter(gen.normal(size=(4, 8)), "q")
    k = nk.parameter(gen.normal(size=(4, 8)), "k")
    v = nk.parameter(gen.normal(size=(4, 8)), "v")

    def loss():
        return nk.t_sum_all(ctrl.self_attention(q, k, v, key_dim=8))

    return CheckResult("attention layer", grad_check(loss, [q, k, v], EPSILON))


def check_multi_head() -> CheckResult:
    gen = RngStream(12, "controller-init").generator()
    x = nk.constant(gen.normal(size=(_SEQ_LEN, 8)))
    heads = []
    params = []
    for j in range(2):
        wq = nk.parameter(gen.normal(0, 0.5, size=(8, 4)), f"wq{j}")
        wk = nk.parameter(gen.normal(0, 0.5, size=(8, 4)), f"wk{j}")
        wv = nk.parameter(gen.normal(0, 0.5, size=(8, 4)), f"wv{j}")
        heads.append((wq, wk, wv))
        params.extend([wq, wk, wv])
    wo = nk.parameter(gen.normal(0, 0.5, size=(8, 8)), "wo")
    params.append(wo)

    def loss():
        return nk.t_sum_all(ctrl.multi_head(x, heads, wo))

    return CheckResult("multi-head block", grad_check(loss, params, EPSILON))


def check_feed_forward() -> CheckResult:
    gen = RngStream(13, "controller-init").generator()
    x = nk.constant(gen.normal(size=(_SEQ_LEN, 8)))
    w1 = nk.parameter(gen.normal(0, 0.5, size=(8, 16)), "w1")
    b1 = nk.parameter(gen.normal(0, 0.5, size=(1, 16)), "b1")
    w2 = nk.parameter(gen.normal(0, 0.5, size=(16, 8)), "w2")
    b2 = nk.parameter(gen.normal(0, 0.5, size=(1, 8)), "b2")
    params = [w1, b1, w2, b2]

    def loss():
        return nk.t_sum_all(ctrl.feed_forward(x, w1, b1, w2, b2))

    return CheckResult("feed-forward", grad_check(loss, params, EPSILON))


def _forward_loss(params: ctrl.ControllerParams, seq, classes, actions):
    out = ctrl.forward(params, seq, classes)
    logp = nk.t_log_softmax_rows(out.logits_node)
    chosen = nk.t_pick(logp, np.arange(len(actions)), actions)
    return nk.t_add(nk.t_sum_all(chosen), nk.t_mul(out.value_node, out.value_node))


def _check_controller(variant: str, name: str) -> CheckResult:
    # Operating point chosen for conditioning: every parameter entry carries
    # enough gradient that the relative-error denominator is meaningful.
    gen = RngStream(40, "controller-init").generator()
    params = ctrl.init_controller(_small_config(variant), RngStream(41, "controller-init"))
    _randomize_heads(params, gen)
    seq = gen.normal(size=(_SEQ_LEN, _INPUT_DIM))
    classes = np.array([0, 1, 2, 0, 1, 2])
    actions = np.array([0, 1, 0, 1, 1, 0])

    def loss():
        return _forward_loss(params, seq, classes, actions)

    return CheckResult(name, grad_check(loss, params.param_list(), EPSILON))


def check_encoder() -> CheckResult:
    return _check_controller("transformer", "encoder with policy/value heads")


def check_gru() -> CheckResult:
    return _check_controller("gru", "gru forward")


def check_gru_attn() -> CheckResult:
    return _check_controller("gru-attn", "gru forward with attention pooling")


def check_gru_cell() -> CheckResult:
    gen = RngStream(16, "controller-init").generator()
    m = 6
    p = {}
    for gate in ("z", "r", "h"):
        p[f"wx{gate}"] = nk.parameter(gen.normal(0, 0.5, size=(m, m)), f"wx{gate}")
        p[f"wh{gate}"] = nk.parameter(gen.normal(0, 0.5, size=(m, m)), f"wh{gate}")
        p[f"b{gate}"] = nk.parameter(gen.normal(0, 0.5, size=(1, m)), f"b{gate}")
    x = nk.constant(gen.normal(size=(1, m)))
    h_prev = nk.constant(gen.normal(size=(1, m)))

    def loss():
        return nk.t_sum_all(ctrl.gru_cell(x, h_prev, p))

    return CheckResult("gru cell", grad_check(loss, list(p.values()), EPSILON))


def check_softmax_regression() -> CheckResult:
    gen = RngStream(17, "classifier").generator()
    cfg = ClassifierConfig(weight_decay=1e-3)
    x = gen.normal(size=(8, 5))
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    params = {
        "w": nk.parameter(gen.normal(0, 0.5, size=(5, 3)), "w"),
        "b": nk.parameter(gen.normal(0, 0.5, size=(1, 3)), "b"),
    }

    def loss():
        return classifier_loss(params, x, y, cfg)

    return CheckResult("softmax-regression loss", grad_check(loss, list(params.values()), EPSILON))


def check_ppo_surrogate_scalar() -> CheckResult:
    # Unclipped region: gradient flows; the clipped region is checked by the
    # policy tests (analytic and numeric both vanish there).
    ratio = nk.parameter([[1.1]], "ratio")
    adv = 0.7
    eps = 0.2

    def loss():
        clipped = nk.t_clip(ratio, 1.0 - eps, 1.0 + eps)
        return nk.t_minimum(nk.t_scale(ratio, adv), nk.t_scale(clipped, adv))

    return CheckResult("ppo surrogate (scalar)", grad_check(loss, [ratio], EPSILON))


def check_ppo_objective() -> CheckResult:
    gen = RngStream(18, "controller-init").generator()
    params = ctrl.init_controller(_small_config("transformer"), RngStream(19, "controller-init"))
    _randomize_heads(params, gen)
    cfg = pol.PPOConfig(entropy_weight=0.01, value_loss_weight=0.5)
    steps = []
    for t in range(2):
        feats = gen.normal(size=(3, _INPUT_DIM))
        classes = np.array([0, 1, 2])
        out = ctrl.forward(params, feats, classes)
        actions = np.array([1, 0, 1])
        logp = nk.log_softmax_rows(out.logits)[np.arange(3), actions]
        # Spread old log-probs so ratios sit away from 1 and the clip kink.
        old = logp + gen.uniform(-0.3, 0.3, size=3)
        step = pol.TrajectoryStep(t, [(0, 0), (1, 1), (2, 2)], feats, classes,
                                  actions, old, out.value)
        step.finish(raw=0.6 + 0.1 * t, smoothed=0.6 + 0.1 * t)
        steps.append(step)
    traj = pol.Trajectory(steps)

    def loss():
        value, _ = pol._episode_loss(params, traj, cfg, use_ratio=True)
        return value

    return CheckResult("ppo objective", grad_check(loss, params.param_list(), EPSILON))


ALL_CHECKS = (
    check_attention_layer,
    check_multi_head,
    check_feed_forward,
    check_encoder,
    check_gru_cell,
    check_gru,
    check_gru_attn,
    check_softmax_regression,
    check_ppo_surrogate_scalar,
    check_ppo_objective,
)


def run_all() -> tuple[list[CheckResult], float]:
    start = time.perf_counter()
    results = [check() for check in ALL_CHECKS]
    return results, time.perf_counter() - start
