"""Policy networks: transformer encoder plus GRU / GRU-with-attention variants.

Each variant maps a sequence of candidate feature vectors (with their class
ids) to one keep/discard logit pair per candidate and a single state value.
Forward passes build numkit tapes so policy updates and gradient checks run
through the same code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .errors import ConfigError, DimensionError, ValidationError
from .numkit import Matrix, RngStream, Tensor

VARIANTS = ("transformer", "gru", "gru-attn")


@dataclass
class ControllerConfig:
    input_dim: int
    class_count: int
    variant: str = "transformer"
    model_dim: int = 64
    head_count: int = 2
    key_dim: int = 32
    value_dim: int = 32
    encoder_layers: int = 2
    ffn_hidden_dim: int = 128
    class_embedding_dim: int = 64
    init_scale: float = 1.0
    use_positions: bool = True
    use_layer_norm: bool = True
    per_class_sequences: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown controller variant {self.variant!r}")
        # 0 is the "derive from the task" sentinel used by experiment configs.
        if self.input_dim < 0 or self.class_count < 0:
            raise ConfigError("input_dim and class_count must be positive")
        if self.head_count < 1 or self.encoder_layers < 1:
            raise ConfigError("head count and encoder layer count must be >= 1")
        if self.model_dim != self.head_count * self.value_dim:
            raise ConfigError(
                f"model_dim ({self.model_dim}) must equal head_count*value_dim "
                f"({self.head_count}*{self.value_dim})"
            )
        if self.class_embedding_dim != self.model_dim:
            raise ConfigError(
                "class embeddings are added to the projected input, so "
                f"class_embedding_dim ({self.class_embedding_dim}) must equal "
                f"model_dim ({self.model_dim})"
            )
        if self.ffn_hidden_dim <= 0 or self.key_dim <= 0 or self.value_dim <= 0:
            raise ConfigError("hidden dimensions must be positive")


@dataclass
class ControllerParams:
    """All learnable weights of one controller plus its configuration."""

    config: ControllerConfig
    tensors: dict[str, Tensor]

    def param_list(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grads(self) -> None:
        nk.zero_grads(self.tensors.values())

    def copy(self) -> "ControllerParams":
        clone = {name: nk.parameter(t.value, name) for name, t in self.tensors.items()}
        return ControllerParams(replace(self.config), clone)


@dataclass
class PolicyOutput:
    """Per-candidate action logits, the state value, and the live tape nodes."""

    logits: Matrix
    value: float
    logits_node: Tensor
    value_node: Tensor
    attention_weights: list[Matrix] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def positional_encoding(length: int, dim: int) -> Matrix:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/dim)), odd columns cos."""
    if dim % 2 != 0:
        raise ConfigError(f"positional encoding needs an even dimension, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = pos / rates
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def self_attention(q, k, v, key_dim: int, return_weights: bool = False):
    """softmax(q k^T / sqrt(key_dim)) v with the scaling applied to scores."""
    q, k, v = nk.constant(q), nk.constant(k), nk.constant(v)
    if q.value.shape[1] != key_dim or k.value.shape[1] != key_dim:
        raise DimensionError(
            f"query/key width must equal key_dim={key_dim}, got {q.value.shape} / {k.value.shape}"
        )
    if k.value.shape[0] != v.value.shape[0]:
        raise DimensionError(f"key rows {k.value.shape[0]} != value rows {v.value.shape[0]}")
    scores = nk.t_scale(nk.t_matmul(q, nk.t_transpose(k)), 1.0 / math.sqrt(key_dim))
    weights = nk.t_softmax_rows(scores)
    out = nk.t_matmul(weights, v)
    if return_weights:
        return out, weights.value.copy()
    return out


def multi_head(x, head_params: Sequence[tuple], w_out, return_weights: bool = False):
    """Concatenate per-head attention outputs and project with w_out."""
    x = nk.constant(x)
    w_out = nk.constant(w_out)
    outs, maps = [], []
    for wq, wk, wv in head_params:
        wq, wk, wv = nk.constant(wq), nk.constant(wk), nk.constant(wv)
        if x.value.shape[1] != wq.value.shape[0]:
            raise DimensionError(
                f"input width {x.value.shape[1]} does not match projection rows {wq.value.shape[0]}"
            )
        head, w = self_attention(
            nk.t_matmul(x, wq), nk.t_matmul(x, wk), nk.t_matmul(x, wv),
            key_dim=wq.value.shape[1], return_weights=True,
        )
        outs.append(head)
        maps.append(w)
    combined = nk.t_matmul(nk.t_concat_cols(outs), w_out)
    if return_weights:
        return combined, maps
    return combined


def feed_forward(x, w1, b1, w2, b2):
    """max(0, x w1 + b1) w2 + b2, row-wise."""
    x = nk.constant(x)
    hidden = nk.t_relu(nk.t_add(nk.t_matmul(x, w1), nk.constant(b1)))
    return nk.t_add(nk.t_matmul(hidden, w2), nk.constant(b2))


def gru_cell(x, h_prev, p: dict[str, Tensor]):
    """One GRU step: h = (1-z)*h_prev + z*h_cand.

    With a large negative update-gate bias z saturates to 0 and the hidden
    state keeps its previous value.
    """
    x, h_prev = nk.constant(x), nk.constant(h_prev)
    z = nk.t_sigmoid(nk.t_add(nk.t_add(nk.t_matmul(x, p["wxz"]), nk.t_matmul(h_prev, p["whz"])), p["bz"]))
    r = nk.t_sigmoid(nk.t_add(nk.t_add(nk.t_matmul(x, p["wxr"]), nk.t_matmul(h_prev, p["whr"])), p["br"]))
    cand = nk.t_tanh(
        nk.t_add(nk.t_add(nk.t_matmul(x, p["wxh"]), nk.t_matmul(nk.t_mul(r, h_prev), p["whh"])), p["bh"])
    )
    one = nk.constant(np.ones_like(z.value))
    return nk.t_add(nk.t_mul(nk.t_sub(one, z), h_prev), nk.t_mul(z, cand))


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------


def _uniform(gen, rows: int, cols: int, scale: float) -> Matrix:
    bound = scale / math.sqrt(rows)
    return gen.uniform(-bound, bound, size=(rows, cols))


def init_controller(cfg: ControllerConfig, rng: RngStream) -> ControllerParams:
    """Fresh parameters; heads start at zero so the initial policy is uniform."""
    if cfg.input_dim == 0 or cfg.class_count == 0:
        raise ConfigError("controller config still has unresolved input_dim/class_count")
    gen = rng.generator()
    s = cfg.init_scale
    m = cfg.model_dim
    t: dict[str, Matrix] = {}
    t["input_proj.w"] = _uniform(gen, cfg.input_dim, m, s)
    t["input_proj.b"] = np.zeros((1, m))
    t["class_emb"] = _uniform(gen, cfg.class_count, m, s)
    if cfg.variant == "transformer":
        for layer in range(cfg.encoder_layers):
            for head in range(cfg.head_count):
                t[f"enc{layer}.head{head}.wq"] = _uniform(gen, m, cfg.key_dim, s)
                t[f"enc{layer}.head{head}.wk"] = _uniform(gen, m, cfg.key_dim, s)
                t[f"enc{layer}.head{head}.wv"] = _uniform(gen, m, cfg.value_dim, s)
            t[f"enc{layer}.wo"] = _uniform(gen, cfg.head_count * cfg.value_dim, m, s)
            t[f"enc{layer}.ln1.g"] = np.ones((1, m))
            t[f"enc{layer}.ln1.b"] = np.zeros((1, m))
            t[f"enc{layer}.ffn.w1"] = _uniform(gen, m, cfg.ffn_hidden_dim, s)
            t[f"enc{layer}.ffn.b1"] = np.zeros((1, cfg.ffn_hidden_dim))
            t[f"enc{layer}.ffn.w2"] = _uniform(gen, cfg.ffn_hidden_dim, m, s)
            t[f"enc{layer}.ffn.b2"] = np.zeros((1, m))
            t[f"enc{layer}.ln2.g"] = np.ones((1, m))
            t[f"enc{layer}.ln2.b"] = np.zeros((1, m))
    else:
        for gate in ("z", "r", "h"):
            t[f"gru.wx{gate}"] = _uniform(gen, m, m, s)
            t[f"gru.wh{gate}"] = _uniform(gen, m, m, s)
            t[f"gru.b{gate}"] = np.zeros((1, m))
        if cfg.variant == "gru-attn":
            t["attn.w"] = _uniform(gen, m, m, s)
            t["attn.b"] = np.zeros((1, m))
            t["attn.v"] = _uniform(gen, m, 1, s)
    # Zero heads: initial keep probability is exactly 0.5 and V is 0.
    t["policy.w"] = np.zeros((m, 2))
    t["policy.b"] = np.zeros((1, 2))
    t["value.w"] = np.zeros((m, 1))
    t["value.b"] = np.zeros((1, 1))
    tensors = {name: nk.parameter(v, name) for name, v in t.items()}
    return ControllerParams(cfg, tensors)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _check_sequence(cfg: ControllerConfig, sequence, classes):
    seq = nk.as_matrix(sequence)
    cls = np.asarray(classes, dtype=np.int64)
    if seq.shape[0] != cls.shape[0]:
        raise DimensionError(f"{seq.shape[0]} sequence rows but {cls.shape[0]} class ids")
    if seq.shape[1] != cfg.input_dim:
        raise DimensionError(f"sequence width {seq.shape[1]} != input_dim {cfg.input_dim}")
    if cls.size and (cls.min() < 0 or cls.max() >= cfg.class_count):
        raise ValidationError(f"class id out of range [0, {cfg.class_count})")
    return seq, cls


def _embed(params: ControllerParams, seq: Matrix, cls: np.ndarray, use_positions: bool) -> Tensor:
    cfg = params.config
    t = params.tensors
    h = nk.t_add(nk.t_matmul(nk.constant(seq), t["input_proj.w"]), t["input_proj.b"])
    h = nk.t_add(h, nk.t_gather_rows(t["class_emb"], cls))
    if use_positions:
        h = nk.t_add(h, nk.constant(positional_encoding(seq.shape[0], cfg.model_dim)))
    return h


def _heads_output(params: ControllerParams, h: Tensor) -> tuple[Tensor, Tensor]:
    t = params.tensors
    logits = nk.t_add(nk.t_matmul(h, t["policy.w"]), t["policy.b"])
    pooled = nk.t_mean_over_rows(h)
    value = nk.t_add(nk.t_matmul(pooled, t["value.w"]), t["value.b"])
    return logits, value


def encoder_forward(
    sequence,
    classes,
    params: ControllerParams,
    use_positions: bool | None = None,
) -> PolicyOutput:
    """Transformer encoder: projection + class embedding (+ positions), then
    encoder_layers x [multi-head attention, add&norm, feed-forward, add&norm],
    a per-position linear policy head, and a value head over mean-pooled
    hidden states."""
    cfg = params.config
    seq, cls = _check_sequence(cfg, sequence, classes)
    if use_positions is None:
        use_positions = cfg.use_positions
    t = params.tensors
    h = _embed(params, seq, cls, use_positions)
    attn_maps: list[Matrix] = []
    for layer in range(cfg.encoder_layers):
        heads = [
            (t[f"enc{layer}.head{j}.wq"], t[f"enc{layer}.head{j}.wk"], t[f"enc{layer}.head{j}.wv"])
            for j in range(cfg.head_count)
        ]
        attended, maps = multi_head(h, heads, t[f"enc{layer}.wo"], return_weights=True)
        attn_maps.extend(maps)
        h = nk.t_add(h, attended)
        if cfg.use_layer_norm:
            h = nk.t_layer_norm_rows(h, t[f"enc{layer}.ln1.g"], t[f"enc{layer}.ln1.b"])
        ff = feed_forward(
            h, t[f"enc{layer}.ffn.w1"], t[f"enc{layer}.ffn.b1"],
            t[f"enc{layer}.ffn.w2"], t[f"enc{layer}.ffn.b2"],
        )
        h = nk.t_add(h, ff)
        if cfg.use_layer_norm:
            h = nk.t_layer_norm_rows(h, t[f"enc{layer}.ln2.g"], t[f"enc{layer}.ln2.b"])
    logits, value = _heads_output(params, h)
    nk.check_finite(logits.value, "encoder logits")
    return PolicyOutput(logits.value.copy(), value.item(), logits, value, attn_maps)


def gru_forward(
    sequence,
    classes,
    params: ControllerParams,
    attention: bool | None = None,
    use_positions: bool | None = None,
) -> PolicyOutput:
    """GRU scan over the sequence; per-position hidden states feed the policy
    head.  The value head reads an additive-attention pooling of the hidden
    states when attention is on, otherwise the final hidden state."""
    cfg = params.config
    seq, cls = _check_sequence(cfg, sequence, classes)
    if attention is None:
        attention = cfg.variant == "gru-attn"
    if use_positions is None:
        use_positions = cfg.use_positions
    t = params.tensors
    x = _embed(params, seq, cls, use_positions)
    # Input-side gate projections for the whole sequence at once; the scan
    # only adds the hidden-side terms.
    xz = nk.t_add(nk.t_matmul(x, t["gru.wxz"]), t["gru.bz"])
    xr = nk.t_add(nk.t_matmul(x, t["gru.wxr"]), t["gru.br"])
    xh = nk.t_add(nk.t_matmul(x, t["gru.wxh"]), t["gru.bh"])
    h = nk.constant(np.zeros((1, cfg.model_dim)))
    hiddens: list[Tensor] = []
    one = nk.constant(np.ones((1, cfg.model_dim)))
    for i in range(seq.shape[0]):
        z = nk.t_sigmoid(nk.t_add(nk.t_row(xz, i), nk.t_matmul(h, t["gru.whz"])))
        r = nk.t_sigmoid(nk.t_add(nk.t_row(xr, i), nk.t_matmul(h, t["gru.whr"])))
        cand = nk.t_tanh(nk.t_add(nk.t_row(xh, i), nk.t_matmul(nk.t_mul(r, h), t["gru.whh"])))
        h = nk.t_add(nk.t_mul(nk.t_sub(one, z), h), nk.t_mul(z, cand))
        hiddens.append(h)
    stacked = nk.t_concat_rows(hiddens)
    logits = nk.t_add(nk.t_matmul(stacked, t["policy.w"]), t["policy.b"])
    attn_maps: list[Matrix] = []
    if attention:
        scores = nk.t_matmul(nk.t_tanh(nk.t_add(nk.t_matmul(stacked, t["attn.w"]), t["attn.b"])), t["attn.v"])
        weights = nk.t_softmax_rows(nk.t_transpose(scores))
        attn_maps.append(weights.value.copy())
        pooled = nk.t_matmul(weights, stacked)
    else:
        pooled = hiddens[-1]
    value = nk.t_add(nk.t_matmul(pooled, t["value.w"]), t["value.b"])
    nk.check_finite(logits.value, "gru logits")
    return PolicyOutput(logits.value.copy(), value.item(), logits, value, attn_maps)


def forward(
    params: ControllerParams,
    sequence,
    classes,
    use_positions: bool | None = None,
) -> PolicyOutput:
    """Dispatch on the configured variant."""
    cfg = params.config
    if not cfg.per_class_sequences:
        return _forward_single(params, sequence, classes, use_positions)
    return _forward_per_class(params, sequence, classes, use_positions)


def _forward_single(params, sequence, classes, use_positions):
    if params.config.variant == "transformer":
        return encoder_forward(sequence, classes, params, use_positions)
    return gru_forward(sequence, classes, params, use_positions=use_positions)


def _forward_per_class(params, sequence, classes, use_positions):
    """Run each class's candidates as its own sequence, then reassemble rows.

    The step value is the candidate-count weighted mean of per-class values.
    """
    seq, cls = _check_sequence(params.config, sequence, classes)
    order = np.argsort(cls, kind="stable")
    groups: list[tuple[np.ndarray, PolicyOutput]] = []
    for c in np.unique(cls):
        idx = order[cls[order] == c]
        groups.append((idx, _forward_single(params, seq[idx], cls[idx], use_positions)))
    total = float(seq.shape[0])
    logits_grouped = nk.t_concat_rows([out.logits_node for _, out in groups])
    grouped_order = np.concatenate([idx for idx, _ in groups])
    inverse = np.empty_like(grouped_order)
    inverse[grouped_order] = np.arange(grouped_order.size)
    logits = nk.t_permute_rows(logits_grouped, inverse)
    value = None
    for idx, out in groups:
        part = nk.t_scale(out.value_node, idx.size / total)
        value = part if value is None else nk.t_add(value, part)
    maps: list[Matrix] = []
    for _, out in groups:
        maps.extend(out.attention_weights)
    return PolicyOutput(logits.value.copy(), value.item(), logits, value, maps)


# ---------------------------------------------------------------------------
# Action sampling
# ---------------------------------------------------------------------------


def sample_actions(logits, rng, mode: str = "stochastic"):
    """Decide keep (1) or discard (0) per row.

    Stochastic mode draws from the per-row two-way softmax; greedy takes the
    argmax and resolves exact ties as discard.  Returns (actions, log_probs)
    where exp(log_probs) reproduces the sampled action's probability exactly.
    """
    if isinstance(logits, Tensor):
        logits = logits.value
    logits = nk.as_matrix(logits)
    if logits.shape[1] != 2:
        raise DimensionError(f"expected two action logits per row, got {logits.shape}")
    logp = nk.log_softmax_rows(logits)
    if mode == "stochastic":
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        keep_prob = np.exp(logp[:, 1])
        actions = (gen.random(logits.shape[0]) < keep_prob).astype(np.int64)
    elif mode == "greedy":
        actions = (logits[:, 1] > logits[:, 0]).astype(np.int64)
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    log_probs = logp[np.arange(logits.shape[0]), actions]
    return actions, log_probs


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ControllerParams, path: str | Path) -> None:
    """Serialize config + all parameter tensors; round-trips bit-exactly."""
    cfg_json = json.dumps({f.name: getattr(params.config, f.name) for f in fields(ControllerConfig)})
    arrays = {name: t.value for name, t in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __config__=np.frombuffer(cfg_json.encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> ControllerParams:
    with np.load(path) as data:
        cfg = ControllerConfig(**json.loads(bytes(data["__config__"]).decode("utf-8")))
        tensors = {
            name: nk.parameter(data[name], name)
            for name in data.files
            if name != "__config__"
        }
    return ControllerParams(cfg, tensors)
