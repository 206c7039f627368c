"""Benchmark generation, the full RL selection loop, and method comparison.

One episode walks every batch of the plan once: forward the controller on the
batch, sample keep/discard actions, retrain the classifier on the original
data plus everything kept so far, and record the smoothed validation reward.
The policy updates once per episode; the delivered mask comes from a greedy
pass of the trained controller.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import controller as ctrl
from . import policy as pol
from .baselines import SelectionMask, select_by_centroid_distance, select_oracle, select_random
from .errors import ConfigError, ValidationError
from .evaluator import ClassifierConfig, MetricsReport, evaluate_selection
from .featurestore import (
    BatchPlan,
    CandidatePool,
    ClassCentroids,
    FeatureSet,
    build_batches,
    compute_centroids,
    pool_distances,
)
from .numkit import RngStream, derive_seed

CORRUPTION_MODELS = ("label-flip", "mean-shift", "noise-inflation")
ALGORITHMS = ("ppo", "reinforce")
REWARD_FREQUENCIES = ("per-batch", "per-episode")
BATCH_ORDERS = ("near-first", "far-first")

BASELINE_METHODS = ("no-augmentation", "random", "centroid-distance", "oracle")


@dataclass
class TaskConfig:
    class_count: int = 4
    feature_dim: int = 16
    train_per_class: int = 60
    val_per_class: int = 20
    test_per_class: int = 100
    class_separation: float = 2.4
    within_class_std: float = 1.0
    pool_per_class: int = 256
    corruption_rate: float = 0.5
    corruption_model: str = "noise-inflation"
    corruption_magnitude: float = 3.0
    master_seed: int = 0

    def __post_init__(self):
        for name in ("class_count", "feature_dim", "train_per_class", "val_per_class",
                     "test_per_class", "pool_per_class"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 <= self.corruption_rate <= 1.0):
            raise ConfigError(f"corruption_rate must lie in [0, 1], got {self.corruption_rate}")
        if self.corruption_model not in CORRUPTION_MODELS:
            raise ConfigError(f"unknown corruption model {self.corruption_model!r}")
        if self.class_separation < 0 or self.within_class_std <= 0:
            raise ConfigError("class_separation must be >= 0 and within_class_std > 0")


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    controller: ctrl.ControllerConfig = field(default_factory=lambda: ctrl.ControllerConfig(0, 0))
    ppo: pol.PPOConfig = field(default_factory=pol.PPOConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    batch_count: int = 8
    max_iterations: int = 30
    algorithm: str = "ppo"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    augmentation_ratio: float = 0.5
    oracle_ratio: float | None = None
    centroid_band: tuple[float, float] = (10.0, 90.0)
    reward_frequency: str = "per-batch"
    batch_order: str = "near-first"
    ema_alpha: float = 0.8

    def __post_init__(self):
        if self.batch_count < 1:
            raise ConfigError(f"batch_count must be >= 1, got {self.batch_count}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.reward_frequency not in REWARD_FREQUENCIES:
            raise ConfigError(f"unknown reward frequency {self.reward_frequency!r}")
        if self.batch_order not in BATCH_ORDERS:
            raise ConfigError(f"unknown batch order {self.batch_order!r}")
        if not self.seeds:
            raise ConfigError("seeds list must not be empty")
        self.centroid_band = tuple(self.centroid_band)

    def resolved_controller(self) -> ctrl.ControllerConfig:
        """Fill input_dim / class_count from the task when left at 0."""
        cc = self.controller
        if cc.input_dim == 0 or cc.class_count == 0:
            cc = replace(
                cc,
                input_dim=cc.input_dim or self.task.feature_dim,
                class_count=cc.class_count or self.task.class_count,
            )
        if cc.input_dim != self.task.feature_dim or cc.class_count != self.task.class_count:
            raise ConfigError(
                "controller input_dim/class_count do not match the task "
                f"({cc.input_dim}/{cc.class_count} vs {self.task.feature_dim}/{self.task.class_count})"
            )
        return cc

    def rl_method_name(self) -> str:
        return f"rl-{self.algorithm}-{self.controller.variant}"


# ---------------------------------------------------------------------------
# Config (de)serialization with strict keys
# ---------------------------------------------------------------------------

_SECTIONS = {"task": TaskConfig, "controller": ctrl.ControllerConfig,
             "ppo": pol.PPOConfig, "classifier": ClassifierConfig}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in config section {section!r}")
    return cls(**data)


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level config key {sorted(unknown)[0]!r}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["centroid_band"] = list(cfg.centroid_band)
    return d


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    return experiment_config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Synthetic task generation
# ---------------------------------------------------------------------------


def _simplex_means(k: int, dim: int, separation: float) -> np.ndarray:
    """k points in R^dim, centered, with all pairwise distances = separation."""
    if k > dim + 1:
        raise ConfigError(
            f"cannot place {k} equidistant class means in {dim} dimensions (needs k <= d+1)"
        )
    means = np.zeros((k, dim))
    if k == 1 or separation == 0.0:
        return means
    centered = np.eye(k) - 1.0 / k  # rows: simplex vertices, pairwise distance sqrt(2)
    helmert = np.zeros((k - 1, k))
    for j in range(1, k):
        helmert[j - 1, :j] = 1.0
        helmert[j - 1, j] = -j
        helmert[j - 1] /= math.sqrt(j * (j + 1))
    coords = centered @ helmert.T  # k x (k-1), distances preserved
    means[:, :k - 1] = coords * (separation / math.sqrt(2.0))
    return means


def generate_synthetic_task(
    cfg: TaskConfig, rng: RngStream | None = None
) -> tuple[FeatureSet, FeatureSet, FeatureSet, CandidatePool]:
    """Gaussian classes on a simplex plus a flagged candidate pool.

    Clean candidates follow their class Gaussian; corrupted ones follow the
    configured corruption model but keep the class label.
    """
    if cfg.corruption_model == "label-flip" and cfg.class_count < 2 and cfg.corruption_rate > 0:
        raise ConfigError("label-flip corruption needs at least two classes")
    if rng is None:
        rng = RngStream(cfg.master_seed, "data-gen")
    gen = rng.generator()
    means = _simplex_means(cfg.class_count, cfg.feature_dim, cfg.class_separation)
    sigma = cfg.within_class_std

    def draw_split(count: int, role: str) -> FeatureSet:
        feats, labels = [], []
        for c in range(cfg.class_count):
            feats.append(means[c] + sigma * gen.standard_normal((count, cfg.feature_dim)))
            labels.append(np.full(count, c))
        return FeatureSet(np.concatenate(feats), np.concatenate(labels), cfg.class_count, role)

    train = draw_split(cfg.train_per_class, "train")
    val = draw_split(cfg.val_per_class, "validation")
    test = draw_split(cfg.test_per_class, "test")

    pool_feats: dict[int, np.ndarray] = {}
    pool_flags: dict[int, np.ndarray] = {}
    for c in range(cfg.class_count):
        n = cfg.pool_per_class
        n_bad = int(round(cfg.corruption_rate * n))
        clean = means[c] + sigma * gen.standard_normal((n - n_bad, cfg.feature_dim))
        if n_bad == 0:
            bad = np.zeros((0, cfg.feature_dim))
        elif cfg.corruption_model == "label-flip":
            # Directional: class c's corrupted candidates come from class c+1,
            # so the mislabeling biases boundaries instead of averaging out.
            # magnitude scales the source cluster's std (tight clusters are
            # confidently wrong and hurt more).
            src = (c + 1) % cfg.class_count
            bad = means[src] + cfg.corruption_magnitude * sigma \
                * gen.standard_normal((n_bad, cfg.feature_dim))
        elif cfg.corruption_model == "mean-shift":
            # Directed at the next class's centroid: singly these are mildly
            # ambiguous, in volume they drag the boundary systematically.
            target = means[(c + 1) % cfg.class_count]
            gap = target - means[c]
            norm = np.linalg.norm(gap)
            direction = gap / norm if norm > 0 else np.zeros_like(gap)
            bad = means[c] + cfg.corruption_magnitude * direction \
                + sigma * gen.standard_normal((n_bad, cfg.feature_dim))
        else:  # noise-inflation
            bad = means[c] + cfg.corruption_magnitude * sigma \
                * gen.standard_normal((n_bad, cfg.feature_dim))
        feats = np.concatenate([clean, bad])
        flags = np.concatenate([np.ones(n - n_bad, dtype=bool), np.zeros(n_bad, dtype=bool)])
        perm = gen.permutation(n)
        pool_feats[c] = feats[perm]
        pool_flags[c] = flags[perm]
    pool = CandidatePool(pool_feats, pool_flags, "synthetic-benchmark")
    return train, val, test, pool


def task_checksum(train: FeatureSet, val: FeatureSet, test: FeatureSet,
                  pool: CandidatePool) -> str:
    h = hashlib.sha256()
    for fs in (train, val, test):
        h.update(fs.features.tobytes())
        h.update(fs.labels.tobytes())
    for c in pool.class_ids:
        h.update(pool.features[c].tobytes())
        if pool.clean_flags is not None:
            h.update(pool.clean_flags[c].tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# The RL experiment loop
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    algorithm: str
    variant: str
    mask: SelectionMask
    reward: float
    test_report: MetricsReport
    reward_trace: list[list[float]]
    smoothed_trace: list[list[float]]
    selected_count_trace: list[dict[int, int]]
    update_trace: list[dict[str, float]]
    keep_rate: float
    corrupted_fraction: float | None
    task_checksum: str
    first_trajectory: pol.Trajectory


def _batch_arrays(pool: CandidatePool, batch) -> tuple[np.ndarray, np.ndarray]:
    feats = np.stack([pool.features[item.class_id][item.candidate_index] for item in batch])
    classes = np.array([item.class_id for item in batch], dtype=np.int64)
    return feats, classes


def _selection_candidates(pool: CandidatePool, selection: list[tuple[int, int]]):
    return [(c, pool.features[c][i]) for c, i in selection]


def _selection_counts(selection: list[tuple[int, int]], class_count: int) -> dict[int, int]:
    counts = {c: 0 for c in range(class_count)}
    for c, _ in selection:
        counts[c] += 1
    return counts


def run_experiment(
    cfg: ExperimentConfig,
    seed: int,
    task: tuple[FeatureSet, FeatureSet, FeatureSet, CandidatePool] | None = None,
    log_path: str | Path | None = None,
) -> RunRecord:
    """Train the controller on one seed and deliver its greedy selection.

    Per iteration: reset the selection, walk the batch plan sampling actions
    and rewarding each step on the cumulative selection, then run one policy
    update (PPO epochs or a single REINFORCE pass).
    """
    base = derive_seed(cfg.task.master_seed, seed)
    if task is None:
        task = generate_synthetic_task(cfg.task, RngStream(base, "data-gen"))
    train, val, test, pool = task
    checksum = task_checksum(train, val, test, pool)
    centroids = compute_centroids(train)
    plan = build_batches(pool, centroids, cfg.batch_count,
                         farthest_first=cfg.batch_order == "far-first")
    params = ctrl.init_controller(cfg.resolved_controller(), RngStream(base, "controller-init"))
    optimizer = pol.make_optimizer(params, cfg.ppo)
    action_gen = RngStream(base, "action-sample").generator()

    def step_reward(selection: list[tuple[int, int]]) -> float:
        reward, _ = _reward_only(train, _selection_candidates(pool, selection), val,
                                 cfg.classifier, RngStream(base, "classifier"))
        return reward

    log_rows = []
    reward_trace, smoothed_trace, count_trace, update_trace = [], [], [], []
    first_trajectory: pol.Trajectory | None = None
    episode_tracker = pol.RewardTracker(cfg.ema_alpha)  # used in per-episode mode

    for iteration in range(cfg.max_iterations):
        selection: list[tuple[int, int]] = []
        steps: list[pol.TrajectoryStep] = []
        tracker = pol.RewardTracker(cfg.ema_alpha)
        for t, batch in enumerate(plan.batches):
            feats, classes = _batch_arrays(pool, batch)
            out = ctrl.forward(params, feats, classes)
            actions, log_probs = ctrl.sample_actions(out.logits, action_gen, "stochastic")
            for i in np.flatnonzero(actions):
                selection.append((batch[i].class_id, batch[i].candidate_index))
            step = pol.TrajectoryStep(
                batch_index=t,
                candidate_ids=[(b.class_id, b.candidate_index) for b in batch],
                features=feats, classes=classes,
                actions=actions, log_probs=log_probs,
                value=out.value, output=out,
            )
            if cfg.reward_frequency == "per-batch":
                raw = step_reward(selection)
                step.finish(raw, tracker.update(raw))
            steps.append(step)
        if cfg.reward_frequency == "per-episode":
            raw = step_reward(selection)
            smoothed = episode_tracker.update(raw)
            for step in steps:
                step.finish(raw, smoothed)
            tracker = episode_tracker
        trajectory = pol.Trajectory(steps)
        if first_trajectory is None:
            first_trajectory = trajectory
        if cfg.algorithm == "ppo":
            stats = pol.ppo_update(params, trajectory, cfg.ppo, optimizer)
        else:
            stats = pol.reinforce_update(params, trajectory, cfg.ppo, optimizer)
        raw_rewards = [s.raw_reward for s in steps]
        reward_trace.append(raw_rewards)
        smoothed_trace.append([s.smoothed_reward for s in steps])
        counts = _selection_counts(selection, cfg.task.class_count)
        count_trace.append(counts)
        update_trace.append({
            "mean_ratio": stats.mean_ratio,
            "clip_fraction": stats.clip_fraction,
            "value_loss": stats.value_loss,
        })
        log_rows.append({
            "iteration": iteration,
            "mean_reward": float(np.mean(raw_rewards)),
            "smoothed_reward": float(tracker.smoothed_history[-1]),
            "clip_fraction": stats.clip_fraction,
            "value_loss": stats.value_loss,
            "selected_per_class": {str(c): n for c, n in counts.items()},
        })

    # Greedy pass of the trained controller over the full plan.
    per_class: dict[int, list[int]] = {c: [] for c in pool.class_ids}
    for batch in plan.batches:
        feats, classes = _batch_arrays(pool, batch)
        out = ctrl.forward(params, feats, classes)
        actions, _ = ctrl.sample_actions(out.logits, action_gen, "greedy")
        for i in np.flatnonzero(actions):
            per_class[batch[i].class_id].append(batch[i].candidate_index)
    mask = SelectionMask(cfg.rl_method_name(), None,
                         {c: sorted(v) for c, v in per_class.items()})
    reward, test_report = evaluate_selection(
        train, mask.as_candidates(pool), val, test, cfg.classifier,
        RngStream(base, "classifier"))
    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            for row in log_rows:
                fh.write(json.dumps(row) + "\n")
    return RunRecord(
        seed=seed,
        algorithm=cfg.algorithm,
        variant=cfg.controller.variant,
        mask=mask,
        reward=reward,
        test_report=test_report,
        reward_trace=reward_trace,
        smoothed_trace=smoothed_trace,
        selected_count_trace=count_trace,
        update_trace=update_trace,
        keep_rate=mask.total_selected() / pool.size(),
        corrupted_fraction=(mask.corrupted_fraction(pool)
                            if pool.clean_flags is not None else None),
        task_checksum=checksum,
        first_trajectory=first_trajectory,
    )


def _reward_only(train, candidates, val, clf_cfg, rng):
    from .evaluator import reward_from_curve, train_classifier

    if candidates:
        extra = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for _, v in candidates])
        labels = np.array([c for c, _ in candidates], dtype=np.int64)
        expanded = FeatureSet(
            np.concatenate([train.features, extra]),
            np.concatenate([train.labels, labels]),
            train.class_count, "train",
        )
    else:
        expanded = train
    curve = train_classifier(expanded, val, clf_cfg, rng)
    return reward_from_curve(curve), curve


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


def distance_histogram(
    mask: SelectionMask,
    pool: CandidatePool,
    centroids: ClassCentroids,
    bin_count: int,
) -> list[tuple[int, float, float, int]]:
    """Per-class counts of selected candidates in equal-width distance bins.

    Bins span the full pool's [min, max] distance for that class so selected
    and pool histograms share edges; the last bin is right-inclusive (and the
    interior edges belong to the bin on their left).
    """
    if bin_count < 1:
        raise ValidationError(f"bin count must be >= 1, got {bin_count}")
    distances = pool_distances(pool, centroids)
    rows: list[tuple[int, float, float, int]] = []
    for c in pool.class_ids:
        d = distances[c]
        lo, hi = float(d.min()), float(d.max())
        width = (hi - lo) / bin_count
        counts = np.zeros(bin_count, dtype=int)
        for i in mask.per_class.get(c, []):
            if width == 0.0:
                idx = 0
            else:
                idx = min(bin_count - 1, max(0, math.ceil((d[i] - lo) / width) - 1))
            counts[idx] += 1
        for b in range(bin_count):
            rows.append((c, lo + b * width, lo + (b + 1) * width, int(counts[b])))
    return rows


def write_histogram_csv(rows, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,bin_lo,bin_hi,count\n")
        for c, lo, hi, count in rows:
            fh.write(f"{c},{lo!r},{hi!r},{count}\n")


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------

_METRIC_KEYS = ("accuracy", "auc", "sensitivity", "specificity")


@dataclass
class ExperimentReport:
    body: dict

    def canonical_json(self) -> str:
        return json.dumps(self.body, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.canonical_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentReport":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def mean_metric(self, method: str, metric: str = "accuracy") -> float:
        return self.body["methods"][method]["mean"][metric]


def _arm_entry(reward: float, report: MetricsReport, mask: SelectionMask | None) -> dict:
    entry = {"reward": reward, "metrics": report.to_json_dict()}
    if mask is None:
        entry["selected_per_class"] = {}
        entry["total_selected"] = 0
    else:
        entry["selected_per_class"] = {str(c): n for c, n in mask.counts().items()}
        entry["total_selected"] = mask.total_selected()
    return entry


def _aggregate(per_seed: list[dict]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for key in _METRIC_KEYS:
        vals = np.array([e["metrics"][key] for e in per_seed])
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def _compare_one_seed(cfg: ExperimentConfig, seed: int, histogram_bins: int) -> dict:
    base = derive_seed(cfg.task.master_seed, seed)
    task = generate_synthetic_task(cfg.task, RngStream(base, "data-gen"))
    train, val, test, pool = task
    checksum = task_checksum(*task)
    centroids = compute_centroids(train)

    def clf_rng() -> RngStream:
        return RngStream(base, "classifier")

    def evaluate(mask: SelectionMask | None) -> dict:
        candidates = mask.as_candidates(pool) if mask is not None else []
        reward, report = evaluate_selection(train, candidates, val, test,
                                            cfg.classifier, clf_rng())
        return _arm_entry(reward, report, mask)

    arms: dict[str, dict] = {}
    arm_checksums: dict[str, str] = {}
    arms["no-augmentation"] = evaluate(None)
    arm_checksums["no-augmentation"] = checksum
    random_mask = select_random(pool, centroids, cfg.augmentation_ratio,
                                RngStream(base, "baseline-random"))
    arms["random"] = evaluate(random_mask)
    arm_checksums["random"] = checksum
    centroid_mask = select_by_centroid_distance(pool, centroids, cfg.augmentation_ratio,
                                                cfg.centroid_band)
    arms["centroid-distance"] = evaluate(centroid_mask)
    arm_checksums["centroid-distance"] = checksum
    oracle_mask = select_oracle(pool, centroids, cfg.oracle_ratio)
    arms["oracle"] = evaluate(oracle_mask)
    arm_checksums["oracle"] = checksum

    record = run_experiment(cfg, seed, task=task)
    arms[cfg.rl_method_name()] = _arm_entry(record.reward, record.test_report, record.mask)
    arm_checksums[cfg.rl_method_name()] = record.task_checksum
    if len(set(arm_checksums.values())) != 1:
        raise ValidationError(f"arms saw different tasks for seed {seed}: {arm_checksums}")

    histogram = distance_histogram(record.mask, pool, centroids, histogram_bins)
    return {
        "seed": seed,
        "checksum": checksum,
        "arms": arms,
        "rl": {
            "seed": seed,
            "keep_rate": record.keep_rate,
            "corrupted_fraction": record.corrupted_fraction,
            "pool_corrupted_fraction": pool.corrupted_fraction(),
            "reward_trace": record.reward_trace,
            "smoothed_trace": record.smoothed_trace,
            "selected_count_trace": [
                {str(c): n for c, n in counts.items()} for counts in record.selected_count_trace
            ],
            "update_trace": record.update_trace,
            "histogram": [[c, lo, hi, n] for c, lo, hi, n in histogram],
        },
    }


def compare_methods(cfg: ExperimentConfig, threads: int = 1,
                    histogram_bins: int = 20) -> ExperimentReport:
    """Evaluate every arm on the same task and pool for each seed, then
    aggregate mean and (sample) standard deviation per metric per arm."""
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    if threads == 1:
        per_seed = [_compare_one_seed(cfg, s, histogram_bins) for s in cfg.seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            futures = [pool_exec.submit(_compare_one_seed, cfg, s, histogram_bins)
                       for s in cfg.seeds]
            per_seed = [f.result() for f in futures]

    method_names = list(BASELINE_METHODS) + [cfg.rl_method_name()]
    methods = {}
    for name in method_names:
        entries = [row["arms"][name] for row in per_seed]
        mean, std = _aggregate(entries)
        methods[name] = {"per_seed": entries, "mean": mean, "std": std}
    body = {
        "schema": "synthsel-report-v1",
        "config": experiment_config_to_dict(cfg),
        "seeds": list(cfg.seeds),
        "task_checksums": [row["checksum"] for row in per_seed],
        "methods": methods,
        "rl": {
            "method": cfg.rl_method_name(),
            "per_seed": [row["rl"] for row in per_seed],
        },
    }
    return ExperimentReport(body)


def run_ablation(cfg: ExperimentConfig,
                 variants: tuple[str, ...] = ctrl.VARIANTS,
                 algorithms: tuple[str, ...] = ALGORITHMS) -> dict[str, dict]:
    """Run every (controller, algorithm) combination on the same tasks/seeds."""
    tasks = {
        s: generate_synthetic_task(cfg.task, RngStream(derive_seed(cfg.task.master_seed, s),
                                                       "data-gen"))
        for s in cfg.seeds
    }
    grid: dict[str, dict] = {}
    for variant in variants:
        for algorithm in algorithms:
            combo_cfg = replace(
                cfg,
                controller=replace(cfg.controller, variant=variant),
                algorithm=algorithm,
            )
            accs, keep_rates = [], []
            for s in cfg.seeds:
                record = run_experiment(combo_cfg, s, task=tasks[s])
                accs.append(record.test_report.accuracy)
                keep_rates.append(record.keep_rate)
            grid[combo_cfg.rl_method_name()] = {
                "variant": variant,
                "algorithm": algorithm,
                "per_seed_accuracy": accs,
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
                "keep_rates": keep_rates,
            }
    return grid
