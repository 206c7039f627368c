"""Synthetic sample selection via a policy-gradient controller.

A candidate pool of synthetic feature vectors is filtered by a transformer
(or GRU) controller trained with PPO or REINFORCE, rewarded by the validation
accuracy of a downstream classifier retrained on the expanded training set.
Handcrafted baselines and a seeded desk-scale benchmark make the comparison
reproducible end to end.
"""

from .baselines import SelectionMask, select_by_centroid_distance, select_oracle, select_random
from .controller import (
    ControllerConfig,
    ControllerParams,
    PolicyOutput,
    encoder_forward,
    feed_forward,
    forward,
    gru_forward,
    init_controller,
    load_checkpoint,
    multi_head,
    positional_encoding,
    sample_actions,
    save_checkpoint,
    self_attention,
)
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    IoError,
    NumericError,
    StateError,
    SynthselError,
    ValidationError,
)
from .evaluator import (
    ClassifierConfig,
    MetricsReport,
    TrainingCurve,
    compute_metrics,
    evaluate_selection,
    reward_from_curve,
    train_classifier,
)
from .featurestore import (
    BatchPlan,
    CandidatePool,
    ClassCentroids,
    FeatureSet,
    build_batches,
    compute_centroids,
    cosine_distance,
    load_features,
    save_features,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    TaskConfig,
    compare_methods,
    distance_histogram,
    generate_synthetic_task,
    run_ablation,
    run_experiment,
)
from .numkit import (
    Matrix,
    ParamTensor,
    RngStream,
    Tensor,
    grad_check,
    matmul,
    relu,
    softmax_rows,
)
from .policy import (
    AdamOptimizer,
    PPOConfig,
    RewardTracker,
    Trajectory,
    TrajectoryStep,
    advantage,
    ema_update,
    ppo_surrogate,
    ppo_update,
    prob_ratio,
    reinforce_loss,
    reinforce_update,
)

__version__ = "0.1.0"
