"""Vertical federated learning without entity alignment, via label interpolation."""
from .augment import AugmentedLabel, GuestContribution, interpolate_batch, interpolate_label, precompute_augmented_labels
from .data import (
    EntityRegistry,
    LabelStore,
    PartitionSpec,
    RoundPlan,
    VerticalDataset,
    build_round_plan,
    intersect,
    load_csv,
    make_overlap_split,
    vertical_split,
)
from .harness import ExperimentConfig, MetricsRecord, builtin_config, run_experiment, sweep
from .nn import Activation, Mlp, MlpSpec, Parameter, adam_step, bce_with_logits, leaky_relu, mlp_init
from .protocol import FaultScript, Guest, Host, HostQueues, Mode, TrainState, evaluate, init_state, train_epoch

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "adam_step",
    "AugmentedLabel",
    "bce_with_logits",
    "build_round_plan",
    "builtin_config",
    "EntityRegistry",
    "evaluate",
    "ExperimentConfig",
    "FaultScript",
    "Guest",
    "GuestContribution",
    "Host",
    "HostQueues",
    "init_state",
    "interpolate_batch",
    "interpolate_label",
    "intersect",
    "LabelStore",
    "leaky_relu",
    "load_csv",
    "make_overlap_split",
    "MetricsRecord",
    "Mlp",
    "mlp_init",
    "MlpSpec",
    "Mode",
    "Parameter",
    "PartitionSpec",
    "precompute_augmented_labels",
    "RoundPlan",
    "run_experiment",
    "sweep",
    "train_epoch",
    "TrainState",
    "vertical_split",
    "VerticalDataset",
]
