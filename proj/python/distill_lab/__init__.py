from ._distill_lab import (
    CheckpointError,
    ConfigError,
    Dataset,
    DatasetPair,
    DistillConfig,
    DistillOutcome,
    DivergenceError,
    Error,
    Network,
    TrainConfig,
    distill,
    frobenius_distance,
    init_network,
    load_dataset,
    load_network,
    lr_at,
    make_task,
    run_distill_config,
    same_parameters,
    save_dataset,
    train_teacher,
    verify_bound,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "DatasetPair",
    "DistillConfig",
    "DistillOutcome",
    "DivergenceError",
    "Error",
    "Network",
    "TrainConfig",
    "distill",
    "frobenius_distance",
    "init_network",
    "load_dataset",
    "load_network",
    "lr_at",
    "make_task",
    "run_distill_config",
    "same_parameters",
    "save_dataset",
    "train_teacher",
    "verify_bound",
]
