"""Hierarchical fusion graph network for conversation emotion recognition.

The package is organized by pipeline stage: ``numerics`` (reverse-mode
autodiff substrate), ``dataio`` (datasets and synthetic generation),
``encoder`` (bidirectional GRU context encoders), ``graph`` (two-stage fusion
graph and convolutions), ``model`` (assembly, loss, checkpoints),
``training`` (loop, metrics, ablations), and ``cli``.
"""

from .dataio import (
    Conversation,
    DatasetMeta,
    GeneratorConfig,
    Utterance,
    discretize_va,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .model import (
    HfgcnConfig,
    HfgcnParams,
    ModelOutput,
    forward,
    init_params,
    load_checkpoint,
    multitask_loss,
    predict,
    save_checkpoint,
)
from .numerics import Tape, Value, backward, grad_check
from .training import (
    MetricsReport,
    TrainConfig,
    evaluate,
    export_va_projection,
    run_ablation,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Conversation",
    "DatasetMeta",
    "GeneratorConfig",
    "Utterance",
    "discretize_va",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "HfgcnConfig",
    "HfgcnParams",
    "ModelOutput",
    "forward",
    "init_params",
    "load_checkpoint",
    "multitask_loss",
    "predict",
    "save_checkpoint",
    "Tape",
    "Value",
    "backward",
    "grad_check",
    "MetricsReport",
    "TrainConfig",
    "evaluate",
    "export_va_projection",
    "run_ablation",
    "train",
    "__version__",
]
