"""Benchmark harness for editing implicit-feedback recommenders."""

from .backbones import (
    AdamState,
    EmbeddingTable,
    ModelState,
    TrainConfig,
    init_embeddings,
    lightgcn_propagate,
    load_checkpoint,
    save_checkpoint,
    score,
    train_backbone,
)
from .bench import AggregateReport, ExperimentConfig, emit_report, run_experiment
from .data import (
    Dataset,
    EditingSplit,
    RecSnapshot,
    TrainTestSplit,
    apply_k_core,
    build_editing_split,
    load_dataset,
    snapshot_topk,
    split_train_test,
)
from .editing import EditorConfig, EditOutcome, run_edit
from .metrics import (
    MetricReport,
    editing_accuracy,
    editing_collaboration,
    editing_prudence,
    editing_score,
    full_report,
    ndcg_at_k,
    recall_at_k,
)
from .synthetic import SyntheticSpec, generate, planted_auc

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AggregateReport", "Dataset", "EditOutcome", "EditingSplit",
    "EditorConfig", "EmbeddingTable", "ExperimentConfig", "MetricReport",
    "ModelState", "RecSnapshot", "SyntheticSpec", "TrainConfig",
    "TrainTestSplit", "apply_k_core", "build_editing_split",
    "editing_accuracy", "editing_collaboration", "editing_prudence",
    "editing_score", "emit_report", "full_report", "generate",
    "init_embeddings", "lightgcn_propagate", "load_checkpoint", "load_dataset",
    "ndcg_at_k", "planted_auc", "recall_at_k", "run_edit", "run_experiment",
    "save_checkpoint", "score", "snapshot_topk", "split_train_test",
    "train_backbone",
]
