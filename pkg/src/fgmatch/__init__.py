"""Learned similarity heads over frozen image/text embeddings.

Train small matching heads (linear, MLP, or cross-attention) on top of
precomputed embedding tables with hinge triplet objectives, then measure
fine-grained mean rank and coarse retrieval recall.
"""

from .errors import (
    CheckpointError,
    DataError,
    DomainError,
    FgmatchError,
    ManifestError,
    NonFiniteGradientError,
    StoreError,
    TrainingError,
    UsageError,
)
from .evaluator import (
    BenchmarkResult,
    EvalReport,
    RetrievalResult,
    build_report,
    emit_report,
    evaluate_retrieval,
    evaluate_vocab,
    rank_positive,
    render_table,
)
from .heads import (
    Head,
    HeadKind,
    init_head,
    score,
    score_batch,
    score_pairs,
)
from .losses import (
    coarse_triplet_loss,
    finegrained_triplet_loss,
)
from .store import (
    CoarsePairs,
    EmbeddingTable,
    VocabDataset,
    VocabItem,
    load_coarse,
    load_vocab,
    read_table,
    write_table,
)
from .synth import SynthConfig, generate, write_dataset
from .trainer import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    finetune,
    load_checkpoint,
    save_checkpoint,
    warmup,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BenchmarkResult", "CheckpointError", "CoarsePairs",
    "DataError", "DomainError", "EmbeddingTable", "EvalReport", "FgmatchError",
    "Head", "HeadKind", "ManifestError", "NonFiniteGradientError",
    "RetrievalResult", "StoreError", "SynthConfig", "TrainConfig",
    "TrainHistory", "TrainingError", "UsageError", "VocabDataset", "VocabItem",
    "adam_step", "build_report", "coarse_triplet_loss", "emit_report",
    "evaluate_retrieval", "evaluate_vocab", "finegrained_triplet_loss",
    "finetune", "generate", "init_head", "load_checkpoint", "load_coarse",
    "load_vocab", "rank_positive", "read_table", "render_table", "save_checkpoint",
    "score", "score_batch", "score_pairs", "warmup", "write_dataset", "write_table",
]
