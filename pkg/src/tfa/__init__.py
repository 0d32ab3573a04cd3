"""Training-free dual-cache adaptor for few-shot class-incremental
classification over precomputed embedding vectors."""

from .adaptor import DualCache, affinity, cache_predict, fuse, predict, pseudo_label
from .alignment import (
    RelationParams,
    SimilarityVector,
    TrainConfig,
    init_relation,
    load_alignment,
    save_alignment,
    score_all,
    score_pair,
    train_alignment,
)
from .embeddings import (
    ClassPrototype,
    EmbeddingSet,
    SampleRecord,
    load_embeddings,
    load_prototypes,
    save_embeddings,
    save_prototypes,
)
from .metrics import ExperimentReport, accuracy, delta, emit_report, harmonic, mean_harmonic, split_accuracy
from .protocol import ExperimentConfig, TaskSpec, run_experiment, run_session, validate_tasks
from .synth import SynthConfig, generate_synthetic

__version__ = "0.1.0"
