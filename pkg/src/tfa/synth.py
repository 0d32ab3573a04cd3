"""Synthetic task-stream generator emulating frozen encoders at desk scale.

Each class gets a mean direction drawn uniformly on the unit sphere (a
normalized standard Gaussian). Samples are ``normalize(mean + intra_class_sigma * g)``
and the class prototype is ``normalize(mean + modality_gap_sigma * g)``, so
``modality_gap_sigma`` plays the role of the systematic vision/text offset.
All Gaussians come from :mod:`tfa.rng` streams derived per (scope, class id),
which makes output depend only on the config, never on generation order.

Record order in the produced set: tasks ascending; within a task the train
split precedes the test split; within a split classes ascend; within a class
samples keep draw order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .embeddings import ClassPrototype, EmbeddingSet, SampleRecord
from .errors import ConfigError
from .numerics import l2_normalize
from .rng import (
    SCOPE_CLASS_MEAN,
    SCOPE_PROTOTYPE,
    SCOPE_TEST,
    SCOPE_TRAIN,
    Stream,
    derive_seed,
)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 1024
    base_classes: int = 20
    novel_tasks: int = 3
    classes_per_novel_task: int = 5
    train_per_base_class: int = 100
    test_per_class: int = 20
    shots: int = 5
    intra_class_sigma: float = 0.05
    modality_gap_sigma: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        for name in ("dim", "base_classes", "novel_tasks", "classes_per_novel_task",
                     "train_per_base_class", "test_per_class", "shots"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("intra_class_sigma", "modality_gap_sigma"):
            if float(getattr(self, name)) < 0.0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def class_layout(cfg: SynthConfig) -> list[tuple[int, list[int]]]:
    """(task index, class ids) pairs; ids are dense and task-contiguous."""
    layout = [(0, list(range(cfg.base_classes)))]
    nxt = cfg.base_classes
    for t in range(1, cfg.novel_tasks + 1):
        layout.append((t, list(range(nxt, nxt + cfg.classes_per_novel_task))))
        nxt += cfg.classes_per_novel_task
    return layout


def calibration_config(seed: int = 7) -> SynthConfig:
    """Small separable preset used by the end-to-end calibration suite.

    The modality gap of 0.15 is calibrated so that nearest-prototype
    classification stays at ~100% while the frozen scorer alone generalizes
    poorly to unseen prototypes (novel-class accuracy collapses without the
    cache), which is the regime the calibration run exercises.
    """
    return SynthConfig(
        dim=64,
        base_classes=20,
        novel_tasks=3,
        classes_per_novel_task=5,
        train_per_base_class=100,
        test_per_class=20,
        shots=5,
        intra_class_sigma=0.05,
        modality_gap_sigma=0.15,
        seed=seed,
    )


def _noisy(mean, sigma: float, stream: Stream, count: int, dim: int):
    gauss = stream.normal(count * dim).reshape(count, dim)
    return [l2_normalize(mean + sigma * gauss[i]) for i in range(count)]


def generate_synthetic(cfg: SynthConfig) -> tuple[EmbeddingSet, list[ClassPrototype]]:
    cfg.validate()
    records: list[SampleRecord] = []
    protos: list[ClassPrototype] = []
    means = {}
    for task, class_ids in class_layout(cfg):
        for cid in class_ids:
            mean = l2_normalize(Stream(derive_seed(cfg.seed, SCOPE_CLASS_MEAN, cid)).normal(cfg.dim))
            means[cid] = mean
            proto = _noisy(mean, cfg.modality_gap_sigma,
                           Stream(derive_seed(cfg.seed, SCOPE_PROTOTYPE, cid)), 1, cfg.dim)[0]
            protos.append(ClassPrototype(cid, proto))
    for task, class_ids in class_layout(cfg):
        n_train = cfg.train_per_base_class if task == 0 else cfg.shots
        for split, count, scope in (("train", n_train, SCOPE_TRAIN),
                                    ("test", cfg.test_per_class, SCOPE_TEST)):
            for cid in class_ids:
                stream = Stream(derive_seed(cfg.seed, scope, cid))
                for vec in _noisy(means[cid], cfg.intra_class_sigma, stream, count, cfg.dim):
                    records.append(SampleRecord(vec, cid, task, split))
    provenance = {"kind": "synthetic", "seed": cfg.seed, "config": asdict(cfg)}
    return EmbeddingSet.from_records(cfg.dim, records, provenance), protos
