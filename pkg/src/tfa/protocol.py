"""Experiment protocol: base-task training, per-session shot ingestion,
streaming inference with cache mutation, and per-session evaluation.

Sessions are numbered 0..T-1; session 0 is the base task (the only one any
parameters are ever trained on) and every later session contributes K-shot
novel classes. At session t the evaluation set is the union of the test
splits of tasks 0..t, streamed in a seeded shuffled order; each sample is
predicted against the current cache state *before* any insertion it may
trigger. Results are therefore order-dependent through the base cache, which
is why the stream seed is part of the trial: replaying a trial seed
reproduces every per-sample prediction exactly.

Trial seeds derive from the experiment seed as
``derive_seed(seed, SCOPE_TRIAL, trial_index)`` and session streams as
``derive_seed(trial_seed, SCOPE_STREAM, session)``. The alignment scorer is
trained once per experiment (its own seed lives in the alignment config) and
shared, frozen, by all trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .adaptor import DualCache, POLICIES, argmax_lowest_id, cache_scores, pseudo_label
from .alignment import (
    RelationParams,
    SimilarityVector,
    TrainConfig,
    init_relation,
    score_matrix,
    train_alignment,
    _sigmoid,
)
from .embeddings import EmbeddingSet
from .errors import (
    ConfigError,
    DisjointnessViolation,
    OutOfOrderSession,
    ShotCountMismatch,
    ValidationError,
)
from .rng import SCOPE_SHOTS, SCOPE_STREAM, SCOPE_TRIAL, Stream, derive_seed

# Table-style experiment shapes: class counts per task only.
PRESETS = {
    "modelnet_to_scanobjectnn": {"base_classes": 26, "novel_per_task": [4, 4, 3]},
    "shapenet_to_scanobjectnn": {"base_classes": 44, "novel_per_task": [5, 5, 5]},
    "shapenet_to_co3d": {"base_classes": 39, "novel_per_task": [5] * 10},
}


@dataclass(frozen=True)
class TaskSpec:
    index: int
    class_ids: tuple
    train_by_class: dict                 # class id -> tuple of record indices
    test_indices: tuple
    shots: int | None                    # None for the base task


@dataclass
class ExperimentConfig:
    alpha: float = 2.0
    beta: float = 2.0
    capacity: int = 5
    shots: int = 5
    novel_capacity: int | None = None    # defaults to shots
    base_update_policy: str = "session0_only"
    seed: int = 0
    trials: int = 10
    align: TrainConfig = field(default_factory=TrainConfig)

    def effective_novel_capacity(self) -> int:
        return self.shots if self.novel_capacity is None else self.novel_capacity

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.effective_novel_capacity() < 1:
            raise ConfigError("novel_capacity must be >= 1")
        if self.base_update_policy not in POLICIES:
            raise ConfigError(f"base_update_policy must be one of {POLICIES}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "beta": self.beta,
            "capacity": self.capacity,
            "shots": self.shots,
            "novel_capacity": self.novel_capacity,
            "base_update_policy": self.base_update_policy,
            "seed": self.seed,
            "trials": self.trials,
            "align": {
                "epochs": self.align.epochs,
                "batch_size": self.align.batch_size,
                "lr": self.align.lr,
                "seed": self.align.seed,
                "hidden": list(self.align.hidden),
                "slope": self.align.slope,
            },
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        align = d.pop("align", {})
        known = {"alpha", "beta", "capacity", "shots", "novel_capacity",
                 "base_update_policy", "seed", "trials"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        align_known = {"epochs", "batch_size", "lr", "seed", "hidden", "slope",
                       "beta1", "beta2", "epsilon"}
        unknown = set(align) - align_known
        if unknown:
            raise ConfigError(f"unknown alignment config keys: {sorted(unknown)}")
        if "hidden" in align:
            align["hidden"] = tuple(align["hidden"])
        cfg = cls(**d, align=TrainConfig(**align))
        cfg.validate()
        return cfg


@dataclass
class SessionState:
    params: RelationParams | None
    cache: DualCache
    class_order: list = field(default_factory=list)
    session: int = -1
    base_class_ids: frozenset = frozenset()


def preset_tasks(name: str, shots: int = 5) -> list[TaskSpec]:
    """Skeletal task specs for a named preset (class/task shape only)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    shape = PRESETS[name]
    tasks = []
    nxt = 0
    base_ids = tuple(range(shape["base_classes"]))
    nxt = shape["base_classes"]
    tasks.append(TaskSpec(0, base_ids, {c: (0,) for c in base_ids}, (), None))
    for t, width in enumerate(shape["novel_per_task"], start=1):
        ids = tuple(range(nxt, nxt + width))
        nxt += width
        tasks.append(TaskSpec(t, ids, {c: tuple(range(shots)) for c in ids}, (), shots))
    return tasks


def build_tasks(data: EmbeddingSet) -> list[TaskSpec]:
    """Derive the task list from an embedding set's records."""
    tids = data.task_ids()
    if tids != list(range(len(tids))):
        raise ValidationError(f"task indices must be contiguous from 0, got {tids}")
    tasks = []
    for t in tids:
        train_idx = data.indices(task=t, split="train")
        class_ids = tuple(sorted(set(int(data.labels[i]) for i in train_idx)))
        by_class = {c: tuple(int(i) for i in train_idx if int(data.labels[i]) == c)
                    for c in class_ids}
        test_idx = tuple(int(i) for i in data.indices(task=t, split="test"))
        if t == 0:
            shots = None
        else:
            counts = sorted(set(len(v) for v in by_class.values()))
            if len(counts) != 1:
                raise ShotCountMismatch(
                    f"task {t} has uneven per-class shot counts {counts}")
            shots = counts[0]
        tasks.append(TaskSpec(t, class_ids, by_class, test_idx, shots))
    return tasks


def validate_tasks(tasks) -> None:
    """Disjoint label spaces and per-class shot counts."""
    tasks = list(tasks)
    if not tasks:
        raise ValidationError("empty task list")
    for i, a in enumerate(tasks):
        if not a.class_ids:
            raise ValidationError(f"task {a.index} has no classes")
        for b in tasks[i + 1:]:
            overlap = set(a.class_ids) & set(b.class_ids)
            if overlap:
                raise DisjointnessViolation(
                    f"tasks {a.index} and {b.index} share classes {sorted(overlap)}")
    for task in tasks:
        if task.index == 0:
            continue
        if task.shots is None:
            raise ShotCountMismatch(f"novel task {task.index} declares no shot count")
        for cid in task.class_ids:
            got = len(task.train_by_class.get(cid, ()))
            if got != task.shots:
                raise ShotCountMismatch(
                    f"task {task.index} class {cid}: {got} shots, expected {task.shots}")


def _proto_matrix(prototypes, class_order) -> np.ndarray:
    by_id = {p.class_id: p for p in prototypes}
    missing = [c for c in class_order if c not in by_id]
    if missing:
        raise ValidationError(f"no prototype for classes {missing}")
    return np.vstack([by_id[c].vector for c in class_order])


def _novel_shot_indices(task: TaskSpec, cid: int, cap: int, stream_seed: int):
    idxs = task.train_by_class[cid]
    if cap >= len(idxs):
        return idxs
    perm = Stream(derive_seed(stream_seed, SCOPE_SHOTS, cid)).permutation(len(idxs))
    return tuple(idxs[int(j)] for j in perm[:cap])


def run_session(state: SessionState, task: TaskSpec, data: EmbeddingSet,
                prototypes, cfg: ExperimentConfig, stream_seed: int,
                score_table: np.ndarray | None = None,
                table_row: dict | None = None,
                prior_tasks: list | None = None
                ) -> tuple[SessionState, metrics.SessionReport]:
    """Run one session: reveal classes, ingest shots, stream the cumulative
    test set, and report.

    ``score_table``/``table_row`` optionally supply precomputed logits for
    (test record, canonical class) pairs; without them the block is computed
    here. ``prior_tasks`` lists the already-run tasks (needed to rebuild the
    cumulative test set when sessions are run one by one).
    """
    if task.index != state.session + 1:
        raise OutOfOrderSession(
            f"task {task.index} cannot run after session {state.session}")
    prior_tasks = list(prior_tasks or [])
    revealed = sorted(task.class_ids)
    state.class_order = list(state.class_order) + revealed
    class_order = np.array(state.class_order, dtype=np.int64)

    if task.index == 0:
        state.base_class_ids = frozenset(task.class_ids)
        if state.params is None:
            base_train = data.subset(data.indices(task=0, split="train"))
            protos0 = [p for p in prototypes if p.class_id in state.base_class_ids]
            params = init_relation(data.dim, cfg.align.seed, cfg.align.hidden,
                                   cfg.align.slope)
            state.params, _ = train_alignment(params, base_train, protos0, cfg.align)
    else:
        cap = cfg.effective_novel_capacity()
        for cid in sorted(task.class_ids):
            for idx in _novel_shot_indices(task, cid, cap, stream_seed):
                state.cache.insert_novel(data.vectors[idx], cid)

    eval_indices = [i for t in (*prior_tasks, task) for i in t.test_indices]
    eval_indices = np.array(eval_indices, dtype=np.int64)
    n_eval = eval_indices.shape[0]
    order = Stream(derive_seed(stream_seed, SCOPE_STREAM)).permutation(n_eval)

    if score_table is None:
        proto_mat = _proto_matrix(prototypes, state.class_order)
        block = score_matrix(state.params, data.vectors[eval_indices], proto_mat)
        row_of = {int(rec): i for i, rec in enumerate(eval_indices)}
    else:
        block, row_of = score_table, table_row

    n_classes = len(state.class_order)
    preds = np.empty(n_eval, dtype=np.int64)
    truths = np.empty(n_eval, dtype=np.int64)
    insert_base = cfg.base_update_policy == "always" or (
        task.index == 0 and cfg.base_update_policy == "session0_only")
    for pos, k in enumerate(order):
        rec = int(eval_indices[int(k)])
        logits = block[row_of[rec], :n_classes]
        sim = SimilarityVector(_sigmoid(logits), logits, class_order)
        v = data.vectors[rec]
        b = cache_scores(state.cache, v, cfg.beta, class_order)
        z = sim.scores + cfg.alpha * b
        preds[pos] = argmax_lowest_id(z, class_order)
        truths[pos] = int(data.labels[rec])
        if insert_base:
            if task.index == 0:
                state.cache.try_insert_base(v, sim)
            else:
                cls, _h = pseudo_label(sim)
                if cls in state.base_class_ids:
                    state.cache.try_insert_base(v, sim)

    a_b, a_n = metrics.split_accuracy(preds, truths, state.base_class_ids)
    both_zero = a_b == 0.0 and a_n == 0.0 and a_n is not None
    hm = metrics.harmonic(a_b, a_n) if (a_b is not None and a_n is not None) else None
    per_class = {}
    for y, p in zip(truths, preds):
        n, c = per_class.get(int(y), (0, 0))
        per_class[int(y)] = (n + 1, c + (1 if y == p else 0))
    report = metrics.SessionReport(
        session=task.index,
        n_test=n_eval,
        n_classes=n_classes,
        accuracy=metrics.accuracy(preds, truths),
        base_accuracy=a_b,
        novel_accuracy=a_n,
        harmonic=hm,
        both_zero=bool(both_zero),
        per_class={k: list(v) for k, v in sorted(per_class.items())},
        cache=state.cache.stats(),
    )
    state.session = task.index
    return state, report


def train_base_alignment(cfg: ExperimentConfig, data: EmbeddingSet, prototypes
                         ) -> tuple[RelationParams, list[float]]:
    """Train the scorer on the base task's train split per the config."""
    base_train = data.subset(data.indices(task=0, split="train"))
    base_ids = set(int(y) for y in base_train.labels)
    protos0 = [p for p in prototypes if p.class_id in base_ids]
    params = init_relation(data.dim, cfg.align.seed, cfg.align.hidden, cfg.align.slope)
    return train_alignment(params, base_train, protos0, cfg.align)


def run_experiment(cfg: ExperimentConfig, data: EmbeddingSet, prototypes,
                   alignment: RelationParams | None = None) -> metrics.ExperimentReport:
    """All trials, all sessions; deterministic for a fixed config and data."""
    cfg.validate()
    tasks = build_tasks(data)
    validate_tasks(tasks)
    for task in tasks[1:]:
        if task.shots != cfg.shots:
            raise ShotCountMismatch(
                f"task {task.index} provides {task.shots} shots, config expects {cfg.shots}")

    if alignment is None:
        alignment, _history = train_base_alignment(cfg, data, prototypes)
    if not alignment.frozen:
        raise ValidationError("experiments require a frozen alignment scorer")

    class_order = [c for t in tasks for c in sorted(t.class_ids)]
    proto_mat = _proto_matrix(prototypes, class_order)
    all_test = np.concatenate([np.array(t.test_indices, dtype=np.int64) for t in tasks])
    table = score_matrix(alignment, data.vectors[all_test], proto_mat)
    table_row = {int(rec): i for i, rec in enumerate(all_test)}

    before = _param_bytes(alignment)
    trials = []
    for i in range(cfg.trials):
        trial_seed = derive_seed(cfg.seed, SCOPE_TRIAL, i)
        state = SessionState(
            params=alignment,
            cache=DualCache(cfg.capacity, cfg.effective_novel_capacity(),
                            cfg.base_update_policy),
        )
        sessions = []
        for task in tasks:
            stream_seed = derive_seed(trial_seed, SCOPE_STREAM, task.index)
            state, rep = run_session(state, task, data, prototypes, cfg, stream_seed,
                                     score_table=table, table_row=table_row,
                                     prior_tasks=tasks[:task.index])
            sessions.append(rep)
        trials.append(metrics.TrialResult(seed=trial_seed, sessions=sessions))
    if _param_bytes(alignment) != before:
        raise ValidationError("alignment parameters changed during inference")

    aggs, dlt, hm = metrics.aggregate_trials(trials)
    return metrics.ExperimentReport(
        config={"experiment": cfg.to_dict(), "data_provenance": data.provenance},
        flags={"no_cache_baseline": cfg.alpha == 0.0},
        trials=trials,
        aggregate=aggs,
        delta=dlt,
        mean_harmonic=hm,
    )


def _param_bytes(params: RelationParams) -> bytes:
    return b"".join(a.tobytes() for a in (*params.weights, *params.biases))
