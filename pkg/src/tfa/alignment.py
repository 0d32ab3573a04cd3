"""Vision-text alignment scorer: a small fully connected relation network.

The scorer maps a concatenated (vision, text) feature pair through three
fully connected layers (2m -> 2048 -> 1024 -> 1 by default) with LeakyReLU
activations on the hidden layers and a sigmoid on the scalar output, giving
a similarity in (0, 1). It is trained with a one-vs-all binary cross-entropy
over the base-task classes, using Adam, and is frozen afterwards: nothing in
this package updates it again.

All math is plain float64 numpy. The binary cross-entropy is evaluated in
logit space, ``max(z, 0) - z*t + log1p(exp(-|z|))``, so saturated sigmoids
never produce log(0).

Checkpoint format "ALN1" (little-endian):

    bytes 0..3  magic "ALN1"
    bytes 4..7  u32 layer count
    per layer:  u32 rows, u32 cols, rows*cols float32 weights (row-major),
                cols float32 biases

with a JSON sidecar ``<file>.meta.json`` holding
``{"m": .., "slope": .., "train_config": .., "final_loss": ..}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet
from .errors import (
    BadMagic,
    CorruptRecord,
    DimMismatch,
    EmptyTrainSet,
    ValidationError,
)
from .rng import SCOPE_INIT, SCOPE_SHUFFLE, Stream, derive_seed

ALN_MAGIC = b"ALN1"
DEFAULT_HIDDEN = (2048, 1024)
DEFAULT_SLOPE = 0.01

_U32 = struct.Struct("<I")
_U32x2 = struct.Struct("<II")


@dataclass
class RelationParams:
    """Weights and biases of the scorer; ``weights[i]`` is (fan_in, fan_out)."""

    weights: list
    biases: list
    slope: float
    m: int
    frozen: bool = False

    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "RelationParams":
        return RelationParams([w.copy() for w in self.weights],
                              [b.copy() for b in self.biases],
                              self.slope, self.m, False)

    def freeze(self) -> "RelationParams":
        for arr in (*self.weights, *self.biases):
            arr.flags.writeable = False
        self.frozen = True
        return self


@dataclass
class Gradients:
    d_weights: list
    d_biases: list

    def norm(self) -> float:
        total = sum(float(np.sum(g * g)) for g in (*self.d_weights, *self.d_biases))
        return float(np.sqrt(total))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m_weights: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)


@dataclass(frozen=True)
class SimilarityVector:
    """Per-class scores in canonical class order; ``scores = sigmoid(logits)``."""

    scores: np.ndarray
    logits: np.ndarray
    class_ids: np.ndarray

    def __len__(self) -> int:
        return int(self.logits.shape[0])

    @classmethod
    def from_logits(cls, logits, class_ids=None) -> "SimilarityVector":
        logits = np.asarray(logits, dtype=np.float64)
        if class_ids is None:
            class_ids = np.arange(logits.shape[0], dtype=np.int64)
        return cls(_sigmoid(logits), logits, np.asarray(class_ids, dtype=np.int64))

    def index_of(self, class_id: int) -> int:
        hits = np.nonzero(self.class_ids == class_id)[0]
        if hits.size == 0:
            raise ValueError(f"class id {class_id} not present in similarity vector")
        return int(hits[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 25
    lr: float = 0.001
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    slope: float = DEFAULT_SLOPE
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_relation(m: int, seed: int, hidden=DEFAULT_HIDDEN, slope: float = DEFAULT_SLOPE) -> RelationParams:
    """Seeded init: weights uniform on (-sqrt(6/fan_in), sqrt(6/fan_in)), biases 0.

    Layer i draws fan_in*fan_out uniforms from ``Stream(derive_seed(seed,
    SCOPE_INIT, i))`` and fills its weight matrix row-major.
    """
    if m < 1:
        raise ValueError("feature dimension must be >= 1")
    sizes = [2 * m, *hidden, 1]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = np.sqrt(6.0 / fan_in)
        u = Stream(derive_seed(seed, SCOPE_INIT, i)).uniform(fan_in * fan_out)
        weights.append(((2.0 * u - 1.0) * bound).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return RelationParams(weights, biases, slope, m)


def _forward(params: RelationParams, x: np.ndarray, keep: bool = False):
    """Logits for a (rows, 2m) input block; optionally keep activations."""
    acts = [x] if keep else None
    h = x
    last = len(params.weights) - 1
    pre_acts = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i == last:
            h = z
        else:
            if keep:
                pre_acts.append(z)
            h = np.where(z > 0.0, z, params.slope * z)
            if keep:
                acts.append(h)
    logits = h[:, 0]
    if keep:
        return logits, acts, pre_acts
    return logits


def score_pair(params: RelationParams, v, e) -> tuple[float, float]:
    """Similarity of one (vision, text) pair: (sigmoid score, raw logit)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if v.shape[0] != params.m or e.shape[0] != params.m:
        raise DimMismatch(
            f"score_pair expects dimension {params.m}, got {v.shape[0]} and {e.shape[0]}")
    logit = float(_forward(params, np.concatenate([v, e])[None, :])[0])
    return float(_sigmoid(np.array([logit]))[0]), logit


def score_matrix(params: RelationParams, vs: np.ndarray, protos: np.ndarray,
                 chunk: int = 8192) -> np.ndarray:
    """Logits for every (sample, prototype) pair, shape (B, C).

    Rows are processed in fixed-size chunks so memory stays bounded and the
    result is independent of the caller's batching.
    """
    vs = np.asarray(vs, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if vs.shape[1] != params.m or protos.shape[1] != params.m:
        raise DimMismatch("sample/prototype dimension does not match the scorer")
    b, c = vs.shape[0], protos.shape[0]
    pairs = np.empty((b * c, 2 * params.m), dtype=np.float64)
    pairs[:, :params.m] = np.repeat(vs, c, axis=0)
    pairs[:, params.m:] = np.tile(protos, (b, 1))
    out = np.empty(b * c, dtype=np.float64)
    for start in range(0, b * c, chunk):
        stop = min(start + chunk, b * c)
        out[start:stop] = _forward(params, pairs[start:stop])
    return out.reshape(b, c)


def score_all(params: RelationParams, v, prototypes) -> SimilarityVector:
    """Score one sample against a prototype list, preserving list order."""
    protos = list(prototypes)
    if not protos:
        raise ValueError("score_all needs at least one prototype")
    mat = np.vstack([p.vector for p in protos])
    ids = np.array([p.class_id for p in protos], dtype=np.int64)
    logits = score_matrix(params, np.asarray(v, dtype=np.float64)[None, :], mat)[0]
    return SimilarityVector.from_logits(logits, ids)


def _bce_elementwise(z: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))


def bce_loss(sim: SimilarityVector, target_class: int) -> float:
    """Mean one-vs-all binary cross-entropy over all classes in the vector."""
    k = sim.index_of(int(target_class))
    t = np.zeros(len(sim), dtype=np.float64)
    t[k] = 1.0
    return float(_bce_elementwise(sim.logits, t).mean())


def loss_and_grad(params: RelationParams, vs: np.ndarray, protos: np.ndarray,
                  targets: np.ndarray) -> tuple[float, Gradients]:
    """Mean batch loss and its exact gradient.

    ``targets`` holds, per sample, the row index of its true prototype. The
    loss averages over both the batch and the class dimension, so gradients
    are 1/(B*C) times the sum of per-pair terms.
    """
    vs = np.asarray(vs, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if vs.shape[0] == 0:
        raise EmptyTrainSet("empty batch")
    if vs.shape[1] != params.m or protos.shape[1] != params.m:
        raise DimMismatch("batch dimension does not match the scorer")
    b, c = vs.shape[0], protos.shape[0]
    x = np.empty((b * c, 2 * params.m), dtype=np.float64)
    x[:, :params.m] = np.repeat(vs, c, axis=0)
    x[:, params.m:] = np.tile(protos, (b, 1))
    t = np.zeros((b, c), dtype=np.float64)
    t[np.arange(b), targets] = 1.0
    t = t.reshape(-1)

    logits, acts, pre_acts = _forward(params, x, keep=True)
    loss = float(_bce_elementwise(logits, t).mean())

    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    delta = ((_sigmoid(logits) - t) / (b * c))[:, None]
    for i in range(len(params.weights) - 1, -1, -1):
        d_weights[i] = acts[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            upstream = delta @ params.weights[i].T
            gate = np.where(pre_acts[i - 1] > 0.0, 1.0, params.slope)
            delta = upstream * gate
    return loss, Gradients(d_weights, d_biases)


def grad(params: RelationParams, vs, protos, targets) -> Gradients:
    """Exact analytic gradient of the mean batch loss."""
    return loss_and_grad(params, vs, protos, targets)[1]


def adam_init(params: RelationParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step=0,
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(params: RelationParams, state: AdamState, grads: Gradients
              ) -> tuple[RelationParams, AdamState]:
    """One Adam update with bias correction; mutates params/state in place."""
    if params.frozen:
        raise ValidationError("cannot update a frozen scorer")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v, g in (
        *zip(params.weights, state.m_weights, state.v_weights, grads.d_weights),
        *zip(params.biases, state.m_biases, state.v_biases, grads.d_biases),
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def train_alignment(params: RelationParams, train_set: EmbeddingSet,
                    prototypes, hyper: TrainConfig | None = None
                    ) -> tuple[RelationParams, list[float]]:
    """Train on the base task and freeze; returns per-epoch mean losses.

    The sample order is reshuffled each epoch with the stream seeded by
    ``derive_seed(hyper.seed, SCOPE_SHUFFLE, epoch)``; the trailing partial
    batch is used, not dropped.
    """
    hyper = hyper or TrainConfig()
    if len(train_set) == 0:
        raise EmptyTrainSet("no training samples")
    if any(int(t) != 0 for t in train_set.tasks):
        raise ValidationError("alignment trains on the base task only")
    if any(s != "train" for s in train_set.splits):
        raise ValidationError("alignment training set must contain train-split records only")

    protos = sorted(prototypes, key=lambda p: p.class_id)
    id_to_idx = {p.class_id: i for i, p in enumerate(protos)}
    missing = sorted(set(int(y) for y in train_set.labels) - set(id_to_idx))
    if missing:
        raise ValidationError(f"no prototype for base classes {missing}")
    proto_mat = np.vstack([p.vector for p in protos])
    targets = np.array([id_to_idx[int(y)] for y in train_set.labels], dtype=np.int64)

    work = params.copy()
    state = adam_init(work, lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2,
                      epsilon=hyper.epsilon)
    n = len(train_set)
    history = []
    for epoch in range(hyper.epochs):
        order = Stream(derive_seed(hyper.seed, SCOPE_SHUFFLE, epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            loss, grads = loss_and_grad(work, train_set.vectors[batch], proto_mat,
                                        targets[batch])
            total += loss * batch.shape[0]
            adam_step(work, state, grads)
        history.append(total / n)
    return work.freeze(), history


# ---- checkpoint I/O ----


def save_alignment(params: RelationParams, path, train_config: TrainConfig | dict | None = None,
                   final_loss: float | None = None, loss_history=None) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(ALN_MAGIC)
        f.write(_U32.pack(len(params.weights)))
        for w, b in zip(params.weights, params.biases):
            f.write(_U32x2.pack(w.shape[0], w.shape[1]))
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if isinstance(train_config, TrainConfig):
        train_config = asdict(train_config)
        train_config["hidden"] = list(train_config["hidden"])
    sidecar = {"m": params.m, "slope": params.slope, "train_config": train_config,
               "final_loss": final_loss}
    if loss_history is not None:
        sidecar["loss_history"] = list(loss_history)
    with open(Path(str(path) + ".meta.json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)
        f.write("\n")


def load_alignment(path) -> tuple[RelationParams, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != ALN_MAGIC:
        raise BadMagic(f"{path}: not an ALN1 checkpoint")
    off = 4
    if len(blob) < off + 4:
        raise DimMismatch(f"{path}: truncated header")
    (n_layers,) = _U32.unpack_from(blob, off)
    off += 4
    weights, biases = [], []
    for _ in range(n_layers):
        if len(blob) < off + 8:
            raise DimMismatch(f"{path}: truncated layer header")
        rows, cols = _U32x2.unpack_from(blob, off)
        off += 8
        need = 4 * (rows * cols + cols)
        if len(blob) < off + need:
            raise DimMismatch(f"{path}: layer payload truncated")
        w = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
        off += 4 * rows * cols
        b = np.frombuffer(blob, dtype="<f4", count=cols, offset=off)
        off += 4 * cols
        weights.append(w.astype(np.float64).reshape(rows, cols))
        biases.append(b.astype(np.float64))
    if off != len(blob):
        raise DimMismatch(f"{path}: {len(blob) - off} trailing bytes")
    for arr in (*weights, *biases):
        if not np.all(np.isfinite(arr)):
            raise CorruptRecord(f"{path}: non-finite parameter")
    with open(Path(str(path) + ".meta.json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    m = int(meta["m"])
    if weights and weights[0].shape[0] != 2 * m:
        raise DimMismatch(f"{path}: first layer expects fan-in {weights[0].shape[0]}, "
                          f"sidecar says m={m}")
    params = RelationParams(weights, biases, float(meta.get("slope", DEFAULT_SLOPE)), m)
    return params.freeze(), meta
