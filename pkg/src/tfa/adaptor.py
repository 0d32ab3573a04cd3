"""Training-free dual-cache adaptor: entropy-gated base cache, K-shot novel
cache, affinity retrieval, and residual fusion with the scorer output.

The base cache holds per-class bounded queues of test features keyed by the
entropy of the softmax over the logits that pseudo-labeled them: a new entry
is admitted while the class queue is below capacity, and once full it only
displaces the current maximum-entropy entry when its own entropy is strictly
lower. The novel cache holds up to K training features per novel class and
is never evicted.

Retrieval pools both caches: for a unit-norm query v,

    b[c] = sum over entries (key, c) of exp(-beta * (1 - cos(v, key)))

and the fused score is ``z = a + alpha * b`` where ``a`` is the sigmoid
score vector. Cosines of unit vectors are plain dot products clamped to
[-1, 1]; the affinity is evaluated on that full range.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .alignment import SimilarityVector, score_all
from .errors import DimMismatch, ShotCapacityExceeded
from .numerics import entropy, softmax

ORIGIN_BASE = "base_pseudo"
ORIGIN_NOVEL = "novel_shot"

POLICIES = ("off", "session0_only", "always")

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class CacheEntry:
    key: np.ndarray
    value: int
    entropy: float
    origin: str


@dataclass(frozen=True)
class InsertOutcome:
    kind: str                      # "inserted" | "replaced" | "rejected"
    evicted: CacheEntry | None = None
    reason: str | None = None

    @property
    def inserted(self) -> bool:
        return self.kind == "inserted"

    @property
    def replaced(self) -> bool:
        return self.kind == "replaced"

    @property
    def rejected(self) -> bool:
        return self.kind == "rejected"


def pseudo_label(sim: SimilarityVector) -> tuple[int, float]:
    """Argmax class (ties to the lowest class id) and its softmax entropy."""
    if len(sim) == 0:
        raise ValueError("pseudo_label of an empty similarity vector")
    probs = softmax(sim.logits)
    best = argmax_lowest_id(sim.logits, sim.class_ids)
    return best, entropy(probs)


def argmax_lowest_id(values: np.ndarray, class_ids: np.ndarray) -> int:
    """Class id of the maximum value; exact ties resolve to the lowest id."""
    values = np.asarray(values, dtype=np.float64)
    winners = np.nonzero(values == values.max())[0]
    return int(np.min(np.asarray(class_ids)[winners]))


def affinity(u: float, beta: float):
    """Retrieval weight exp(-beta * (1 - u)); u=1 or beta=0 give weight 1."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return np.exp(-beta * (1.0 - np.asarray(u, dtype=np.float64)))


def _check_unit(key: np.ndarray, what: str) -> np.ndarray:
    key = np.asarray(key, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(key))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValueError(f"{what} must be unit-norm (got norm {norm:.6g})")
    return key.copy()


class DualCache:
    """Per-class bounded queues of base pseudo-label and novel shot entries."""

    def __init__(self, capacity: int = 5, shots: int = 5,
                 base_update_policy: str = "session0_only"):
        if capacity < 1 or shots < 1:
            raise ValueError("capacity and shots must be >= 1")
        if base_update_policy not in POLICIES:
            raise ValueError(f"unknown base_update_policy {base_update_policy!r}")
        self.capacity = capacity
        self.shots = shots
        self.base_update_policy = base_update_policy
        self._base: dict[int, list[CacheEntry]] = {}
        self._novel: dict[int, list[CacheEntry]] = {}
        self._pooled = None

    # -- mutation --

    def try_insert_base(self, key, sim: SimilarityVector) -> InsertOutcome:
        """Admit a pseudo-labeled test feature under the entropy gate."""
        key = _check_unit(key, "cache key")
        cls, h = pseudo_label(sim)
        queue = self._base.setdefault(cls, [])
        entry = CacheEntry(key, cls, h, ORIGIN_BASE)
        if len(queue) < self.capacity:
            queue.append(entry)
            self._pooled = None
            return InsertOutcome("inserted")
        worst = max(range(len(queue)), key=lambda i: queue[i].entropy)
        if h < queue[worst].entropy:
            evicted = queue.pop(worst)
            queue.append(entry)
            self._pooled = None
            return InsertOutcome("replaced", evicted=evicted)
        return InsertOutcome("rejected", reason="HighEntropy")

    def insert_novel(self, key, label: int) -> None:
        """Store one K-shot training feature; novel entries carry entropy 0."""
        key = _check_unit(key, "cache key")
        queue = self._novel.setdefault(int(label), [])
        if len(queue) >= self.shots:
            raise ShotCapacityExceeded(
                f"class {label} already holds {self.shots} novel shots")
        queue.append(CacheEntry(key, int(label), 0.0, ORIGIN_NOVEL))
        self._pooled = None

    # -- inspection --

    def base_entries(self, cls: int) -> list[CacheEntry]:
        return list(self._base.get(cls, []))

    def novel_entries(self, cls: int) -> list[CacheEntry]:
        return list(self._novel.get(cls, []))

    def entries(self) -> list[CacheEntry]:
        """All entries in deterministic order: class ascending, base before
        novel, queue order within."""
        out = []
        for cls in sorted(set(self._base) | set(self._novel)):
            out.extend(self._base.get(cls, []))
            out.extend(self._novel.get(cls, []))
        return out

    def __len__(self) -> int:
        return sum(len(q) for q in self._base.values()) + \
            sum(len(q) for q in self._novel.values())

    def snapshot(self) -> "DualCache":
        """Frozen copy safe for concurrent read-only scoring."""
        return copy.deepcopy(self)

    def stats(self) -> dict:
        base_fill = {c: len(q) for c, q in sorted(self._base.items()) if q}
        novel_fill = {c: len(q) for c, q in sorted(self._novel.items()) if q}
        ent = [e.entropy for q in self._base.values() for e in q]
        return {
            "base_entries": sum(base_fill.values()),
            "novel_entries": sum(novel_fill.values()),
            "base_fill": base_fill,
            "novel_fill": novel_fill,
            "mean_base_entropy": float(np.mean(ent)) if ent else None,
        }

    def audit(self) -> dict:
        """JSON-friendly dump: per-class entries with a short key digest."""
        classes = {}
        for cls in sorted(set(self._base) | set(self._novel)):
            rows = []
            for e in (*self._base.get(cls, []), *self._novel.get(cls, [])):
                rows.append({
                    "class": e.value,
                    "origin": e.origin,
                    "entropy": e.entropy,
                    "key_digest": {
                        "head": [float(x) for x in e.key[:4]],
                        "hash64": f"{_fnv1a64(e.key.tobytes()):016x}",
                    },
                })
            classes[str(cls)] = rows
        return {"capacity": self.capacity, "shots": self.shots,
                "base_update_policy": self.base_update_policy, "classes": classes}

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """Key matrix and value vector over all entries (cached until mutated)."""
        if self._pooled is None:
            entries = self.entries()
            if entries:
                keys = np.vstack([e.key for e in entries])
                values = np.array([e.value for e in entries], dtype=np.int64)
            else:
                keys = np.zeros((0, 0), dtype=np.float64)
                values = np.zeros(0, dtype=np.int64)
            self._pooled = (keys, values)
        return self._pooled


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def cache_predict(cache: DualCache, v, beta: float, n_classes: int) -> np.ndarray:
    """Adaptive score vector b over class ids 0..n_classes-1."""
    keys, values = cache.pooled()
    if values.size and int(values.max()) >= n_classes:
        raise DimMismatch(
            f"cache holds class {int(values.max())}, but only {n_classes} classes given")
    return _cache_scores(keys, values, v, beta, np.arange(n_classes, dtype=np.int64))


def cache_scores(cache: DualCache, v, beta: float, class_ids) -> np.ndarray:
    """Adaptive score vector aligned to an explicit class-id order."""
    keys, values = cache.pooled()
    ids = np.asarray(class_ids, dtype=np.int64)
    if values.size:
        known = set(int(c) for c in ids)
        for c in values:
            if int(c) not in known:
                raise DimMismatch(f"cache holds class {int(c)} missing from class order")
    return _cache_scores(keys, values, v, beta, ids)


def _cache_scores(keys, values, v, beta, class_ids) -> np.ndarray:
    out = np.zeros(class_ids.shape[0], dtype=np.float64)
    if values.size == 0:
        return out
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if keys.shape[1] != v.shape[0]:
        raise DimMismatch(f"query dimension {v.shape[0]} vs cache keys {keys.shape[1]}")
    u = np.clip(keys @ v, -1.0, 1.0)
    w = np.exp(-beta * (1.0 - u))
    pos_of = {int(c): i for i, c in enumerate(class_ids)}
    idx = np.array([pos_of[int(c)] for c in values], dtype=np.int64)
    np.add.at(out, idx, w)
    return out


def fuse(a, b, alpha: float) -> np.ndarray:
    """Residual fusion z = a + alpha * b; ``a`` may be a SimilarityVector."""
    scores = a.scores if isinstance(a, SimilarityVector) else np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if scores.shape != b.shape:
        raise DimMismatch(f"fuse length mismatch: {scores.shape} vs {b.shape}")
    return scores + alpha * b


def predict(params, cache: DualCache, v, prototypes, alpha: float, beta: float
            ) -> tuple[np.ndarray, int]:
    """Full prediction path: score, retrieve, fuse, argmax (ties to lowest id).

    The sample being scored must not already sit in the cache it queries;
    callers insert only after prediction.
    """
    sim = score_all(params, v, prototypes)
    b = cache_scores(cache, v, beta, sim.class_ids)
    z = fuse(sim, b, alpha)
    return z, argmax_lowest_id(z, sim.class_ids)
