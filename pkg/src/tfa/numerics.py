"""Small deterministic float64 vector kernels used by every other module.

Vectors are 1-D numpy float64 arrays (array-likes are coerced). Probability
vectors additionally have non-negative entries summing to one within 1e-9.
All functions are pure, never mutate their input, and never return NaN/Inf.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroVector

_ZERO_NORM = 1e-300
_PROB_TOL = 1e-9


def as_vec(v) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite entries")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale to unit Euclidean norm, preserving direction."""
    arr = as_vec(v)
    norm = float(np.linalg.norm(arr))
    if norm < _ZERO_NORM:
        raise ZeroVector("cannot normalize a zero vector")
    return arr / norm


def cosine(a, b) -> float:
    """Cosine similarity of two nonzero vectors, clamped to [-1, 1]."""
    va, vb = as_vec(a), as_vec(b)
    if va.shape != vb.shape:
        raise ValueError(f"cosine of vectors with shapes {va.shape} and {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < _ZERO_NORM or nb < _ZERO_NORM:
        raise ZeroVector("cosine undefined for the zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def softmax(v) -> np.ndarray:
    """Numerically stable softmax (max-subtraction); output sums to 1."""
    arr = as_vec(v)
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(arr - arr.max())
    return e / e.sum()


def entropy(p) -> float:
    """Shannon entropy in nats with the 0*ln(0) := 0 convention."""
    arr = as_vec(p)
    if arr.size == 0:
        raise ValueError("entropy of an empty vector")
    if np.any(arr < 0.0) or abs(float(arr.sum()) - 1.0) > _PROB_TOL:
        raise ValueError("entropy expects a probability vector")
    nz = arr[arr > 0.0]
    return max(0.0, float(-(nz * np.log(nz)).sum()))
