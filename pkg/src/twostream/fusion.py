"""Late fusion of the two stream posteriors.

Each stream produces its own softmax over the class list; the combined score
is the elementwise mean (each stream weighted one half), with an elementwise
max variant for comparison. Fusing probabilities rather than logits keeps
each stream's calibration intact and makes the fused vector a distribution
by construction.
"""

from __future__ import annotations

import numpy as np

POSTERIOR_ATOL = 1e-9


def _validate(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 1-D probability vector")
    if arr.min() < 0.0:
        raise ValueError(f"{name} has negative entries")
    if abs(arr.sum() - 1.0) > POSTERIOR_ATOL:
        raise ValueError(f"{name} sums to {arr.sum()}, not 1")
    return arr


def _validate_pair(p_texture, p_shape) -> tuple[np.ndarray, np.ndarray]:
    a = _validate(p_texture, "texture posterior")
    b = _validate(p_shape, "shape posterior")
    if a.shape != b.shape:
        raise ValueError(f"posterior lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def fuse_average(p_texture, p_shape) -> np.ndarray:
    """Mean of the two posteriors; sums to 1 by construction."""
    a, b = _validate_pair(p_texture, p_shape)
    return (a + b) / 2.0


def fuse_max(p_texture, p_shape) -> np.ndarray:
    """Elementwise max of the two posteriors, renormalized to sum 1."""
    a, b = _validate_pair(p_texture, p_shape)
    m = np.maximum(a, b)
    return m / m.sum()


def predict(p) -> int:
    """Argmax class index; ties go to the lowest index."""
    return int(np.argmax(_validate(p, "posterior")))
