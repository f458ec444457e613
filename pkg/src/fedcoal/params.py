"""Flat parameter-vector arithmetic.

Every client model is handled here as a dense 1-D float64 array ("flat
params"); a gradient proxy is the flat difference between two snapshots of
the same model. All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

# Below this L2 norm a vector is degenerate: it carries no directional
# information (untrained or fully converged client), so cosine-based
# quantities fall back to 0 rather than erroring out.
TAU_NORM = 1e-12


def as_flat(values) -> np.ndarray:
    """Coerce to a 1-D float64 vector, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError("flat params must be finite")
    return arr


def norm(u) -> float:
    """Euclidean L2 norm."""
    return float(np.linalg.norm(np.asarray(u, dtype=np.float64)))


def is_degenerate(u) -> bool:
    return norm(u) < TAU_NORM


def cosine(u, v) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector is degenerate.

    The zero return for degenerate inputs is a signal ("no evidence of
    alignment"), not an error.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < TAU_NORM or nv < TAU_NORM:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def delta(theta_new, theta_old) -> np.ndarray:
    """Realized update theta_new - theta_old (the gradient proxy)."""
    a = np.asarray(theta_new, dtype=np.float64)
    b = np.asarray(theta_old, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a - b


def weighted_average(vectors, sample_counts) -> np.ndarray:
    """Sample-count-weighted average of flat vectors.

    Weights are alpha_p = n_p / sum(n); computing the normalized weights
    first keeps the output bit-identical under a common scaling of the
    counts.
    """
    vectors = list(vectors)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if len(vectors) == 0:
        raise ValueError("weighted_average of empty list")
    if counts.shape != (len(vectors),):
        raise ValueError("one sample count per vector required")
    if np.any(counts < 1):
        raise ValueError("sample counts must be >= 1")
    stack = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    alphas = counts / counts.sum()
    return alphas @ stack
