"""Dense numeric primitives shared by every other module.

All arithmetic is double precision.  Vectors and matrices are plain
``numpy.ndarray`` objects; the helpers here validate them and provide
numerically safe normalization, cosine, angle and softmax routines.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    LabelOutOfRangeError,
    NonFiniteError,
    ZeroVectorError,
)

# Vectors with a norm below this are rejected rather than silently
# normalized: dividing by a denormal blows up gradient checks.
EPS_NORM = 1e-12


def as_vector(v, name="vector"):
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionMismatchError(f"{name} must be a 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def l2_normalize(v):
    """Return ``v / ||v||``; raises ZeroVectorError for degenerate input."""
    v = as_vector(v)
    norm = float(np.linalg.norm(v))
    if norm < EPS_NORM:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def normalize_rows(x, name="features"):
    """Row-wise L2 normalization of a matrix.

    Returns ``(unit_rows, norms)``.  The norms are needed again when
    chaining gradients back through the normalization.
    """
    x = as_matrix(x, name)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < EPS_NORM):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"{name} row {bad} has norm {norms[bad]:.3e}")
    return x / norms[:, None], norms


def normalize_columns(w, name="weights"):
    """Column-wise L2 normalization; returns ``(unit_columns, norms)``."""
    w = as_matrix(w, name)
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms < EPS_NORM):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"{name} column {bad} has norm {norms[bad]:.3e}")
    return w / norms[None, :], norms


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, clamped into [-1, 1]."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < EPS_NORM or nb < EPS_NORM:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    # Rounding can push dot products of unit vectors marginally outside
    # the valid domain, so clamp before anyone feeds this to arccos.
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def angle_between(a, b):
    """Angle between two vectors in radians, in [0, pi]."""
    return float(np.arccos(cosine_similarity(a, b)))


def stable_softmax(logits):
    """Softmax computed via the max-shift trick; never overflows.

    The result is invariant under adding a constant to all logits.
    """
    z = as_vector(logits, "logits")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / np.sum(e)


def softmax_rows(logits):
    """Row-wise stable softmax of a 2-D logit matrix."""
    z = as_matrix(logits, "logits")
    shifted = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def logsumexp_rows(logits):
    """Row-wise log-sum-exp with the max-shift trick."""
    z = np.asarray(logits, dtype=np.float64)
    m = np.max(z, axis=1)
    return m + np.log(np.sum(np.exp(z - m[:, None]), axis=1))


@dataclass
class FeatureBatch:
    """One mini-batch of embeddings with integer class labels.

    ``features`` is N x d, ``labels`` holds N class indices in
    ``[0, num_classes)``.  ``num_classes`` defaults to ``max(labels) + 1``.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise DimensionMismatchError("labels must be a 1-D integer array")
        n = self.features.shape[0]
        if n < 1:
            raise DimensionMismatchError("batch must contain at least one sample")
        if self.labels.shape[0] != n:
            raise DimensionMismatchError(
                f"{self.labels.shape[0]} labels for {n} feature rows"
            )
        if self.num_classes <= 0:
            self.num_classes = int(self.labels.max()) + 1
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise LabelOutOfRangeError(
                f"labels must lie in [0, {self.num_classes})"
            )

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]
