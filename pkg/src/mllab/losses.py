"""Forward and analytic backward passes for the five benchmark losses.

Implemented heads: plain cross-entropy, angular softmax (multiplicative
angular margin), additive-margin softmax, additive angular margin
("arcface"), and the pairwise marginal loss with its joint
cross-entropy form.  Every head returns the scalar loss together with
exact gradients w.r.t. the raw input features and the raw classifier
parameters; normalization performed inside a head is part of the
differentiated computation, which is what makes the finite-difference
checks in the test suite meaningful.

Conventions shared by the margin heads:
  * classifier weight columns are L2-normalized internally and biases
    are forced to zero,
  * cosines are clamped into [-1, 1] before any arccos,
  * angles live in [0, pi].
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exceptions import (
    BatchTooSmallError,
    DimensionMismatchError,
    DomainError,
    InvalidConfigError,
    UnknownLossKindError,
)
from .tensor import (
    EPS_NORM,
    FeatureBatch,
    as_matrix,
    logsumexp_rows,
    normalize_columns,
    normalize_rows,
    softmax_rows,
)

LOSS_KINDS = ("cross_entropy", "asoftmax", "amsoftmax", "arcface", "marginal_joint")

# Conventional hyperparameter defaults taken from the methods each head
# originates from; none of them is ground truth for this benchmark.
_KIND_DEFAULTS = {
    "cross_entropy": {},
    "asoftmax": {"m_int": 4},
    "amsoftmax": {"m_add": 0.35, "s": 30.0},
    "arcface": {"m_add": 0.5, "s": 64.0},
    "marginal_joint": {"dist_threshold": 1.0, "error_margin": 0.5, "balance": 0.01},
}


@dataclass(frozen=True)
class LossSpec:
    """Loss selection plus every tunable hyperparameter in one record.

    Only the fields relevant to ``kind`` are read when evaluating:
    ``m_int`` by asoftmax, ``m_add``/``s`` by amsoftmax and arcface,
    ``dist_threshold``/``error_margin``/``balance`` by marginal_joint,
    ``normalize_features`` by cross_entropy (switches Eq.-style affine
    logits to pure cosine logits with zero bias).
    """

    kind: str
    m_int: int = 4
    m_add: float = 0.35
    s: float = 30.0
    dist_threshold: float = 1.0
    error_margin: float = 0.5
    balance: float = 0.01
    normalize_features: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise UnknownLossKindError(
                f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}"
            )
        if int(self.m_int) != self.m_int or self.m_int < 1:
            raise InvalidConfigError("m_int must be an integer >= 1")
        if self.m_add < 0:
            raise InvalidConfigError("m_add must be >= 0")
        if self.kind == "arcface" and not (0.0 <= self.m_add < math.pi):
            raise DomainError("arcface requires m_add in [0, pi)")
        if self.s <= 0:
            raise InvalidConfigError("scale s must be > 0")
        if self.dist_threshold <= 0:
            raise InvalidConfigError("dist_threshold must be > 0")
        if self.error_margin <= 0:
            raise InvalidConfigError("error_margin must be > 0")
        if self.balance < 0:
            raise InvalidConfigError("balance must be >= 0")

    @classmethod
    def default(cls, kind, **overrides):
        """Spec with the conventional defaults for ``kind`` applied."""
        if kind not in LOSS_KINDS:
            raise UnknownLossKindError(
                f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}"
            )
        fields = dict(_KIND_DEFAULTS[kind])
        fields.update(overrides)
        return cls(kind=kind, **fields)

    def with_overrides(self, **overrides):
        return replace(self, **overrides)


@dataclass
class ClassifierParams:
    """Class weight matrix (column j is the weight of class j) plus biases.

    Margin heads consume the columns in L2-normalized form and ignore
    the biases; plain cross-entropy uses both as-is.
    """

    weights: np.ndarray
    biases: np.ndarray = None

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        if self.biases is None:
            self.biases = np.zeros(self.weights.shape[1])
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.biases.shape != (self.weights.shape[1],):
            raise DimensionMismatchError(
                f"biases shape {self.biases.shape} does not match "
                f"{self.weights.shape[1]} weight columns"
            )

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def num_classes(self):
        return self.weights.shape[1]

    @classmethod
    def init(cls, dim, num_classes, seed):
        """Glorot-uniform weight columns, zero biases, deterministic per seed."""
        if dim < 1 or num_classes < 1:
            raise InvalidConfigError("classifier sizes must be >= 1")
        rng = np.random.default_rng(seed)
        a = math.sqrt(6.0 / (dim + num_classes))
        weights = rng.uniform(-a, a, size=(dim, num_classes))
        return cls(weights=weights, biases=np.zeros(num_classes))


@dataclass
class LossOutput:
    """Scalar loss plus gradients w.r.t. raw features and raw parameters.

    ``grad_weights``/``grad_biases`` are ``None`` for the standalone
    marginal loss, which has no classifier parameters.
    """

    loss: float
    grad_features: np.ndarray
    grad_weights: Optional[np.ndarray]
    grad_biases: Optional[np.ndarray]


def _check_batch_params(batch, params):
    if batch.dim != params.dim:
        raise DimensionMismatchError(
            f"feature dim {batch.dim} does not match weight rows {params.dim}"
        )
    if int(batch.labels.max()) >= params.num_classes:
        raise DimensionMismatchError(
            f"label {int(batch.labels.max())} outside the "
            f"{params.num_classes} classifier columns"
        )


def _softmax_nll(logits, labels):
    """Mean negative log softmax likelihood and its logit gradient."""
    n = logits.shape[0]
    rows = np.arange(n)
    losses = logsumexp_rows(logits) - logits[rows, labels]
    dlogits = softmax_rows(logits)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return float(np.mean(losses)), dlogits


def _backprop_row_normalization(unit_rows, norms, grad_unit):
    """Pull a gradient w.r.t. unit rows back to the raw (unnormalized) rows."""
    radial = np.sum(grad_unit * unit_rows, axis=1, keepdims=True)
    return (grad_unit - radial * unit_rows) / norms[:, None]


def _backprop_column_normalization(unit_cols, norms, grad_unit):
    radial = np.sum(grad_unit * unit_cols, axis=0, keepdims=True)
    return (grad_unit - radial * unit_cols) / norms[None, :]


def cosine_logits(batch, params, normalize_features=True):
    """N x C matrix of cosines between features and class weight columns.

    With ``normalize_features=False`` rows keep their length, so entry
    (i, j) is ``||x_i|| * cos(theta_ij)`` instead of the bare cosine.
    """
    _check_batch_params(batch, params)
    w_hat, _ = normalize_columns(params.weights)
    if normalize_features:
        x_hat, _ = normalize_rows(batch.features)
        return np.clip(x_hat @ w_hat, -1.0, 1.0)
    normalize_rows(batch.features)  # reject zero-norm rows
    return batch.features @ w_hat


def cross_entropy_loss(batch, params, normalize_features=False):
    """Mean softmax cross-entropy with exact gradients.

    Default form uses affine logits ``W^T x + b``.  With
    ``normalize_features=True`` the logits are pure cosines (features
    and weight columns unit-normalized, bias forced to zero) and the
    gradients chain through both normalizations.
    """
    _check_batch_params(batch, params)
    x = batch.features
    n, _ = x.shape
    c = params.num_classes

    if normalize_features:
        x_hat, x_norms = normalize_rows(x)
        w_hat, w_norms = normalize_columns(params.weights)
        logits = x_hat @ w_hat
        loss, dlogits = _softmax_nll(logits, batch.labels)
        grad_x = _backprop_row_normalization(x_hat, x_norms, dlogits @ w_hat.T)
        grad_w = _backprop_column_normalization(w_hat, w_norms, x_hat.T @ dlogits)
        return LossOutput(loss, grad_x, grad_w, np.zeros(c))

    logits = x @ params.weights + params.biases
    loss, dlogits = _softmax_nll(logits, batch.labels)
    grad_x = dlogits @ params.weights.T
    grad_w = x.T @ dlogits
    grad_b = dlogits.sum(axis=0)
    return LossOutput(loss, grad_x, grad_w, grad_b)


def asoftmax_psi(theta, m_int):
    """Piecewise angular margin surrogate for ``cos(m * theta)``.

    On the interval ``[k*pi/m, (k+1)*pi/m]`` the value is
    ``(-1)^k * cos(m*theta) - 2k``, which glues the cosine branches into
    a function that decreases monotonically over the whole of [0, pi].
    Accepts scalars or arrays.
    """
    m = int(m_int)
    if m < 1:
        raise InvalidConfigError("m_int must be >= 1")
    t = np.asarray(theta, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > math.pi):
        raise DomainError("theta must lie in [0, pi]")
    k = np.clip(np.floor(t * m / math.pi), 0, m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    out = sign * np.cos(m * t) - 2.0 * k
    return float(out) if np.isscalar(theta) else out


def _asoftmax_psi_dtheta(theta, m_int):
    """Derivative of the piecewise surrogate w.r.t. theta."""
    m = int(m_int)
    t = np.asarray(theta, dtype=np.float64)
    k = np.clip(np.floor(t * m / math.pi), 0, m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return -sign * m * np.sin(m * t)


def asoftmax_loss(batch, params, m_int=4, anneal_lambda=0.0):
    """Angular-softmax loss: the true-class logit is ``||x|| * psi(theta)``.

    Features stay unnormalized (their length scales every logit), weight
    columns are unit-normalized.  ``anneal_lambda > 0`` mixes the plain
    cosine logit into the margin logit as
    ``(lambda * ||x|| cos + ||x|| psi) / (1 + lambda)``; zero gives the
    pure margin form.
    """
    _check_batch_params(batch, params)
    if anneal_lambda < 0:
        raise InvalidConfigError("anneal_lambda must be >= 0")
    m = int(m_int)
    if m < 1:
        raise InvalidConfigError("m_int must be >= 1")

    x = batch.features
    labels = batch.labels
    n = x.shape[0]
    rows = np.arange(n)
    c = params.num_classes

    x_hat, x_norms = normalize_rows(x)
    w_hat, w_norms = normalize_columns(params.weights)

    scores = x @ w_hat                       # ||x_i|| cos(theta_ij)
    cos_y = np.clip(scores[rows, labels] / x_norms, -1.0, 1.0)
    theta_y = np.arccos(cos_y)
    psi = asoftmax_psi(theta_y, m)
    dpsi = _asoftmax_psi_dtheta(theta_y, m)
    sin_y = np.maximum(np.sin(theta_y), EPS_NORM)

    mix = anneal_lambda / (1.0 + anneal_lambda)
    logits = scores.copy()
    logits[rows, labels] = mix * scores[rows, labels] + (1.0 - mix) * x_norms * psi

    loss, dlogits = _softmax_nll(logits, labels)

    # Linear part: every logit (and a `mix` share of the target one)
    # depends on scores = x @ w_hat.
    dscores = dlogits.copy()
    dscores[rows, labels] *= mix
    grad_x = dscores @ w_hat.T
    grad_w_hat = x.T @ dscores

    # Margin part: z = ||x|| psi(arccos(cos_y)) for the target column.
    g_target = dlogits[rows, labels] * (1.0 - mix)
    # d z / d x  =  psi * x_hat  -  (psi' / sin) * (w_hat_y - cos_y * x_hat)
    w_y = w_hat[:, labels].T                 # N x d rows of target columns
    ratio = dpsi / sin_y
    grad_x += g_target[:, None] * (
        psi[:, None] * x_hat - ratio[:, None] * (w_y - cos_y[:, None] * x_hat)
    )
    # d z / d w_hat_y = -(psi' / sin) * x
    contrib = (-g_target * ratio)[:, None] * x
    np.add.at(grad_w_hat.T, labels, contrib)

    grad_w = _backprop_column_normalization(w_hat, w_norms, grad_w_hat)
    return LossOutput(loss, grad_x, grad_w, np.zeros(c))


def amsoftmax_loss(batch, params, m_add=0.35, s=30.0):
    """Additive-margin softmax: true-class logit ``s * (cos(theta) - m)``."""
    _check_batch_params(batch, params)
    if s <= 0:
        raise InvalidConfigError("scale s must be > 0")
    if m_add < 0:
        raise InvalidConfigError("m_add must be >= 0")

    labels = batch.labels
    n = batch.n
    rows = np.arange(n)

    x_hat, x_norms = normalize_rows(batch.features)
    w_hat, w_norms = normalize_columns(params.weights)
    cosines = np.clip(x_hat @ w_hat, -1.0, 1.0)

    logits = s * cosines
    logits[rows, labels] = s * (cosines[rows, labels] - m_add)

    loss, dlogits = _softmax_nll(logits, labels)
    dcos = s * dlogits

    grad_x = _backprop_row_normalization(x_hat, x_norms, dcos @ w_hat.T)
    grad_w = _backprop_column_normalization(w_hat, w_norms, x_hat.T @ dcos)
    return LossOutput(loss, grad_x, grad_w, np.zeros(params.num_classes))


def arcface_loss(batch, params, m_add=0.5, s=64.0):
    """Additive angular margin: true-class logit ``s * cos(theta + m)``.

    The target angle is recovered with an arccos on the clamped cosine;
    samples at the arccos endpoints have unbounded derivatives and are
    excluded from gradient checks rather than special-cased.
    """
    _check_batch_params(batch, params)
    if not (0.0 <= m_add < math.pi):
        raise DomainError("arcface requires m_add in [0, pi)")
    if s <= 0:
        raise InvalidConfigError("scale s must be > 0")

    labels = batch.labels
    n = batch.n
    rows = np.arange(n)

    x_hat, x_norms = normalize_rows(batch.features)
    w_hat, w_norms = normalize_columns(params.weights)
    cosines = np.clip(x_hat @ w_hat, -1.0, 1.0)

    theta_y = np.arccos(cosines[rows, labels])
    logits = s * cosines
    logits[rows, labels] = s * np.cos(theta_y + m_add)

    loss, dlogits = _softmax_nll(logits, labels)
    dcos = s * dlogits
    # d cos(theta + m) / d cos(theta) = sin(theta + m) / sin(theta)
    dcos[rows, labels] *= np.sin(theta_y + m_add) / np.maximum(
        np.sin(theta_y), EPS_NORM
    )

    grad_x = _backprop_row_normalization(x_hat, x_norms, dcos @ w_hat.T)
    grad_w = _backprop_column_normalization(w_hat, w_norms, x_hat.T @ dcos)
    return LossOutput(loss, grad_x, grad_w, np.zeros(params.num_classes))


def marginal_loss(batch, dist_threshold=1.0, error_margin=0.5, hinge=True):
    """Pairwise marginal loss over all ordered pairs of the batch.

    Embeddings are unit-normalized; a pair contributes
    ``max(0, xi - y_ij * (thr - ||x_hat_i - x_hat_j||^2))`` with
    ``y_ij = +1`` for same-class pairs and ``-1`` otherwise, averaged
    over the N^2 - N ordered pairs.  ``hinge=False`` reproduces the
    literal printed formula without the positive-part clamp (the loss
    can then go negative).
    """
    if dist_threshold <= 0:
        raise InvalidConfigError("dist_threshold must be > 0")
    if error_margin <= 0:
        raise InvalidConfigError("error_margin must be > 0")
    n = batch.n
    if n < 2:
        raise BatchTooSmallError("marginal loss needs at least 2 samples")

    x_hat, x_norms = normalize_rows(batch.features)
    labels = batch.labels

    diff = x_hat[:, None, :] - x_hat[None, :, :]
    sqdist = np.sum(diff * diff, axis=2)
    same = labels[:, None] == labels[None, :]
    y = np.where(same, 1.0, -1.0)
    offdiag = ~np.eye(n, dtype=bool)

    raw = error_margin - y * (dist_threshold - sqdist)
    if hinge:
        terms = np.maximum(raw, 0.0)
        active = (raw > 0.0) & offdiag
    else:
        terms = raw
        active = offdiag

    num_pairs = n * n - n
    loss = float(np.sum(terms[offdiag]) / num_pairs)

    # d term / d sqdist = y on active pairs; sqdist is symmetric so the
    # (i, j) and (j, i) contributions fold together.
    coeff = np.where(active, y, 0.0) / num_pairs
    both = coeff + coeff.T
    grad_x_hat = 2.0 * (both.sum(axis=1)[:, None] * x_hat - both @ x_hat)
    grad_x = _backprop_row_normalization(x_hat, x_norms, grad_x_hat)
    return LossOutput(loss, grad_x, None, None)


def marginal_joint_loss(batch, params, spec):
    """Cross-entropy plus ``balance`` times the marginal loss (joint form).

    Classifier parameters receive gradient only through the
    cross-entropy component; the pairwise term has none.
    """
    ce = cross_entropy_loss(batch, params, normalize_features=spec.normalize_features)
    if spec.balance == 0.0:
        return ce
    pairwise = marginal_loss(batch, spec.dist_threshold, spec.error_margin)
    return LossOutput(
        loss=ce.loss + spec.balance * pairwise.loss,
        grad_features=ce.grad_features + spec.balance * pairwise.grad_features,
        grad_weights=ce.grad_weights,
        grad_biases=ce.grad_biases,
    )


def evaluate_loss(spec, batch, params):
    """Uniform dispatch: route a (spec, batch, params) triple to its head."""
    if spec.kind == "cross_entropy":
        return cross_entropy_loss(batch, params, spec.normalize_features)
    if spec.kind == "asoftmax":
        return asoftmax_loss(batch, params, spec.m_int)
    if spec.kind == "amsoftmax":
        return amsoftmax_loss(batch, params, spec.m_add, spec.s)
    if spec.kind == "arcface":
        return arcface_loss(batch, params, spec.m_add, spec.s)
    if spec.kind == "marginal_joint":
        return marginal_joint_loss(batch, params, spec)
    raise UnknownLossKindError(f"unknown loss kind {spec.kind!r}")


def decision_logits(spec, batch, params):
    """The logit matrix a head feeds to its softmax, for accuracy counting.

    Train accuracy is defined as the fraction of samples whose true
    class attains the argmax of exactly these logits.
    """
    labels = batch.labels
    rows = np.arange(batch.n)
    if spec.kind == "cross_entropy" or spec.kind == "marginal_joint":
        if spec.normalize_features:
            return cosine_logits(batch, params, True)
        return batch.features @ params.weights + params.biases
    if spec.kind == "asoftmax":
        x_norms = np.linalg.norm(batch.features, axis=1)
        scores = cosine_logits(batch, params, False)
        cos_y = np.clip(scores[rows, labels] / x_norms, -1.0, 1.0)
        psi = asoftmax_psi(np.arccos(cos_y), spec.m_int)
        scores[rows, labels] = x_norms * psi
        return scores
    if spec.kind == "amsoftmax":
        cosines = cosine_logits(batch, params, True)
        logits = spec.s * cosines
        logits[rows, labels] = spec.s * (cosines[rows, labels] - spec.m_add)
        return logits
    if spec.kind == "arcface":
        cosines = cosine_logits(batch, params, True)
        theta_y = np.arccos(cosines[rows, labels])
        logits = spec.s * cosines
        logits[rows, labels] = spec.s * np.cos(theta_y + spec.m_add)
        return logits
    raise UnknownLossKindError(f"unknown loss kind {spec.kind!r}")
