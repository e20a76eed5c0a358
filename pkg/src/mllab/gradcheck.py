"""Central finite-difference verification of the analytic gradients.

This is the independent route against which every hand-derived backward
pass is checked: the loss is treated as a black-box scalar function and
differenced coordinate by coordinate.  Nothing here reuses the analytic
gradient code paths.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfigError, UnknownLossKindError
from .losses import LOSS_KINDS, ClassifierParams, LossSpec, evaluate_loss
from .tensor import FeatureBatch

DEFAULT_STEP = 1e-6
DEFAULT_TOL = 1e-5

# Samples whose target angle sits this close to an arccos endpoint are
# resampled: the true derivative is unbounded there.
ENDPOINT_EXCLUSION = 1e-3


def finite_difference(f, x, step=DEFAULT_STEP):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f(x)
        xf[i] = orig - step
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """Norm-level relative disagreement between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-12:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / denom)


def _target_angles(features, weights, labels):
    x_hat = features / np.linalg.norm(features, axis=1, keepdims=True)
    w_hat = weights / np.linalg.norm(weights, axis=0, keepdims=True)
    cosines = np.clip(x_hat @ w_hat, -1.0, 1.0)
    return np.arccos(cosines[np.arange(len(labels)), labels])


def _sample_instance(kind, spec, rng):
    """One random (batch, params) pair, resampled away from singular points."""
    for _ in range(200):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(3, 9))
        c = int(rng.integers(2, 6))
        features = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0)
        labels = rng.integers(0, c, size=n)
        weights = rng.standard_normal((d, c))
        biases = rng.standard_normal(c) * 0.1

        if kind in ("asoftmax", "arcface"):
            theta = _target_angles(features, weights, labels)
            if np.any(theta < ENDPOINT_EXCLUSION) or np.any(
                theta > math.pi - ENDPOINT_EXCLUSION
            ):
                continue
            if kind == "asoftmax":
                # stay away from the interior gluing points k*pi/m too:
                # psi is continuous there but the FD step straddles a
                # derivative that is only piecewise smooth
                m = spec.m_int
                bound = np.round(theta * m / math.pi) * math.pi / m
                if np.any(np.abs(theta - bound) < 10 * DEFAULT_STEP):
                    continue
        if kind == "marginal_joint":
            x_hat = features / np.linalg.norm(features, axis=1, keepdims=True)
            diff = x_hat[:, None, :] - x_hat[None, :, :]
            sq = np.sum(diff * diff, axis=2)
            y = np.where(labels[:, None] == labels[None, :], 1.0, -1.0)
            raw = spec.error_margin - y * (spec.dist_threshold - sq)
            off = ~np.eye(n, dtype=bool)
            if np.any(np.abs(raw[off]) < 10 * DEFAULT_STEP):
                continue  # hinge kink under the FD step

        batch = FeatureBatch(features, labels, num_classes=c)
        params = ClassifierParams(weights.copy(), biases)
        return batch, params
    raise RuntimeError("could not sample a non-singular gradcheck instance")


@dataclass
class GradcheckResult:
    kind: str
    trials: int
    max_error: float
    failures: int
    tolerance: float
    worst: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.failures == 0


def check_loss_once(spec, batch, params, step=DEFAULT_STEP):
    """Max relative error over feature, weight and bias gradients."""
    out = evaluate_loss(spec, batch, params)
    errors = {}

    def loss_at_features(f):
        b = FeatureBatch(f.copy(), batch.labels, batch.num_classes)
        return evaluate_loss(spec, b, params).loss

    def loss_at_weights(w):
        p = ClassifierParams(w.copy(), params.biases.copy())
        return evaluate_loss(spec, batch, p).loss

    def loss_at_biases(b):
        p = ClassifierParams(params.weights.copy(), b.copy())
        return evaluate_loss(spec, batch, p).loss

    errors["features"] = relative_error(
        out.grad_features, finite_difference(loss_at_features, batch.features, step)
    )
    errors["weights"] = relative_error(
        out.grad_weights, finite_difference(loss_at_weights, params.weights, step)
    )
    errors["biases"] = relative_error(
        out.grad_biases, finite_difference(loss_at_biases, params.biases, step)
    )
    return errors


def run_gradcheck(kind, trials, seed=0, step=DEFAULT_STEP, tol=DEFAULT_TOL):
    """Run ``trials`` randomized finite-difference checks for one loss kind."""
    if kind not in LOSS_KINDS:
        raise UnknownLossKindError(f"unknown loss kind {kind!r}")
    if trials < 1:
        raise InvalidConfigError("trials must be >= 1")
    spec = LossSpec.default(kind)
    rng = np.random.default_rng(seed)
    max_error = 0.0
    failures = 0
    worst = {}
    for trial in range(trials):
        if kind == "asoftmax":
            spec = spec.with_overrides(m_int=int(rng.integers(1, 5)))
        batch, params = _sample_instance(kind, spec, rng)
        errors = check_loss_once(spec, batch, params, step)
        err = max(errors.values())
        if err > max_error:
            max_error = err
            worst = {"trial": trial, **errors}
        if err > tol:
            failures += 1
    return GradcheckResult(kind, trials, max_error, failures, tol, worst)
