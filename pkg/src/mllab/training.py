"""Mini-batch SGD-with-momentum training with a step learning-rate drop.

One epoch shuffles the training set (deterministically per seed and
epoch index), walks it in batches, and applies one optimizer step per
batch over the concatenation of network and classifier parameters.
After every epoch the frozen weights are scored on the training set
(classification argmax accuracy) and on the test set (verification
accuracy), producing one record per epoch.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .evaluation import kfold_verification, make_pairs, pair_distances_from_embeddings
from .exceptions import (
    DimensionMismatchError,
    EpochOutOfRangeError,
    InvalidConfigError,
)
from .losses import decision_logits, evaluate_loss
from .seeding import derive_seed
from .tensor import FeatureBatch


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD-with-momentum settings and the training horizon."""

    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    drop_epochs: tuple = (8, 12, 16)
    drop_factor: float = 10.0
    batch_size: int = 64
    epochs: int = 20

    def __post_init__(self):
        if self.lr0 <= 0:
            raise InvalidConfigError("lr0 must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight_decay must be >= 0")
        if self.drop_factor <= 0:
            raise InvalidConfigError("drop_factor must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfigError("batch_size and epochs must be >= 1")
        drops = tuple(self.drop_epochs)
        if any(d < 1 or d > self.epochs for d in drops):
            raise InvalidConfigError("drop_epochs must lie within [1, epochs]")
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise InvalidConfigError("drop_epochs must be strictly increasing")


@dataclass
class OptimizerState:
    """Velocity buffer congruent with the flat trainable parameter vector."""

    velocity: np.ndarray

    @classmethod
    def zeros(cls, num_params):
        return cls(velocity=np.zeros(num_params))


def lr_at_epoch(config, epoch):
    """Learning rate for a 1-based epoch; each drop takes effect at the
    start of the epoch it names."""
    if not (1 <= epoch <= config.epochs):
        raise EpochOutOfRangeError(
            f"epoch {epoch} outside [1, {config.epochs}]"
        )
    drops = sum(1 for d in config.drop_epochs if d <= epoch)
    return config.lr0 / config.drop_factor**drops


def sgd_momentum_step(params, grads, state, lr, config):
    """One decoupled-lr momentum update.

    g' = g + weight_decay * p;  v <- momentum * v + g';  p <- p - lr * v.
    Returns fresh (params, state); inputs are left untouched.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.velocity.shape:
        raise DimensionMismatchError(
            f"params {params.shape}, grads {grads.shape}, "
            f"velocity {state.velocity.shape} must agree"
        )
    g = grads + config.weight_decay * params
    v = config.momentum * state.velocity + g
    return params - lr * v, OptimizerState(velocity=v)


def _pack(net, classifier):
    return np.concatenate(
        [net.get_flat_params(), classifier.weights.ravel(), classifier.biases]
    )


def _unpack(flat, net, classifier):
    n_net = net.num_params
    n_w = classifier.weights.size
    net.set_flat_params(flat[:n_net])
    classifier.weights[...] = flat[n_net : n_net + n_w].reshape(
        classifier.weights.shape
    )
    classifier.biases[...] = flat[n_net + n_w :]


def _pack_grads(net_grads, loss_out, classifier):
    grad_w = loss_out.grad_weights
    grad_b = loss_out.grad_biases
    if grad_w is None:
        grad_w = np.zeros_like(classifier.weights)
    if grad_b is None:
        grad_b = np.zeros_like(classifier.biases)
    return np.concatenate([net_grads, grad_w.ravel(), grad_b])


def _batch_slices(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def classification_accuracy(net, classifier, spec, sampleset, batch_size=256):
    """Argmax accuracy (%) under the loss's own logit definition."""
    correct = 0
    for sl in _batch_slices(sampleset.n, batch_size):
        emb = net.embed(sampleset.inputs[sl])
        batch = FeatureBatch(emb, sampleset.labels[sl], classifier.num_classes)
        logits = decision_logits(spec, batch, classifier)
        correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
    return 100.0 * correct / sampleset.n


def train_epoch(net, classifier, spec, trainset, state, lr, config, seed, epoch):
    """One pass over the training set; returns (state, mean_loss, train_acc).

    The sample order is a deterministic function of (seed, epoch); the
    final partial batch is kept.  Network and classifier parameters are
    updated in place, one optimizer step per batch.
    """
    if trainset.n < 1:
        raise InvalidConfigError("training set is empty")
    order = np.random.default_rng(
        derive_seed(seed, f"shuffle-epoch-{epoch}")
    ).permutation(trainset.n)

    total_loss = 0.0
    for sl in _batch_slices(trainset.n, config.batch_size):
        idx = order[sl]
        emb, caches = net.forward(trainset.inputs[idx])
        batch = FeatureBatch(emb, trainset.labels[idx], classifier.num_classes)
        out = evaluate_loss(spec, batch, classifier)
        net_grads = net.backward(out.grad_features, caches)
        grads = _pack_grads(net_grads, out, classifier)
        params, state = sgd_momentum_step(
            _pack(net, classifier), grads, state, lr, config
        )
        _unpack(params, net, classifier)
        total_loss += out.loss * idx.size

    mean_loss = total_loss / trainset.n
    train_acc = classification_accuracy(net, classifier, spec, trainset)
    return state, mean_loss, train_acc


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainRun:
    """Per-epoch record stream plus the final flat parameter vector."""

    records: list
    final_params: np.ndarray
    seed: int

    def test_accuracy_series(self):
        return np.array([r.test_acc for r in self.records])

    def to_jsonl(self):
        """One flat JSON object per epoch; byte-stable for a fixed seed."""
        return (
            "\n".join(json.dumps(asdict(r), sort_keys=True) for r in self.records)
            + "\n"
        )


def verification_accuracy(net, testset, pairs, folds, seed):
    """k-fold verification accuracy of the current embeddings."""
    distances = pair_distances_from_embeddings(net.embed(testset.inputs), pairs)
    flags = np.array([p.is_same for p in pairs], dtype=bool)
    return kfold_verification(distances, flags, folds=folds, seed=seed)


def run_training(
    net,
    classifier,
    spec,
    trainset,
    testset,
    config,
    seed,
    num_pairs=600,
    folds=10,
):
    """Train for ``config.epochs`` epochs, testing after every one.

    The verification pair list is fixed once per run; after each epoch
    the frozen weights embed the test set and the k-fold protocol
    produces that epoch's test accuracy.
    """
    pairs = make_pairs(testset, num_pairs, derive_seed(seed, "pairs"))
    fold_seed = derive_seed(seed, "folds")
    state = OptimizerState.zeros(_pack(net, classifier).size)
    records = []
    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(config, epoch)
        state, mean_loss, train_acc = train_epoch(
            net, classifier, spec, trainset, state, lr, config, seed, epoch
        )
        test_acc = verification_accuracy(net, testset, pairs, folds, fold_seed)
        records.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                train_loss=float(mean_loss),
                train_acc=float(train_acc),
                test_acc=float(test_acc),
            )
        )
    return TrainRun(records=records, final_params=_pack(net, classifier), seed=seed)
