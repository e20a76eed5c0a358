"""Verification protocol: pair lists, thresholds, and summary metrics.

Same/different decisions come from thresholding the squared Euclidean
distance between unit-normalized embeddings; the threshold is chosen by
exhaustive sweep, optionally cross-validated over k folds.  The three
summary metrics of a training run are the best test accuracy, the first
epoch attaining it, and the mean/std over a fixed late-epoch window.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    EmptyInputError,
    InsufficientDataError,
    InvalidConfigError,
    SeriesTooShortError,
    TooFewPairsError,
)
from .tensor import normalize_rows


@dataclass(frozen=True)
class VerificationPair:
    index_a: int
    index_b: int
    is_same: bool

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise InvalidConfigError("a pair must reference two distinct samples")


@dataclass(frozen=True)
class EvalReport:
    """Summary of one run's test-accuracy series (all accuracies in %)."""

    best_acc: float
    best_epoch: int
    window_mean: float = None
    window_std: float = None


def make_pairs(testset, num_pairs, seed):
    """Sample a balanced verification pair list, half same, half different.

    All candidate unordered pairs are enumerated and drawn without
    replacement, so no duplicates occur and the list is deterministic
    per seed.
    """
    if num_pairs < 2 or num_pairs % 2 != 0:
        raise InvalidConfigError("num_pairs must be a positive even number")
    labels = testset.labels
    n = labels.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    pos = np.flatnonzero(same)
    neg = np.flatnonzero(~same)
    half = num_pairs // 2
    if pos.size < half:
        raise InsufficientDataError(
            f"only {pos.size} same-identity pairs available, need {half}"
        )
    if neg.size < half:
        raise InsufficientDataError(
            f"only {neg.size} different-identity pairs available, need {half}"
        )
    rng = np.random.default_rng(seed)
    chosen_pos = np.sort(rng.choice(pos, size=half, replace=False))
    chosen_neg = np.sort(rng.choice(neg, size=half, replace=False))
    pairs = [
        VerificationPair(int(iu[k]), int(ju[k]), True) for k in chosen_pos
    ]
    pairs += [
        VerificationPair(int(iu[k]), int(ju[k]), False) for k in chosen_neg
    ]
    return pairs


def pair_distances_from_embeddings(embeddings, pairs):
    """Squared Euclidean distance between unit-normalized embeddings."""
    unit, _ = normalize_rows(embeddings, "embeddings")
    a = np.array([p.index_a for p in pairs])
    b = np.array([p.index_b for p in pairs])
    diff = unit[a] - unit[b]
    return np.sum(diff * diff, axis=1)


def pair_distances(net, testset, pairs):
    """Embed the test set and return one distance per verification pair."""
    return pair_distances_from_embeddings(net.embed(testset.inputs), pairs)


def pair_flags(pairs):
    return np.array([p.is_same for p in pairs], dtype=bool)


def _candidate_thresholds(distances):
    distinct = np.unique(distances)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([distinct[0] - 1.0], mids, [distinct[-1] + 1.0]))


def best_threshold_accuracy(distances, is_same):
    """Sweep every candidate threshold; return (threshold, accuracy %).

    Candidates are midpoints of consecutive distinct distances plus a
    below-min and an above-max sentinel.  Prediction is "same" iff
    distance < threshold; ties resolve to the smallest threshold.
    """
    d = np.asarray(distances, dtype=np.float64)
    flags = np.asarray(is_same, dtype=bool)
    if d.size == 0:
        raise EmptyInputError("no pairs to threshold")
    if d.shape != flags.shape:
        raise InvalidConfigError("distances and flags must align")
    best_t = None
    best_acc = -1.0
    for t in _candidate_thresholds(d):
        acc = float(np.mean((d < t) == flags))
        if acc > best_acc:
            best_acc = acc
            best_t = float(t)
    return best_t, best_acc * 100.0


def kfold_verification(distances, is_same, folds=10, seed=0):
    """Mean held-out accuracy with per-fold threshold selection.

    Pairs are shuffled once (seeded), split into equal-as-possible
    contiguous folds, and each fold is scored with the threshold chosen
    on the remaining ones.
    """
    d = np.asarray(distances, dtype=np.float64)
    flags = np.asarray(is_same, dtype=bool)
    if folds < 1:
        raise InvalidConfigError("folds must be >= 1")
    if d.size < folds:
        raise TooFewPairsError(f"{d.size} pairs cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(d.size)
    accuracies = []
    for chunk in np.array_split(perm, folds):
        held = np.zeros(d.size, dtype=bool)
        held[chunk] = True
        if np.all(held):  # single fold degenerates to a plain sweep
            _, acc = best_threshold_accuracy(d, flags)
            accuracies.append(acc)
            continue
        t, _ = best_threshold_accuracy(d[~held], flags[~held])
        accuracies.append(float(np.mean((d[held] < t) == flags[held])) * 100.0)
    return float(np.mean(accuracies))


def convergence_epoch(series):
    """1-based index of the first occurrence of the series maximum."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInputError("empty accuracy series")
    return int(np.argmax(arr)) + 1


def window_mean_std(series, lo=10, hi=20, sample_std=False):
    """Mean and std of the accuracies over epochs lo..hi inclusive.

    Population standard deviation by default; set ``sample_std`` for the
    (n-1)-denominator variant.
    """
    arr = np.asarray(series, dtype=np.float64)
    if not (1 <= lo <= hi):
        raise InvalidConfigError("need 1 <= lo <= hi")
    if arr.size < hi:
        raise SeriesTooShortError(
            f"series has {arr.size} epochs, window needs {hi}"
        )
    window = arr[lo - 1 : hi]
    return float(np.mean(window)), float(np.std(window, ddof=1 if sample_std else 0))


def build_report(series, lo=10, hi=20, sample_std=False):
    """EvalReport over a test-accuracy series; window stats only if covered."""
    series = np.asarray(series, dtype=np.float64)
    best_epoch = convergence_epoch(series)
    best = float(series[best_epoch - 1])
    if series.size >= hi:
        mean, std = window_mean_std(series, lo, hi, sample_std)
    else:
        mean, std = None, None
    return EvalReport(best, best_epoch, mean, std)


def save_pairs(pairs, path):
    """Audit export: one `index_a,index_b,is_same{0|1}` row per pair."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.index_a},{p.index_b},{1 if p.is_same else 0}\n")
