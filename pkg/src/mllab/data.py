"""Synthetic identity datasets on the unit hypersphere.

Each identity is a unit prototype vector; samples are the prototype
plus isotropic Gaussian noise, re-normalized to unit length.  Train and
test splits draw from disjoint identity sets, standing in for the
train-on-one-dataset / verify-on-another protocol at desk scale.  Also
houses dataset file I/O and the byte-to-real pixel normalization.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    InfeasibleSeparationError,
    InvalidConfigError,
    LabelOutOfRangeError,
    ParseError,
    RangeError,
)
from .seeding import derive_seed

DATASET_HEADER_PREFIX = "#mllab-dataset v1"


@dataclass
class IdentityPrototypes:
    """C unit vectors with a guaranteed pairwise angular separation."""

    prototypes: np.ndarray
    seed: int
    min_angle: float

    @property
    def num_classes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]


@dataclass
class SampleSet:
    """Labeled input vectors for one split of an experiment."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = field(default=0)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise InvalidConfigError("inputs must be 2-D and labels 1-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidConfigError("label count must equal input row count")
        if self.num_classes <= 0:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise LabelOutOfRangeError(
                f"labels must lie in [0, {self.num_classes})"
            )

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def identity_set(self):
        return set(int(v) for v in np.unique(self.labels))


def generate_prototypes(num_classes, dim, min_angle, seed, max_attempts=100_000):
    """Rejection-sample C unit vectors, every pair at least min_angle apart.

    Raises InfeasibleSeparationError once the attempt budget is spent,
    which happens when C is too large for the sphere at this separation.
    """
    if num_classes < 2 or dim < 2:
        raise InvalidConfigError("need num_classes >= 2 and dim >= 2")
    if not (0.0 <= min_angle <= math.pi):
        raise InvalidConfigError("min_angle must lie in [0, pi]")
    rng = np.random.default_rng(seed)
    cos_floor = math.cos(min_angle)
    accepted = np.zeros((0, dim))
    attempts = 0
    while accepted.shape[0] < num_classes:
        if attempts >= max_attempts:
            raise InfeasibleSeparationError(
                f"placed {accepted.shape[0]}/{num_classes} prototypes in "
                f"{attempts} attempts (dim={dim}, min_angle={min_angle:.3f})"
            )
        attempts += 1
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            continue
        v /= norm
        # small slack keeps the >= min_angle invariant safe under the
        # roundtrip through arccos
        if accepted.shape[0] and np.max(accepted @ v) > cos_floor - 1e-12:
            continue
        accepted = np.vstack([accepted, v])
    return IdentityPrototypes(accepted, seed=seed, min_angle=min_angle)


def sample_dataset(
    protos,
    per_class,
    noise_sigma,
    seed,
    label_offset=0,
    split="train",
):
    """per_class noisy samples around every prototype, unit-normalized.

    Labels are the prototype indices shifted by ``label_offset`` so a
    train/test pair can carry globally disjoint identity ids.
    """
    if per_class < 1:
        raise InvalidConfigError("per_class must be >= 1")
    if noise_sigma < 0:
        raise InvalidConfigError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    c, d = protos.prototypes.shape
    inputs = np.repeat(protos.prototypes, per_class, axis=0)
    if noise_sigma > 0:
        inputs = inputs + noise_sigma * rng.standard_normal(inputs.shape)
    inputs = inputs / np.linalg.norm(inputs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(c) + label_offset, per_class)
    return SampleSet(
        inputs, labels, split=split, num_classes=label_offset + c
    )


def apply_label_noise(sampleset, fraction, seed):
    """Reassign a fraction of labels to uniformly random other identities."""
    if not (0.0 <= fraction <= 1.0):
        raise InvalidConfigError("fraction must lie in [0, 1]")
    if fraction == 0.0:
        return sampleset
    rng = np.random.default_rng(seed)
    labels = sampleset.labels.copy()
    ids = np.unique(labels)
    if ids.size < 2:
        return sampleset
    n_flip = int(round(fraction * labels.size))
    flip = rng.choice(labels.size, size=n_flip, replace=False)
    for i in flip:
        others = ids[ids != labels[i]]
        labels[i] = rng.choice(others)
    return SampleSet(
        sampleset.inputs.copy(),
        labels,
        split=sampleset.split,
        num_classes=sampleset.num_classes,
    )


def make_split(
    seed,
    dim=32,
    train_classes=50,
    train_per_class=40,
    test_classes=20,
    test_per_class=10,
    noise_sigma=0.05,
    test_noise_sigma=None,
    min_angle=0.6,
    label_noise=0.0,
):
    """Generate a (train, test) pair over disjoint identity sets."""
    if test_noise_sigma is None:
        test_noise_sigma = noise_sigma
    protos = generate_prototypes(
        train_classes + test_classes, dim, min_angle, derive_seed(seed, "prototypes")
    )
    train_protos = IdentityPrototypes(
        protos.prototypes[:train_classes], protos.seed, protos.min_angle
    )
    test_protos = IdentityPrototypes(
        protos.prototypes[train_classes:], protos.seed, protos.min_angle
    )
    train = sample_dataset(
        train_protos,
        train_per_class,
        noise_sigma,
        derive_seed(seed, "train-samples"),
        label_offset=0,
        split="train",
    )
    test = sample_dataset(
        test_protos,
        test_per_class,
        test_noise_sigma,
        derive_seed(seed, "test-samples"),
        label_offset=train_classes,
        split="test",
    )
    if label_noise > 0:
        train = apply_label_noise(train, label_noise, derive_seed(seed, "label-noise"))
    return train, test


# Two synthetic presets probe the clean-versus-noisy training-data
# contrast: "syn-b" adds stronger feature noise plus 1% wrong labels.
PRESETS = {
    "syn-a": {"noise_sigma": 0.05, "label_noise": 0.0},
    "syn-b": {"noise_sigma": 0.12, "label_noise": 0.01},
}

PRESET_LABELS = {"syn-a": "SynA", "syn-b": "SynB"}


def build_preset(name, seed, **overrides):
    """Materialize one of the named synthetic presets."""
    key = name.lower()
    if key not in PRESETS:
        raise InvalidConfigError(
            f"unknown dataset preset {name!r}; expected one of {sorted(PRESETS)}"
        )
    kwargs = dict(PRESETS[key])
    kwargs.update(overrides)
    return make_split(seed, **kwargs)


def pixel_normalize(raw):
    """Map byte values in [0, 255] to reals via (v - 127.5) / 128."""
    arr = np.asarray(raw, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 255):
        raise RangeError("pixel values must lie in [0, 255]")
    return (arr - 127.5) / 128.0


def save_sampleset(sampleset, path):
    """Text format: header line, then one `label,f0,...,f{d-1}` row per sample.

    Floats are written with shortest round-trip precision so a
    save/load cycle reproduces the array bit-for-bit.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{DATASET_HEADER_PREFIX} dim={sampleset.dim} "
            f"classes={sampleset.num_classes}\n"
        )
        for label, row in zip(sampleset.labels, sampleset.inputs):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_sampleset(path, split="train"):
    """Parse a dataset file; errors carry the 1-based offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0]
    if not header.startswith(DATASET_HEADER_PREFIX):
        raise ParseError(
            f"expected header starting with {DATASET_HEADER_PREFIX!r}", line=1
        )
    fields = {}
    for token in header[len(DATASET_HEADER_PREFIX) :].split():
        if "=" not in token:
            raise ParseError(f"malformed header token {token!r}", line=1)
        key, value = token.split("=", 1)
        try:
            fields[key] = int(value)
        except ValueError:
            raise ParseError(f"non-integer header value {token!r}", line=1) from None
    if "dim" not in fields or "classes" not in fields:
        raise ParseError("header must declare dim= and classes=", line=1)
    dim = fields["dim"]
    num_classes = fields["classes"]
    if dim < 1 or num_classes < 1:
        raise ParseError("dim and classes must be positive", line=1)

    rows = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise ParseError(
                f"expected {dim + 1} fields, found {len(parts)}", line=lineno
            )
        try:
            label = int(parts[0])
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", line=lineno) from None
        if not (0 <= label < num_classes):
            raise LabelOutOfRangeError(
                f"line {lineno}: label {label} outside [0, {num_classes})"
            )
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise ParseError("bad float field", line=lineno) from None
        labels.append(label)
        rows.append(values)
    if not rows:
        raise ParseError("no sample rows after the header", line=1)
    return SampleSet(
        np.array(rows), np.array(labels), split=split, num_classes=num_classes
    )
