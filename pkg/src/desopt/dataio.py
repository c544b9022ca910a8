"""Dataset plumbing: LIBSVM text parsing, train/test splits, worker partitions,
and synthetic generators for desk-scale experiments.

LIBSVM lines look like ``label idx:val idx:val ...`` with 1-based, strictly
increasing indices. Internally everything is 0-based.
"""
from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .mutation import RngStream
from .objective import Dataset, SparseExample


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input; the message names the offending line."""


def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    path = Path(source)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8"), True
    return open(path, "r", encoding="utf-8"), True


def _map_labels(raw: list[float], threshold: float | None) -> list[int]:
    values = set(raw)
    if values <= {-1.0, 1.0}:
        return [int(v) for v in raw]
    if values <= {0.0, 1.0}:
        return [1 if v == 1.0 else -1 for v in raw]
    if threshold is None:
        raise LibsvmParseError(
            f"labels {sorted(values)[:6]} are neither {{-1,+1}} nor {{0,1}}; "
            "pass label_threshold to binarize them"
        )
    return [1 if v > threshold else -1 for v in raw]


def parse_libsvm(
    source,
    n_features: int | None = None,
    label_threshold: float | None = None,
) -> Dataset:
    """Parse LIBSVM-format text (path, .gz path, or open file) into a Dataset.

    Labels in {-1,+1} are kept; {0,1} maps to {-1,+1}; anything else requires
    ``label_threshold`` (label > threshold becomes +1). The dimension is the
    largest index seen unless ``n_features`` overrides it.
    """
    fh, owned = _open_text(source)
    raw_labels: list[float] = []
    rows: list[tuple[np.ndarray, np.ndarray]] = []
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            try:
                raw_labels.append(float(tokens[0]))
            except ValueError:
                raise LibsvmParseError(f"line {lineno}: non-numeric label {tokens[0]!r}") from None
            idx = np.zeros(len(tokens) - 1, dtype=np.int64)
            val = np.zeros(len(tokens) - 1)
            prev = 0
            for j, tok in enumerate(tokens[1:]):
                part = tok.split(":", 1)
                if len(part) != 2:
                    raise LibsvmParseError(f"line {lineno}: expected idx:val, got {tok!r}")
                try:
                    i = int(part[0])
                    v = float(part[1])
                except ValueError:
                    raise LibsvmParseError(f"line {lineno}: non-numeric token {tok!r}") from None
                if i <= 0:
                    raise LibsvmParseError(f"line {lineno}: index {i} must be >= 1")
                if i <= prev:
                    raise LibsvmParseError(f"line {lineno}: indices not strictly increasing at {i}")
                prev = i
                idx[j] = i - 1
                val[j] = v
            rows.append((idx, val))
    finally:
        if owned:
            fh.close()
    if not rows:
        raise LibsvmParseError("no examples found")
    labels = _map_labels(raw_labels, label_threshold)
    examples = [
        SparseExample(indices=idx, values=val, label=lab)
        for (idx, val), lab in zip(rows, labels)
    ]
    return Dataset.from_examples(examples, n_features=n_features)


def write_libsvm(dataset: Dataset, target) -> None:
    """Serialize a Dataset back to LIBSVM text (1-based indices, exact floats)."""
    fh, owned = (target, False) if hasattr(target, "write") else (open(target, "w", encoding="utf-8"), True)
    try:
        for i in range(len(dataset)):
            ex = dataset.example(i)
            parts = [f"{ex.label:+d}"]
            parts.extend(f"{j + 1}:{v:.17g}" for j, v in zip(ex.indices, ex.values))
            fh.write(" ".join(parts) + "\n")
    finally:
        if owned:
            fh.close()


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/test split: |train| = round(train_fraction * N)."""

    train_fraction: float
    shuffle_stream: RngStream

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")


def split_train_test(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Shuffle with the configured stream and split into disjoint train/test sets."""
    if len(dataset) < 2:
        raise ValueError("need at least 2 examples to split")
    n = len(dataset)
    n_train = int(round(spec.train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(
            f"train_fraction={spec.train_fraction} leaves an empty side for N={n}"
        )
    perm = spec.shuffle_stream.gen.permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint worker shards covering the training set, balanced within one."""

    worker_shards: tuple[np.ndarray, ...]

    @property
    def num_workers(self) -> int:
        return len(self.worker_shards)


def partition_uniform(train: Dataset, num_workers: int, stream: RngStream) -> PartitionPlan:
    """Seeded shuffle then round-robin deal into num_workers shards."""
    n = len(train)
    if num_workers < 1:
        raise ValueError("need at least one worker")
    if num_workers > n:
        raise ValueError(f"cannot split {n} examples across {num_workers} workers")
    perm = stream.gen.permutation(n)
    shards = tuple(perm[i::num_workers] for i in range(num_workers))
    return PartitionPlan(worker_shards=shards)


class SynthKind(Enum):
    SEPARABLE_LINEAR = "separable"
    NOISY_LINEAR = "noisy"


def synth_dataset_with_truth(
    kind: SynthKind, n: int, num_examples: int, stream: RngStream
) -> tuple[Dataset, np.ndarray]:
    """Generate a sparse linear-model dataset and return the ground-truth weights.

    Features: each example has max(1, round(n/4)) distinct Gaussian entries.
    Labels: sign of the ground-truth margin (ties +1); NoisyLinear flips each
    label independently with probability 0.1.
    """
    if n < 1 or num_examples < 1:
        raise ValueError("n and num_examples must be >= 1")
    gen = stream.gen
    w_star = gen.standard_normal(n)
    nnz = max(1, round(0.25 * n))
    examples = []
    for _ in range(num_examples):
        idx = np.sort(gen.choice(n, size=nnz, replace=False)).astype(np.int64)
        val = gen.standard_normal(nnz)
        margin = float(val @ w_star[idx])
        label = 1 if margin >= 0.0 else -1
        examples.append(SparseExample(indices=idx, values=val, label=label))
    dataset = Dataset.from_examples(examples, n_features=n)
    if kind is SynthKind.NOISY_LINEAR:
        flips = gen.random(num_examples) < 0.1
        labels = np.where(flips, -dataset.labels, dataset.labels)
        dataset = Dataset(dataset.matrix, labels)
    return dataset, w_star


def synth_dataset(kind: SynthKind, n: int, num_examples: int, stream: RngStream) -> Dataset:
    dataset, _ = synth_dataset_with_truth(kind, n, num_examples, stream)
    return dataset
