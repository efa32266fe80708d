"""Bootstrap training data for the selection probability estimator.

Each bootstrap replicate yields a basis vector and a binary label recording
whether re-running the selection reproduced the observed model. When the
basis marginalizes out an ancillary component V, replicate bases are shifted
so that the replicate V is centered at the observed V (the bootstrap centers
statistics at the observed data, so this removes the systematic offset
between the bootstrap selection probability and the one we want to learn).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .data import RandomSeed, resample
from .selectors import SelectionError, SelectorOutput

__all__ = [
    "TrainingSet",
    "TrainingBuild",
    "build_training_set",
    "balance",
    "save_training_set",
    "load_training_set",
]


@dataclass(frozen=True)
class TrainingSet:
    """Rows of (basis vector, binary same-model label)."""

    x: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        labels = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValueError("basis rows must form a 2-d array")
        if labels.shape != (x.shape[0],):
            raise ValueError("labels must align with rows")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        if x.shape[0] and not np.any(labels == 1):
            raise ValueError("training set needs at least one positive row")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def counts(self) -> tuple[int, int]:
        ones = int(self.labels.sum())
        return self.n_rows - ones, ones


@dataclass(frozen=True)
class TrainingBuild:
    """A training set plus the per-replicate statistics used for moments.

    ``thetas`` and ``bases`` hold the raw (uncentered) replicate statistics
    (theta_hat_i*, Z_i*) in replicate order; covariances of the decomposition
    are estimated from exactly these, per the protocol of estimating all
    second moments from the same bootstrap draws that produced the labels.
    """

    training: TrainingSet
    thetas: np.ndarray
    bases: np.ndarray
    labels: np.ndarray
    skipped: int


def build_training_set(
    dataset,
    selector,
    observed: SelectorOutput,
    n_replicates: int,
    rng: RandomSeed,
) -> TrainingBuild:
    """Resample, re-select, and label; the observed row is appended last.

    Replicate i draws its bootstrap sample from ``rng.child(i, 0)`` and its
    selector noise from ``rng.child(i, 1)``, so generation is reproducible
    and order-independent. A replicate that yields a valid but different
    model is a label-0 row; only hard selector errors are skipped (counted
    in ``skipped``).
    """
    rows, labels, thetas, bases = [], [], [], []
    shift = observed.vhat
    skipped = 0
    for i in range(n_replicates):
        replicate = resample(dataset, rng.child(i, 0))
        try:
            out = selector.run(replicate, rng.child(i, 1), anchor=observed.model)
        except SelectionError:
            skipped += 1
            continue
        label = 1 if out.model == observed.model else 0
        basis = out.basis if shift is None else out.basis + shift
        rows.append(basis)
        labels.append(label)
        thetas.append(np.atleast_1d(out.theta_hat))
        bases.append(out.basis)
    observed_row = observed.basis if shift is None else observed.basis + shift
    rows.append(observed_row)
    labels.append(1)
    training = TrainingSet(np.array(rows, dtype=float), np.array(labels))
    return TrainingBuild(
        training=training,
        thetas=np.array(thetas, dtype=float) if thetas else np.zeros((0, 1)),
        bases=np.array(bases, dtype=float) if bases else np.zeros((0, observed.basis.size)),
        labels=np.array(labels[:-1], dtype=np.int64),
        skipped=skipped,
    )


def balance(ts: TrainingSet, min_frac: float = 0.2) -> TrainingSet:
    """Duplicate the minority class until it holds at least ``min_frac``.

    Triggered only when the minority falls below 10%. Whole passes over the
    minority rows are appended in order, so the result is deterministic.
    A completely absent class cannot be fixed by duplication; the set is
    returned unchanged with a warning.
    """
    if ts.n_rows == 0:
        raise ValueError("empty training set")
    zeros, ones = ts.counts
    if zeros == 0 or ones == 0:
        warnings.warn("one label is entirely absent; inference will degenerate toward unadjusted")
        return ts
    minority = 0 if zeros < ones else 1
    n_min, n_maj = min(zeros, ones), max(zeros, ones)
    if n_min / (n_min + n_maj) >= 0.1:
        return ts
    mask = ts.labels == minority
    x_min, y_min = ts.x[mask], ts.labels[mask]
    x, labels = ts.x, ts.labels
    count = n_min
    while count / (count + n_maj) < min_frac:
        x = np.concatenate([x, x_min])
        labels = np.concatenate([labels, y_min])
        count += n_min
    return TrainingSet(x, labels)


def save_training_set(ts: TrainingSet, path) -> None:
    """CSV with columns z_1..z_d, label."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z_{j + 1}" for j in range(ts.d)] + ["label"])
        for row, label in zip(ts.x, ts.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(label)])


def load_training_set(path) -> TrainingSet:
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError("expected a header row ending in 'label'")
        rows, labels = [], []
        for record in reader:
            rows.append([float(v) for v in record[:-1]])
            labels.append(int(record[-1]))
    return TrainingSet(np.array(rows, dtype=float), np.array(labels))
