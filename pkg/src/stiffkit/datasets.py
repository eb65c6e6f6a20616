"""Small synthetic classification tasks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DATASET_KINDS = ("blobs", "moons", "spirals")


@dataclass(frozen=True)
class Dataset:
    name: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def input_dim(self):
        return self.X_train.shape[1]

    def to_dict(self):
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "X_train": self.X_train.tolist(),
            "y_train": self.y_train.tolist(),
            "X_test": self.X_test.tolist(),
            "y_test": self.y_test.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"],
            np.asarray(d["X_train"], dtype=np.float64).reshape(len(d["X_train"]), -1),
            np.asarray(d["y_train"], dtype=np.int64),
            np.asarray(d["X_test"], dtype=np.float64).reshape(len(d["X_test"]), -1),
            np.asarray(d["y_test"], dtype=np.int64),
            int(d["num_classes"]),
        )


def _blobs(rng, n, noise, classes):
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = np.arange(n) % classes
    X = centers[y] + noise * rng.standard_normal((n, 2))
    return X, y


def _moons(rng, n, noise):
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0, np.pi, n0)
    t1 = np.linspace(0, np.pi, n1)
    X = np.concatenate(
        [
            np.stack([np.cos(t0), np.sin(t0)], axis=1),
            np.stack([1 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
        ]
    )
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return X + noise * rng.standard_normal(X.shape), y


def _spirals(rng, n, noise, classes, turns):
    y = np.arange(n) % classes
    # radius grows one unit per turn, so adjacent arms stay 1/classes apart
    r = rng.uniform(0.05, 1.0, size=n)
    theta = 2 * np.pi * turns * r + 2 * np.pi * y / classes
    X = turns * np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return X + noise * rng.standard_normal(X.shape), y


def synth_dataset(kind, n=1000, noise=0.1, seed=0, classes=None, turns=1.5):
    """Generate, shuffle, split 80/20 and standardise on the training split.

    ``classes`` defaults to 3 for blobs and 2 otherwise; ``turns`` only
    applies to spirals.
    """
    if kind not in DATASET_KINDS:
        raise ValidationError(f"unknown dataset {kind!r}; expected one of {DATASET_KINDS}")
    if n < 20:
        raise ValidationError("n must be >= 20")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        classes = classes or 3
        X, y = _blobs(rng, n, noise, classes)
    elif kind == "moons":
        classes = 2
        X, y = _moons(rng, n, noise)
    else:
        classes = classes or 2
        X, y = _spirals(rng, n, noise, classes, turns)
    perm = rng.permutation(n)
    X, y = X[perm], y[perm].astype(np.int64)
    n_train = int(round(0.8 * n))
    Xtr, Xte = X[:n_train], X[n_train:]
    mean = Xtr.mean(axis=0)
    std = Xtr.std(axis=0)
    std[std == 0] = 1.0
    return Dataset(kind, (Xtr - mean) / std, y[:n_train], (Xte - mean) / std, y[n_train:], classes)
