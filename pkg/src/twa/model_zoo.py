"""Small numpy MLPs with hand-written backprop, plus toy datasets.

Parameter layout: for each layer in order, the weight matrix of shape
``(fan_in, fan_out)`` flattened row-major, followed by its bias of length
``fan_out``. Forward pass is ``a @ W + b``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, EmptyInputError, InputError, NumericError, ParseError
from .param_space import LayerPartition

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise InputError(f"layer sizes must be >= 2 positive widths, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def num_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.shapes)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def partition(self) -> LayerPartition:
        """One group per weight matrix and one per bias vector."""
        sizes = []
        for fi, fo in self.shapes:
            sizes += [fi * fo, fo]
        return LayerPartition.from_sizes(sizes)

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or w.size != self.num_params:
            raise DimensionError(f"expected {self.num_params} parameters, got shape {w.shape}")
        layers, pos = [], 0
        for fi, fo in self.shapes:
            W = w[pos:pos + fi * fo].reshape(fi, fo)
            pos += fi * fo
            b = w[pos:pos + fo]
            pos += fo
            layers.append((W, b))
        return layers


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: int | None = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyInputError(f"dataset {self.name!r} has no rows")
        if y.shape != (X.shape[0],):
            raise DimensionError(f"{X.shape[0]} feature rows but labels have shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InputError("labels must be integers")
            y = y.astype(np.int64)
        if not np.all(np.isfinite(X)):
            raise NumericError(f"dataset {self.name!r} has non-finite features")
        k = self.num_classes if self.num_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= k:
            raise InputError(f"labels must lie in [0, {k})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(np.int64))
        object.__setattr__(self, "num_classes", k)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name, self.num_classes)


class BatchLoss(NamedTuple):
    value: float
    gradient: np.ndarray


def init_params(spec: MlpSpec) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    parts = []
    for fi, fo in spec.shapes:
        bound = 1.0 / np.sqrt(fi)
        parts.append(rng.uniform(-bound, bound, size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(np.float64) if name == "relu" else 1.0 - a * a


def _check_batch(spec: MlpSpec, batch: Dataset):
    if batch.input_dim != spec.layer_sizes[0]:
        raise DimensionError(f"model expects {spec.layer_sizes[0]} features, data has {batch.input_dim}")
    if batch.labels.max() >= spec.num_classes:
        raise DimensionError(f"label {batch.labels.max()} exceeds model output width {spec.num_classes}")


def forward(spec: MlpSpec, w, X: np.ndarray) -> np.ndarray:
    """Logits for the rows of ``X``."""
    a = np.asarray(X, dtype=np.float64)
    layers = spec.unpack(w)
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        a = z if i == len(layers) - 1 else _act(spec.activation, z)
    return a


def loss_and_grad(spec: MlpSpec, w, batch: Dataset) -> BatchLoss:
    """Mean cross-entropy over ``batch`` and its exact gradient w.r.t. ``w``."""
    _check_batch(spec, batch)
    layers = spec.unpack(w)
    X, y = batch.features, batch.labels
    m = y.size

    acts, pre = [X], []
    a = X
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            pre.append(z)
            a = z if i == len(layers) - 1 else _act(spec.activation, z)
            acts.append(a)
    logits = acts[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activations in forward pass")

    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(m)
    value = float(np.mean(lse - shifted[rows, y]))

    delta = np.exp(shifted - lse[:, None])
    delta[rows, y] -= 1.0
    delta /= m

    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((acts[i].T @ delta).ravel())
        grads[-1] = np.concatenate([grads[-1], delta.sum(axis=0)])
        if i > 0:
            delta = (delta @ W.T) * _act_grad(spec.activation, pre[i - 1], acts[i])
    gradient = np.concatenate(grads[::-1])
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite gradient")
    return BatchLoss(value, gradient)


def predict(spec: MlpSpec, w, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class.
    return np.argmax(forward(spec, w, X), axis=1)


def evaluate(spec: MlpSpec, w, data: Dataset) -> float:
    _check_batch(spec, data)
    return float(np.mean(predict(spec, w, data.features) == data.labels))


def make_synthetic(kind: str, m: int, noise: float, seed: int) -> Dataset:
    """Balanced two-class toy data in the plane.

    ``two_gaussians`` puts the class means at (-0.5, -0.5) and (0.5, 0.5)
    with isotropic noise of standard deviation ``noise``. ``two_moons`` is
    the usual pair of interleaved half circles.
    """
    if m < 2:
        raise InputError("need at least two points")
    if noise < 0:
        raise InputError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    counts = ((m + 1) // 2, m // 2)
    labels = np.repeat([0, 1], counts)
    if kind == "two_gaussians":
        means = np.array([[-0.5, -0.5], [0.5, 0.5]])
        X = means[labels] + noise * rng.standard_normal((m, 2))
    elif kind == "two_moons":
        t = rng.uniform(0.0, np.pi, size=m)
        outer = np.stack([np.cos(t), np.sin(t)], axis=1)
        inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        X = np.where(labels[:, None] == 0, outer, inner) + noise * rng.standard_normal((m, 2))
    else:
        raise InputError(f"unknown synthetic dataset {kind!r}")
    order = rng.permutation(m)
    return Dataset(X[order], labels[order], name=kind, num_classes=2)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path) -> Dataset:
    """Read rows of ``f1,...,fd,label``; a non-numeric first cell marks a header."""
    path = Path(path)
    rows, labels = [], []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if len(row) < 2:
                raise ParseError(f"{path}:{lineno}: need at least one feature and a label", lineno)
            try:
                feats = [float(c) for c in row[:-1]]
                lab = float(row[-1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed row {','.join(row)!r}", lineno) from None
            if not lab.is_integer():
                raise ParseError(f"{path}:{lineno}: label {row[-1]!r} is not an integer", lineno)
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} features, got {len(feats)}", lineno)
            rows.append(feats)
            labels.append(int(lab))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels, dtype=np.int64), name=path.stem)
