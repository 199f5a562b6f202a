"""Flat parameter vectors, layer partitions and dense helpers.

Parameter vectors are plain 1-D ``float64`` numpy arrays and projection
matrices are 2-D arrays of shape ``(D, n)`` holding one basis vector per
column. Nothing here mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, GroupIndexError, InputError, NumericError


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"{name} must be a nonempty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} contains non-finite entries")
    return v


def as_matrix(P, name: str = "matrix") -> np.ndarray:
    m = np.asarray(P, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class LayerPartition:
    """Contiguous grouping of a length-D vector.

    ``boundaries`` holds ``l + 1`` offsets, starting at 0 and ending at D;
    group ``r`` is ``w[boundaries[r]:boundaries[r + 1]]``.
    """

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2:
            raise InputError("a partition needs at least one group")
        if b[0] != 0:
            raise InputError("partition boundaries must start at 0")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise InputError(f"partition boundaries must be strictly increasing: {b}")

    @classmethod
    def whole(cls, dim: int) -> "LayerPartition":
        return cls((0, dim))

    @classmethod
    def equal(cls, dim: int, groups: int) -> "LayerPartition":
        """Split ``[0, dim)`` into ``groups`` contiguous near-equal pieces.

        The first ``dim % groups`` pieces are one element longer.
        """
        if groups < 1 or groups > dim:
            raise InputError(f"cannot split {dim} parameters into {groups} nonempty groups")
        base, extra = divmod(dim, groups)
        sizes = [base + (1 if r < extra else 0) for r in range(groups)]
        return cls.from_sizes(sizes)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "LayerPartition":
        return cls(tuple(np.concatenate([[0], np.cumsum(sizes)]).tolist()))

    @property
    def dim(self) -> int:
        return self.boundaries[-1]

    @property
    def num_groups(self) -> int:
        return len(self.boundaries) - 1

    @property
    def sizes(self) -> list[int]:
        return [hi - lo for lo, hi in zip(self.boundaries, self.boundaries[1:])]

    def bounds(self, r: int) -> tuple[int, int]:
        if not 0 <= r < self.num_groups:
            raise GroupIndexError(f"group {r} out of range for {self.num_groups} groups")
        return self.boundaries[r], self.boundaries[r + 1]


def axpy(a: float, x, y) -> np.ndarray:
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.size} vs {y.size}")
    return a * x + y


def slice_group(w, part: LayerPartition, r: int) -> np.ndarray:
    w = as_vector(w, "w")
    if w.size != part.dim:
        raise DimensionError(f"vector of length {w.size} does not match partition of {part.dim}")
    lo, hi = part.bounds(r)
    return w[lo:hi].copy()


def concat_groups(groups: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(g, dtype=np.float64) for g in groups])


def matvec_t(P, g) -> np.ndarray:
    """Return ``P.T @ g`` (basis coefficients of a gradient)."""
    P = as_matrix(P, "P")
    g = as_vector(g, "g")
    if P.shape[0] != g.size:
        raise DimensionError(f"P has {P.shape[0]} rows but g has length {g.size}")
    return P.T @ g


def matvec(P, x) -> np.ndarray:
    P = as_matrix(P, "P")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or P.shape[1] != x.size:
        raise DimensionError(f"P has {P.shape[1]} columns but x has shape {x.shape}")
    return P @ x


def span_residual(P, v) -> float:
    """Norm of the least-squares residual of ``v`` against the columns of ``P``."""
    P = np.asarray(P, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if P.shape[0] != v.size:
        raise DimensionError(f"P has {P.shape[0]} rows but v has length {v.size}")
    if P.shape[1] == 0:
        return float(np.linalg.norm(v))
    coef, *_ = np.linalg.lstsq(P, v, rcond=None)
    return float(np.linalg.norm(v - P @ coef))
