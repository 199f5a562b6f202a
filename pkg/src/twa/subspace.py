"""Subspace extraction from sampled checkpoints, global or per layer group.

Each group ``r`` gets a center (the mean of the checkpoints restricted to
that group) and a block ``P_r`` of shape ``(|group r|, n_r)`` whose columns
are the centered checkpoints scaled to unit length. Points of the search
space are ``center + P X``; with ``X = 0`` this is the plain average.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoints import CheckpointSet, read_twa1, write_twa1
from .errors import DimensionError, InputError
from .param_space import LayerPartition, as_vector, span_residual

# A checkpoint whose distance to the center is below this fraction of the
# center's norm contributes a zero column.
DEGENERATE_RTOL = 1e-12
GS_DROP_RTOL = 1e-10


def as_weight_matrix(weights) -> np.ndarray:
    """Accept a CheckpointSet or an ``(n, D)`` array-like of weights."""
    if isinstance(weights, CheckpointSet):
        return weights.matrix()
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] == 0 or W.shape[1] == 0:
        raise DimensionError(f"expected an (n, D) weight matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InputError("checkpoint weights contain non-finite values")
    return W


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SubspaceBasis:
    partition: LayerPartition
    centers: tuple[np.ndarray, ...]
    blocks: tuple[np.ndarray, ...]
    degenerate: tuple[np.ndarray, ...]
    orthogonalized: bool = False

    @property
    def n(self) -> int:
        """Largest column count over groups (equal for all groups unless orthogonalized)."""
        return max(b.shape[1] for b in self.blocks)

    @property
    def dim(self) -> int:
        return self.partition.dim

    @property
    def num_groups(self) -> int:
        return self.partition.num_groups

    @property
    def columns(self) -> list[int]:
        return [b.shape[1] for b in self.blocks]

    def center(self) -> np.ndarray:
        return np.concatenate(self.centers)

    def zeros(self) -> list[np.ndarray]:
        """Coefficients at the center."""
        return [np.zeros(c) for c in self.columns]

    def dense(self) -> np.ndarray:
        """The block-diagonal ``(D, sum n_r)`` matrix equivalent to this basis."""
        P = np.zeros((self.dim, sum(self.columns)))
        col = 0
        for r, B in enumerate(self.blocks):
            lo, hi = self.partition.bounds(r)
            P[lo:hi, col:col + B.shape[1]] = B
            col += B.shape[1]
        return P


def extract_from_array(W: np.ndarray, partition: LayerPartition | None = None) -> SubspaceBasis:
    """Center-and-normalize extraction from an ``(n, D)`` weight array."""
    W = as_weight_matrix(W)
    n, D = W.shape
    if n < 2:
        raise InputError(f"need at least 2 checkpoints to extract a subspace, got {n}")
    partition = partition or LayerPartition.whole(D)
    if partition.dim != D:
        raise DimensionError(f"partition covers {partition.dim} parameters, weights have {D}")

    centers, blocks, flags = [], [], []
    for r in range(partition.num_groups):
        lo, hi = partition.bounds(r)
        Wr = W[:, lo:hi]
        c = Wr.mean(axis=0)
        dev = Wr - c  # (n, |group|), one deviation per row
        norms = np.sqrt(np.einsum("ij,ij->i", dev, dev))
        degenerate = (norms == 0.0) | (norms <= DEGENERATE_RTOL * np.linalg.norm(c))
        safe = np.where(degenerate, 1.0, norms)
        dev /= safe[:, None]
        dev[degenerate] = 0.0
        centers.append(_frozen(c))
        blocks.append(_frozen(dev.T))
        flags.append(_frozen(degenerate))
    if all(f.all() for f in flags):
        raise InputError("zero spread: every checkpoint equals the center")
    return SubspaceBasis(partition, tuple(centers), tuple(blocks), tuple(flags), False)


def extract(checkpoints, partition: LayerPartition | None = None) -> SubspaceBasis:
    return extract_from_array(as_weight_matrix(checkpoints), partition)


def _gram_schmidt_rows(V: np.ndarray) -> np.ndarray:
    """Sequential classical Gram-Schmidt over the rows of ``V`` (in place).

    Each row is orthogonalized against the kept rows twice (CGS2) so that the
    result stays orthogonal to working precision on nearly dependent input.
    Rows whose residual falls below ``GS_DROP_RTOL`` of their original norm
    are dropped. Returns the kept rows.
    """
    kept = 0
    for j in range(V.shape[0]):
        v = V[j]
        orig = np.linalg.norm(v)
        if orig == 0.0:
            continue
        Q = V[:kept]
        for _ in range(2):
            if kept:
                v -= (Q @ v) @ Q
        res = np.linalg.norm(v)
        if res < GS_DROP_RTOL * orig:
            continue
        v /= res
        if kept != j:
            V[kept] = v
        kept += 1
    return V[:kept]


def gram_schmidt(basis: SubspaceBasis) -> SubspaceBasis:
    blocks, flags = [], []
    for B in basis.blocks:
        Q = _gram_schmidt_rows(np.array(B.T, order="C"))
        blocks.append(_frozen(Q.T))
        flags.append(_frozen(np.zeros(Q.shape[0], dtype=bool)))
    return SubspaceBasis(basis.partition, basis.centers, tuple(blocks), tuple(flags), True)


def _check_vector(basis: SubspaceBasis, g) -> np.ndarray:
    g = as_vector(g, "gradient")
    if g.size != basis.dim:
        raise DimensionError(f"vector of length {g.size} does not match basis dimension {basis.dim}")
    return g


def coefficient_grads(basis: SubspaceBasis, g) -> list[np.ndarray]:
    """``P_r.T @ g_r`` for every group."""
    g = _check_vector(basis, g)
    out = []
    for r, B in enumerate(basis.blocks):
        lo, hi = basis.partition.bounds(r)
        out.append(B.T @ g[lo:hi])
    return out


def expand(basis: SubspaceBasis, X: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate ``P_r @ X_r`` over groups (no center)."""
    if len(X) != basis.num_groups:
        raise DimensionError(f"expected {basis.num_groups} coefficient blocks, got {len(X)}")
    parts = []
    for B, x in zip(basis.blocks, X):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (B.shape[1],):
            raise DimensionError(f"coefficient block of shape {x.shape}, basis block has {B.shape[1]} columns")
        parts.append(B @ x)
    return np.concatenate(parts)


def project(basis: SubspaceBasis, g) -> tuple[list[np.ndarray], np.ndarray]:
    """Coefficient gradients and the gradient mapped back into parameter space."""
    coeff = coefficient_grads(basis, g)
    return coeff, expand(basis, coeff)


def reconstruct(basis: SubspaceBasis, X: Sequence[np.ndarray]) -> np.ndarray:
    return basis.center() + expand(basis, X)


def span_residual_of(basis: SubspaceBasis, v) -> float:
    """Least-squares residual of ``v`` against the basis columns, taken per group."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (basis.dim,):
        raise DimensionError(f"vector of shape {v.shape} does not match basis dimension {basis.dim}")
    total = 0.0
    for r, B in enumerate(basis.blocks):
        lo, hi = basis.partition.bounds(r)
        total += span_residual(B, v[lo:hi]) ** 2
    return float(np.sqrt(total))


def affine_residual(basis: SubspaceBasis, w) -> float:
    """Distance from ``w`` to the affine set ``center + span(P)``."""
    return span_residual_of(basis, np.asarray(w, dtype=np.float64) - basis.center())


def export_basis(basis: SubspaceBasis, directory) -> Path:
    """Write centers and columns as TWA1 files plus a ``basis.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r, (c, B) in enumerate(zip(basis.centers, basis.blocks)):
        write_twa1(directory / f"center_{r:03d}.twa1", c)
        for i in range(B.shape[1]):
            write_twa1(directory / f"column_{r:03d}_{i:05d}.twa1", B[:, i])
    sidecar = {"partition": list(basis.partition.boundaries), "n": basis.n,
               "orthogonalized": basis.orthogonalized, "columns": basis.columns}
    path = directory / "basis.json"
    path.write_text(json.dumps(sidecar))
    return path


def import_basis(directory) -> SubspaceBasis:
    directory = Path(directory)
    meta = json.loads((directory / "basis.json").read_text())
    part = LayerPartition(tuple(meta["partition"]))
    counts = meta.get("columns", [meta["n"]] * part.num_groups)
    centers, blocks, flags = [], [], []
    for r in range(part.num_groups):
        centers.append(_frozen(read_twa1(directory / f"center_{r:03d}.twa1")))
        cols = [read_twa1(directory / f"column_{r:03d}_{i:05d}.twa1") for i in range(counts[r])]
        B = np.stack(cols, axis=1) if cols else np.zeros((part.sizes[r], 0))
        blocks.append(_frozen(B))
        flags.append(_frozen(np.linalg.norm(B, axis=0) == 0.0))
    return SubspaceBasis(part, tuple(centers), tuple(blocks), tuple(flags),
                         bool(meta["orthogonalized"]))
