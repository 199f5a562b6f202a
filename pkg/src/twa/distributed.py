"""In-process simulation of k-node gradient projection.

The basis columns of every group are split into k contiguous ranges, one
per node. A projection then takes two all-reduce rounds:

1. the nodes' local gradients are averaged into a shared gradient ``g``;
2. each node computes ``P_i (P_i^T g)`` on its own columns and the partial
   results are summed.

Block multiplication makes the sum equal to ``P P^T g``. Reductions always
run in node-id order, so results do not depend on how node work is
scheduled.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InputError
from .param_space import LayerPartition
from .subspace import SubspaceBasis


@dataclass(frozen=True)
class DistributedConfig:
    k: int = 1
    partition_strategy: str = "contiguous_columns"
    deterministic_reduce: bool = True
    concurrent: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InputError("node count k must be >= 1")
        if self.partition_strategy != "contiguous_columns":
            raise InputError(f"unknown partition strategy {self.partition_strategy!r}")
        if not self.deterministic_reduce:
            raise InputError("only deterministic (node-ordered) reduction is supported")


@dataclass
class NodeState:
    node_id: int
    partition: LayerPartition
    ranges: tuple[tuple[int, int], ...]
    blocks: tuple[np.ndarray, ...]
    local_gradient: np.ndarray | None = None

    @property
    def num_columns(self) -> int:
        return sum(hi - lo for lo, hi in self.ranges)


def split_range(n: int, k: int) -> list[tuple[int, int]]:
    """Contiguous ranges covering ``[0, n)``; the first ``n % k`` get one extra."""
    base, extra = divmod(n, k)
    out, lo = [], 0
    for i in range(k):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def partition_columns(basis: SubspaceBasis, k: int) -> list[NodeState]:
    if k < 1:
        raise InputError("node count k must be >= 1")
    per_group = [split_range(B.shape[1], k) for B in basis.blocks]
    nodes = []
    for i in range(k):
        ranges = tuple(rg[i] for rg in per_group)
        blocks = tuple(B[:, lo:hi] for B, (lo, hi) in zip(basis.blocks, ranges))
        nodes.append(NodeState(i, basis.partition, ranges, blocks))
    return nodes


def _ordered_sum(values: Sequence[np.ndarray]) -> np.ndarray:
    total = np.array(values[0], dtype=np.float64, copy=True)
    for v in values[1:]:
        total += v
    return total


def _check_lengths(values):
    if not values:
        raise InputError("all-reduce over zero nodes")
    arrs = [np.asarray(v, dtype=np.float64) for v in values]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionError(f"all-reduce over mismatched shapes {[a.shape for a in arrs]}")
    return arrs


def all_reduce_sum(values: Sequence[np.ndarray]) -> list[np.ndarray]:
    total = _ordered_sum(_check_lengths(values))
    return [total.copy() for _ in values]


def all_reduce_mean(values: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Every node ends with ``sum(values) / k``, summed in node-id order."""
    arrs = _check_lengths(values)
    mean = _ordered_sum(arrs) / len(arrs)
    return [mean.copy() for _ in arrs]


def _node_project(node: NodeState, g: np.ndarray):
    coeff, parts = [], []
    for r, B in enumerate(node.blocks):
        lo, hi = node.partition.bounds(r)
        c = B.T @ g[lo:hi]
        coeff.append(c)
        parts.append(B @ c)
    return coeff, np.concatenate(parts)


def distributed_round(nodes: Sequence[NodeState], local_grads: Sequence[np.ndarray],
                      executor: Executor | None = None):
    """Run both reduce rounds; returns (coefficient gradients per group, projected gradient).

    Coefficient gradients are the nodes' ``P_i^T g`` slices gathered back in
    node order, i.e. the same layout as the monolithic ``P^T g``.
    """
    if len(local_grads) != len(nodes):
        raise InputError(f"{len(local_grads)} gradients for {len(nodes)} nodes")
    D = nodes[0].partition.dim
    grads = _check_lengths(local_grads)
    if grads[0].shape != (D,):
        raise DimensionError(f"gradients of shape {grads[0].shape}, expected ({D},)")

    shared = all_reduce_mean(grads)
    for node, g in zip(nodes, shared):
        node.local_gradient = g

    if executor is None:
        results = [_node_project(node, node.local_gradient) for node in nodes]
    else:
        futures = [executor.submit(_node_project, node, node.local_gradient) for node in nodes]
        results = [f.result() for f in futures]

    projected = all_reduce_sum([p for _, p in results])[0]
    num_groups = nodes[0].partition.num_groups
    coeff = [np.concatenate([c[r] for c, _ in results]) for r in range(num_groups)]
    return coeff, projected


def distributed_project(nodes: Sequence[NodeState], local_grads: Sequence[np.ndarray],
                        executor: Executor | None = None) -> np.ndarray:
    return distributed_round(nodes, local_grads, executor)[1]
