"""Projected gradient descent on subspace coefficients.

The iterate is ``w = center + P X``. Each step computes the full-space
gradient ``g`` at ``w`` and applies, per layer group,

    X_r <- X_r - eta * (P_r^T g_r + lam * X_r)

so ``w`` never leaves the affine span of the sampled checkpoints.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .distributed import DistributedConfig, distributed_round, partition_columns
from .errors import DimensionError, InputError, NumericError
from .model_zoo import Dataset, MlpSpec, loss_and_grad
from .subspace import SubspaceBasis, coefficient_grads, reconstruct

SCHEDULES = ("constant", "scaled_linear", "cosine")


@dataclass(frozen=True)
class TwaConfig:
    eta0: float = 0.1
    lam: float = 1e-5
    steps: int = 100
    schedule: str = "scaled_linear"
    scale_factor: float = 1.0
    batch_size: int = 128
    seed: int = 0
    data_source: str = "train"
    groups: int = 1

    def __post_init__(self):
        if self.eta0 <= 0:
            raise InputError("eta0 must be positive")
        if self.lam < 0:
            raise InputError("lam must be nonnegative")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.schedule not in SCHEDULES:
            raise InputError(f"unknown schedule {self.schedule!r}")
        if self.scale_factor < 1:
            raise InputError("scale_factor must be >= 1")
        if self.data_source not in ("train", "validation"):
            raise InputError(f"unknown data source {self.data_source!r}")
        if self.groups < 1:
            raise InputError("groups must be >= 1")


@dataclass(frozen=True)
class TwaState:
    basis: SubspaceBasis
    X: tuple[np.ndarray, ...]
    step: int = 0
    history: tuple[tuple[int, float, float], ...] = field(default=())

    @classmethod
    def initial(cls, basis: SubspaceBasis) -> "TwaState":
        return cls(basis, tuple(basis.zeros()))

    def weights(self) -> np.ndarray:
        return reconstruct(self.basis, self.X)


def lr_at(config: TwaConfig, step: int) -> float:
    """Learning rate for 0-based ``step`` under the configured scaled schedule."""
    peak = config.eta0 * config.scale_factor
    frac = step / config.steps
    if config.schedule == "constant":
        return peak
    if config.schedule == "scaled_linear":
        return peak * (1.0 - frac)
    return peak * (1.0 + math.cos(math.pi * frac)) / 2.0


def apply_update(state: TwaState, coeff_grads: Sequence[np.ndarray], eta: float, lam: float
                 ) -> TwaState:
    if len(coeff_grads) != len(state.X):
        raise DimensionError(f"{len(coeff_grads)} gradient blocks for {len(state.X)} coefficient blocks")
    new_X = []
    for x, c in zip(state.X, coeff_grads):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != x.shape:
            raise DimensionError(f"gradient block {c.shape} vs coefficient block {x.shape}")
        if not np.all(np.isfinite(c)):
            raise NumericError("non-finite coefficient gradient")
        new_X.append(x - eta * (c + lam * x))
    return replace(state, X=tuple(new_X), step=state.step + 1)


def twa_step(state: TwaState, g, eta: float, lam: float) -> TwaState:
    """One coefficient update from the full-space gradient ``g``."""
    if eta <= 0:
        raise InputError("eta must be positive")
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (state.basis.dim,):
        raise DimensionError(f"gradient of shape {g.shape}, basis dimension {state.basis.dim}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    return apply_update(state, coefficient_grads(state.basis, g), eta, lam)


def iterate_batches(m: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless index batches; the order is reshuffled at the start of every epoch."""
    while True:
        order = rng.permutation(m)
        for lo in range(0, m, batch_size):
            yield order[lo:lo + batch_size]


def _shard_gradients(spec: MlpSpec, w, batch: Dataset, k: int):
    """Per-node gradients whose mean is the full-batch gradient.

    Node ``j`` sees a contiguous shard of the batch; its gradient is the
    shard's summed loss gradient scaled by ``k / |batch|`` (empty shards
    contribute zero).
    """
    m = len(batch)
    grads, loss = [], 0.0
    for idx in np.array_split(np.arange(m), k):
        if idx.size == 0:
            grads.append(np.zeros(spec.num_params))
            continue
        bl = loss_and_grad(spec, w, batch.take(idx))
        grads.append(bl.gradient * (k * idx.size / m))
        loss += bl.value * idx.size / m
    return loss, grads


def run_twa(basis: SubspaceBasis, spec: MlpSpec, data: Dataset, config: TwaConfig,
            dist: DistributedConfig | None = None) -> tuple[np.ndarray, TwaState]:
    """Train subspace coefficients starting from the center (the plain average).

    ``data`` is whichever split the caller wants the coefficients fitted
    on; pass the held-out validation split for fine-tuning. With ``dist``
    the projection is routed through the simulated k-node scheme.
    """
    if basis.dim != spec.num_params:
        raise DimensionError(f"basis dimension {basis.dim} vs model with {spec.num_params} parameters")
    rng = np.random.default_rng(config.seed)
    batches = iterate_batches(len(data), config.batch_size, rng)
    state = TwaState.initial(basis)
    history = []

    nodes = partition_columns(basis, dist.k) if dist is not None else None
    pool = ThreadPoolExecutor(max_workers=dist.k) if dist is not None and dist.concurrent else None
    try:
        for t in range(config.steps):
            w = state.weights()
            if not np.all(np.isfinite(w)):
                raise NumericError(f"iterate became non-finite at step {t}")
            batch = data.take(next(batches))
            eta = lr_at(config, t)
            if nodes is None:
                loss, g = loss_and_grad(spec, w, batch)
                state = twa_step(state, g, eta, config.lam)
            else:
                loss, grads = _shard_gradients(spec, w, batch, dist.k)
                coeff, _ = distributed_round(nodes, grads, pool)
                state = apply_update(state, coeff, eta, config.lam)
            history.append((t, float(loss), float(eta)))
    finally:
        if pool is not None:
            pool.shutdown()
    state = replace(state, history=tuple(history))
    return state.weights(), state


def write_history(state: TwaState, path) -> Path:
    """One JSON object per line: ``{"step", "loss", "eta"}``."""
    path = Path(path)
    with path.open("w") as fh:
        for step, loss, eta in state.history:
            fh.write(json.dumps({"step": step, "loss": loss, "eta": eta}) + "\n")
    return path
