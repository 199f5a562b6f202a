"""Fixed-coefficient averaging baselines: SWA, LAWA and greedy soup.

Every function returns the averaged weights together with the coefficient
vector ``alpha`` over the input checkpoints (in step order), so that
``w == alpha @ W`` holds for the stacked checkpoint matrix ``W``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .checkpoints import CheckpointSet
from .errors import InputError
from .subspace import as_weight_matrix


def swa(checkpoints) -> tuple[np.ndarray, np.ndarray]:
    W = _weights(checkpoints)
    n = W.shape[0]
    return W.mean(axis=0), np.full(n, 1.0 / n)


def lawa(checkpoints, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Average of the latest ``t`` checkpoints."""
    W = _weights(checkpoints)
    n = W.shape[0]
    if not 1 <= t <= n:
        raise InputError(f"LAWA horizon t={t} outside [1, {n}]")
    alpha = np.zeros(n)
    alpha[n - t:] = 1.0 / t
    return W[n - t:].mean(axis=0), alpha


def greedy_soup(checkpoints, evaluator: Callable[[np.ndarray], float] | None,
                metrics: Sequence[float | None] | None = None
                ) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Greedy soup over checkpoints ranked by validation metric (higher is better).

    Candidates are visited best first (ties go to the earlier checkpoint).
    Each is kept if the soup including it scores at least as well as the
    current soup under ``evaluator``. Ranking uses ``metrics`` when given,
    else the checkpoint set's recorded ``val_metric`` values, else the
    evaluator itself.

    Returns the soup, its coefficients and the kept indices in visit order.
    """
    if evaluator is None:
        raise InputError("greedy soup needs an evaluator to score candidate soups")
    W = _weights(checkpoints)
    n = W.shape[0]
    if metrics is None and isinstance(checkpoints, CheckpointSet):
        metrics = checkpoints.val_metrics
    if metrics is None:
        metrics = [None] * n
    if len(metrics) != n:
        raise InputError(f"{len(metrics)} metrics for {n} checkpoints")
    scores = [float(evaluator(W[i])) if m is None else float(m) for i, m in enumerate(metrics)]
    order = sorted(range(n), key=lambda i: (-scores[i], i))

    kept = [order[0]]
    total = W[order[0]].copy()
    best = float(evaluator(total))
    for i in order[1:]:
        trial = (total + W[i]) / (len(kept) + 1)
        score = float(evaluator(trial))
        if score >= best:
            kept.append(i)
            total += W[i]
            best = score
    alpha = np.zeros(n)
    alpha[kept] = 1.0 / len(kept)
    # Same arithmetic as the last accepted trial, so the returned soup is
    # exactly the vector the evaluator scored.
    return total / len(kept), alpha, kept


def _weights(checkpoints) -> np.ndarray:
    if len(checkpoints) == 0:
        raise InputError("empty checkpoint set")
    return as_weight_matrix(checkpoints)
