"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own code paths: gradient
checks use central finite differences on the loss value alone, the
concordance-index oracle enumerates all O(n^2) pairs, and the clustering
oracle runs breadth-first search over an explicit similarity graph.
"""

from __future__ import annotations

import numpy as np
import pytest


def central_difference_directional(eval_loss, param_array: np.ndarray,
                                   direction: np.ndarray,
                                   h: float = 1e-5) -> float:
    """(L(theta + h e) - L(theta - h e)) / 2h without touching gradients."""
    original = param_array.copy()
    param_array += h * direction
    plus = eval_loss()
    param_array[...] = original - h * direction
    minus = eval_loss()
    param_array[...] = original
    return (plus - minus) / (2.0 * h)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def brute_force_ci(y, f) -> float:
    """Direct pair enumeration: 1 / 0.5 / 0 per comparable pair."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    score = 0.0
    comparable = 0
    for i in range(len(y)):
        for j in range(len(y)):
            if y[i] > y[j]:
                comparable += 1
                if f[i] > f[j]:
                    score += 1.0
                elif f[i] == f[j]:
                    score += 0.5
    if comparable == 0:
        raise ValueError("no comparable pair")
    return score / comparable


def brute_force_clusters(similarity: np.ndarray, threshold: float) -> list[int]:
    """Connected components by BFS over edges with similarity > threshold."""
    n = similarity.shape[0]
    labels = [-1] * n
    current = 0
    for start in range(n):
        if labels[start] != -1:
            continue
        queue = [start]
        labels[start] = current
        while queue:
            node = queue.pop()
            for other in range(n):
                if labels[other] == -1 and similarity[node, other] > threshold:
                    labels[other] = current
                    queue.append(other)
        current += 1
    return labels


@pytest.fixture(scope="session")
def small_dataset():
    from dtanet.synthetic import memory_dataset

    return memory_dataset(n_compounds=12, n_proteins=6, n_pairs=40, seed=7)
