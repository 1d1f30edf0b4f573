"""Nearest-neighbour region graph and clamped label propagation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass
class PropagationState:
    v: np.ndarray  # per-region foreground probability
    clamped: np.ndarray  # bool mask of regions held at their initial value
    P: sp.csr_matrix  # row-stochastic transition matrix


def build_transition(descriptors: np.ndarray, nn_lists: Sequence[np.ndarray]) -> sp.csr_matrix:
    """Row-normalised ``W`` with unit diagonal and ``exp(-|f_i - f_j|)`` on NN links."""
    desc = np.asarray(descriptors, dtype=np.float64)
    n = desc.shape[0]
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    for i, nn in enumerate(nn_lists):
        nn = np.asarray(nn, dtype=np.intp)
        nn = nn[nn != i]
        if nn.size:
            rows.append(np.full(nn.size, i))
            cols.append(nn)
            vals.append(np.exp(-np.sqrt(((desc[nn] - desc[i]) ** 2).sum(axis=1))))
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    inv = 1.0 / np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(inv) @ W


def propagate(state: PropagationState, iterations: int = 10) -> np.ndarray:
    """``v <- P v`` repeated, re-imposing clamped entries after each product."""
    v0 = np.asarray(state.v, dtype=np.float64)
    clamped = np.asarray(state.clamped, dtype=bool)
    v = v0.copy()
    for _ in range(iterations):
        v = state.P @ v
        v[clamped] = v0[clamped]
    return v


def finalize_masks(region_labels: np.ndarray, v: np.ndarray, override: np.ndarray | None = None,
                   override_prob: np.ndarray | None = None, threshold: float = 0.5) -> np.ndarray:
    """Binary masks: a pixel is foreground when its region's ``v`` exceeds ``threshold``.

    Where ``override`` is set, ``override_prob`` decides instead.
    """
    masks = np.asarray(v)[region_labels] > threshold
    if override is not None:
        masks = np.where(override, override_prob > threshold, masks)
    return masks
