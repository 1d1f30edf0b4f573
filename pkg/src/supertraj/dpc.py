"""Density-peaks clustering over a precomputed distance matrix.

Pairs of items that cannot be compared (trajectories without temporal
overlap) carry the sentinel distance ``H``; an item whose every
higher-density item sits at distance ``H`` heads an isolated group.

Ordering convention used everywhere: item ``j`` ranks above item ``i`` when
``rho[j] > rho[i]``, or when the densities tie and ``j < i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ContractError

H_DEFAULT = 1e9

DensityMode = Literal["similarity", "literal"]


@dataclass(frozen=True)
class DpcScores:
    rho: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class ClusterAssignment:
    centers: list[int]
    label: np.ndarray  # label[i] is the center item index of item i


def _as_matrix(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ContractError(f"distance matrix must be square, got {d.shape}")
    return d


def local_density(d, mode: DensityMode = "similarity", H: float = H_DEFAULT) -> np.ndarray:
    """Per-item density.

    ``literal`` sums raw distances; ``similarity`` sums ``exp(-d_ij)`` over
    ``j != i`` with ``H`` entries contributing nothing. Sums are exactly
    rounded, so equal densities compare equal whatever the item order.
    """
    d = _as_matrix(d)
    if mode == "literal":
        terms = d
    elif mode == "similarity":
        terms = np.where(d >= H, 0.0, np.exp(-d))
        np.fill_diagonal(terms, 0.0)
    else:
        raise ValueError(f"unknown density mode {mode!r}")
    return np.array([math.fsum(row) for row in terms], dtype=np.float64)


def rank_order(rho: np.ndarray) -> np.ndarray:
    """Item indices from highest to lowest density, ties by lower index."""
    rho = np.asarray(rho)
    return np.lexsort((np.arange(rho.size), -rho))


def delta_distance(d, rho, H: float = H_DEFAULT) -> np.ndarray:
    """Distance from each item to its nearest higher-ranked item.

    The top-ranked item takes its largest distance to anything. Since ``H``
    dominates every finite entry, an item separated from all higher-ranked
    items by ``H`` gets exactly ``H``.
    """
    d = _as_matrix(d)
    n = d.shape[0]
    delta = np.empty(n)
    order = rank_order(rho)
    for pos, i in enumerate(order):
        if pos == 0:
            delta[i] = d[i].max() if n else 0.0
        else:
            delta[i] = min(d[i, order[:pos]].min(), H)
    return delta


def dpc_scores(d, mode: DensityMode = "similarity", H: float = H_DEFAULT) -> DpcScores:
    rho = local_density(d, mode, H)
    delta = delta_distance(d, rho, H)
    return DpcScores(rho, delta, rho * delta)


def select_centers(d, C: int, mode: DensityMode = "similarity", H: float = H_DEFAULT) -> list[int]:
    """Pick cluster centers; returned in ascending index order.

    If more isolated-group heads (``delta == H``) exist than ``C``, all of
    them are returned. Otherwise the ``C`` items of largest
    ``gamma = rho * delta`` win, ties to higher density then lower index.
    """
    if C < 1:
        raise ContractError(f"center count must be >= 1, got {C}")
    d = _as_matrix(d)
    n = d.shape[0]
    if n == 0:
        raise ContractError("no items to cluster")
    s = dpc_scores(d, mode, H)
    isolated = np.flatnonzero(s.delta >= H)
    if C < isolated.size:
        return sorted(int(i) for i in isolated)
    C = min(C, n)
    order = np.lexsort((np.arange(n), -s.rho, -s.gamma))
    return sorted(int(i) for i in order[:C])


def assign_members(d, rho, centers, H: float = H_DEFAULT) -> ClusterAssignment:
    """Label every item with a center.

    Items are visited from highest to lowest density; a non-center copies the
    label of its nearest higher-ranked item reachable at distance below
    ``H``. Items with no such neighbour fall back to the nearest center
    (lowest index on ties, which covers the all-``H`` case).
    """
    d = _as_matrix(d)
    centers = sorted(int(c) for c in centers)
    if not centers:
        raise ContractError("at least one center is required")
    n = d.shape[0]
    label = np.full(n, -1, dtype=np.intp)
    for c in centers:
        label[c] = c
    cidx = np.array(centers)
    order = rank_order(rho)
    for pos, i in enumerate(order):
        if label[i] >= 0:
            continue
        higher = order[:pos]
        if higher.size:
            dist = d[i, higher]
            # nearest, ties to lower index
            k = np.lexsort((higher, dist))[0]
            if dist[k] < H:
                label[i] = label[higher[k]]
                continue
        label[i] = cidx[np.argmin(d[i, cidx])]
    return ClusterAssignment(centers, label)


def cluster(d, C: int, mode: DensityMode = "similarity", H: float = H_DEFAULT) -> ClusterAssignment:
    """Center selection followed by member assignment."""
    centers = select_centers(d, C, mode, H)
    return assign_members(d, local_density(d, mode, H), centers, H)
