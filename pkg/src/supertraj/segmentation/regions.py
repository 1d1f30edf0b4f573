"""Superpixel regions, their 176-d descriptors, and backward nearest neighbours.

Descriptor layout (fixed order):

=========  =====  ============================================
block      size   content
=========  =====  ============================================
RGB hist   60     20 bins per channel over [0, 256), L1 per channel
LAB hist   60     20 bins per channel; L in [0, 100], a/b in [-110, 110]
HOG        54     15x15 patch, 3x3 cells of 5x5 px, 6 unsigned bins
coords     2      centroid x/(W-1), y/(H-1)
=========  =====  ============================================
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from skimage.color import rgb2lab
from skimage.feature import hog
from skimage.segmentation import slic

from ..errors import ConfigError, ContractError

BINS = 20
PATCH = 15
DESCRIPTOR_SIZE = 6 * BINS + 54 + 2


@dataclass(frozen=True)
class Region:
    id: int
    frame: int  # 1-based
    pixels: np.ndarray  # (n, 2) of (y, x)
    descriptor: np.ndarray | None = None
    probability: float | None = None


@dataclass
class RegionSet:
    """All superpixels of a video, numbered globally in frame order."""

    labels: np.ndarray  # (T, H, W) global region id per pixel
    frame: np.ndarray  # (n,) 0-based frame of each region
    descriptors: np.ndarray  # (n, DESCRIPTOR_SIZE)

    def __len__(self) -> int:
        return self.frame.size

    def region(self, rid: int) -> Region:
        t = int(self.frame[rid])
        ys, xs = np.nonzero(self.labels[t] == rid)
        return Region(rid, t + 1, np.stack([ys, xs], axis=1), self.descriptors[rid])


def slic_regions(frame: np.ndarray, target_count: int = 2000, compactness: float = 10.0,
                 iterations: int = 10) -> np.ndarray:
    """SLIC over-segmentation; returns an ``(H, W)`` map of ids ``0..k-1``."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if h * w == 0:
        raise ContractError("empty frame")
    if target_count < 1 or target_count > h * w:
        raise ConfigError(f"target_count {target_count} not in [1, {h * w}]")
    seg = slic(frame / 255.0, n_segments=target_count, compactness=compactness, max_num_iter=iterations,
               convert2lab=True, enforce_connectivity=True, start_label=0, channel_axis=-1)
    _, dense = np.unique(seg, return_inverse=True)
    return dense.reshape(h, w)


# ---------------------------------------------------------------------------
# descriptors


def _bin(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    v = np.clip(values, lo, hi)
    return np.minimum(((v - lo) / (hi - lo) * BINS).astype(np.intp), BINS - 1)


def color_bins(frame: np.ndarray) -> np.ndarray:
    """Per-pixel bin index for the six colour channels, ``(H, W, 6)``."""
    frame = np.asarray(frame, dtype=np.float64)
    lab = rgb2lab(np.clip(frame, 0, 255) / 255.0)  # D65
    out = np.empty(frame.shape[:2] + (6,), np.intp)
    for k in range(3):
        out[..., k] = _bin(frame[..., k], 0.0, 256.0)
    out[..., 3] = _bin(lab[..., 0], 0.0, 100.0)
    out[..., 4] = _bin(lab[..., 1], -110.0, 110.0)
    out[..., 5] = _bin(lab[..., 2], -110.0, 110.0)
    return out


def _hog_at(gray: np.ndarray, cx: float, cy: float) -> np.ndarray:
    h, w = gray.shape
    if h < PATCH or w < PATCH:
        gray = np.pad(gray, ((0, max(0, PATCH - h)), (0, max(0, PATCH - w))), mode="edge")
        h, w = gray.shape
    x0 = min(max(int(np.floor(cx + 0.5)) - PATCH // 2, 0), w - PATCH)
    y0 = min(max(int(np.floor(cy + 0.5)) - PATCH // 2, 0), h - PATCH)
    patch = gray[y0:y0 + PATCH, x0:x0 + PATCH]
    return hog(patch, orientations=6, pixels_per_cell=(5, 5), cells_per_block=(3, 3),
               block_norm="L2-Hys", feature_vector=True)


def _coords(cx, cy, width: int, height: int):
    return cx / max(width - 1, 1), cy / max(height - 1, 1)


def region_descriptor(pixels: np.ndarray, frame: np.ndarray, bins: np.ndarray | None = None) -> np.ndarray:
    """Descriptor of one region given its ``(n, 2)`` array of ``(y, x)`` pixels."""
    pixels = np.asarray(pixels, dtype=np.intp).reshape(-1, 2)
    if pixels.shape[0] == 0:
        raise ContractError("empty region")
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if bins is None:
        bins = color_bins(frame)
    b = bins[pixels[:, 0], pixels[:, 1]]
    hists = [np.bincount(b[:, k], minlength=BINS) / pixels.shape[0] for k in range(6)]
    cy, cx = pixels.mean(axis=0)
    gray = frame.mean(axis=2)
    return np.concatenate(hists + [_hog_at(gray, cx, cy), np.array(_coords(cx, cy, w, h))])


def frame_descriptors(labels: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Descriptors for every region id ``0..k-1`` of one frame."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = labels.shape
    k = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    if np.any(counts == 0):
        raise ContractError("region ids must be contiguous")
    bins = color_bins(frame).reshape(-1, 6)
    out = np.empty((k, DESCRIPTOR_SIZE))
    for c in range(6):
        hist = np.bincount(flat * BINS + bins[:, c], minlength=k * BINS).reshape(k, BINS)
        out[:, c * BINS:(c + 1) * BINS] = hist / counts[:, None]
    ys, xs = np.divmod(np.arange(h * w), w)
    cx = np.bincount(flat, xs.astype(np.float64), k) / counts
    cy = np.bincount(flat, ys.astype(np.float64), k) / counts
    gray = frame.mean(axis=2)
    for r in range(k):
        out[r, 6 * BINS:6 * BINS + 54] = _hog_at(gray, cx[r], cy[r])
    out[:, -2], out[:, -1] = _coords(cx, cy, w, h)
    return out


def build_regions(frames: np.ndarray, target_count: int = 2000, compactness: float = 10.0,
                  workers: int = 1) -> RegionSet:
    """Segment and describe every frame; per-frame work runs on ``workers`` threads."""
    def one(f):
        lab = slic_regions(f, target_count, compactness)
        return lab, frame_descriptors(lab, f)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, frames))
    else:
        results = [one(f) for f in frames]
    labels = np.empty(np.asarray(frames).shape[:3], np.intp)
    frame_of, descs = [], []
    offset = 0
    for t, (lab, desc) in enumerate(results):
        labels[t] = lab + offset
        offset += desc.shape[0]
        frame_of.append(np.full(desc.shape[0], t))
        descs.append(desc)
    return RegionSet(labels, np.concatenate(frame_of), np.concatenate(descs))


# ---------------------------------------------------------------------------
# nearest neighbours


def _rerank(desc: np.ndarray, q: int, cand: np.ndarray, N: int) -> np.ndarray:
    cand = cand[cand != q]
    d = np.sqrt(((desc[cand] - desc[q]) ** 2).sum(axis=1))
    return cand[np.lexsort((cand, d))[:N]]


# float32 dot products of length n err by at most about n * 2**-24 times the sum of |terms|
_F32_SLACK = 1e-4


def _brute_candidates(desc, sq, queries, pool_ids, k, chunk):
    """Per query, every pool id whose float32 distance is within rounding error of the k-th smallest."""
    # [p, |p|^2] . [-2q, 1] = |p|^2 - 2 q.p, which ranks like |q - p|^2
    pool = np.hstack([desc[pool_ids], sq[pool_ids, None]]).astype(np.float32)
    bound = 2.0 * _F32_SLACK * (sq[queries] + 2.0 * sq[pool_ids].max())
    out = []
    for s in range(0, queries.size, chunk):
        q = queries[s:s + chunk]
        lhs = np.hstack([-2.0 * desc[q], np.ones((q.size, 1))]).astype(np.float32)
        d2 = lhs @ pool.T
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1].astype(np.float64)
        keep = d2 <= (kth + bound[s:s + chunk]).astype(np.float32)[:, None]
        out.extend(pool_ids[np.flatnonzero(row)] for row in keep)
    return out


def _tree_candidates(desc, queries, pool_ids, k):
    """Per query, every pool id within (slightly more than) the k-th nearest tree distance."""
    tree = cKDTree(desc[pool_ids])
    dist, _ = tree.query(desc[queries], k=k)
    kth = np.asarray(dist).reshape(queries.size, k)[:, -1]
    radius = kth * (1.0 + 1e-9) + 1e-12
    return [pool_ids[np.asarray(hits, np.intp)] for hits in tree.query_ball_point(desc[queries], radius)]


def knn_backward(descriptors: np.ndarray, frames: Sequence[int], N: int = 8, method: str = "brute",
                 chunk: int = 256) -> list[np.ndarray]:
    """Exact ``N`` nearest regions of each region among regions of the same or earlier frames.

    A coarse search proposes candidates that are re-ranked by directly
    computed Euclidean distance, ties to lower id; self is never returned.
    ``"brute"`` uses float32 matrix products and keeps every candidate within
    rounding error of the cut-off, ``"kdtree"`` takes every point of a
    :class:`scipy.spatial.cKDTree` inside the ball reaching the cut-off.
    """
    if method not in ("brute", "kdtree"):
        raise ConfigError(f"unknown search method {method!r}")
    desc = np.asarray(descriptors, dtype=np.float64)
    frames = np.asarray(frames)
    n = desc.shape[0]
    out = [np.zeros(0, np.intp) for _ in range(n)]
    if N <= 0 or n == 0:
        return out
    sq = (desc ** 2).sum(axis=1)
    for t in np.unique(frames):
        pool_ids = np.flatnonzero(frames <= t)
        queries = np.flatnonzero(frames == t)
        k = min(N + 1, pool_ids.size)
        if method == "kdtree":
            cand = _tree_candidates(desc, queries, pool_ids, k)
        else:
            cand = _brute_candidates(desc, sq, queries, pool_ids, k, chunk)
        for q, c in zip(queries, cand):
            out[q] = _rerank(desc, q, c, N)
    return out
