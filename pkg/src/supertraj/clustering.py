"""Super-trajectory generation: grouping trajectories with windowed DPC refinement."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import dpc
from .errors import ContractError
from .trajectory import FeatureTable, Trajectory, TrajectoryFeatures

MAX_INTENSITY = 255.0


@dataclass(frozen=True)
class ClusteringConfig:
    K: int = 1200
    iterations: int = 5
    min_cluster_size: int = 5
    dt: int = 3
    H: float = dpc.H_DEFAULT
    density_mode: dpc.DensityMode = "similarity"
    stop_on_convergence: bool = False

    def __post_init__(self):
        if self.K < 1 or self.iterations < 1 or self.min_cluster_size < 1:
            raise ContractError("K, iterations and min_cluster_size must all be >= 1")


@dataclass(frozen=True)
class NormalizationContext:
    R: float
    mean_motion: float
    max_intensity: float = MAX_INTENSITY
    H: float = dpc.H_DEFAULT

    @property
    def motion_scale(self) -> float:
        return self.mean_motion if self.mean_motion > 0 else 1.0


@dataclass(frozen=True)
class SuperTrajectory:
    id: int
    members: tuple[int, ...]  # trajectory ids
    center: int  # trajectory id
    location: tuple[float, float]
    color: tuple[float, float, float]
    velocity: tuple[float, float]

    def __len__(self) -> int:
        return len(self.members)


def sampling_step(width: int, height: int, K: int) -> float:
    return math.sqrt(width * height / K)


def make_context(features: FeatureTable, width: int, height: int, K: int,
                 H: float = dpc.H_DEFAULT) -> NormalizationContext:
    speed = np.hypot(features.velocity[:, 0], features.velocity[:, 1])
    mean_motion = float(speed.mean()) if speed.size else 0.0
    return NormalizationContext(sampling_step(width, height, K), mean_motion, MAX_INTENSITY, H)


# ---------------------------------------------------------------------------
# distances


def trajectory_distance(a: TrajectoryFeatures, a_span: tuple[int, int], b: TrajectoryFeatures,
                        b_span: tuple[int, int], ctx: NormalizationContext) -> float:
    """Normalised location + colour + velocity distance, or ``H`` without overlap."""
    if max(a_span[0], b_span[0]) > min(a_span[1], b_span[1]):
        return ctx.H
    dl = math.dist(a.location, b.location) / ctx.R
    dc = math.dist(a.color, b.color) / ctx.max_intensity
    dv = math.dist(a.velocity, b.velocity) / ctx.motion_scale
    return dl + dc + dv


def _pairwise(ft: FeatureTable, rows: np.ndarray, cols: np.ndarray, ctx: NormalizationContext) -> np.ndarray:
    def norm(x):
        diff = x[rows][:, None, :] - x[cols][None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))

    d = norm(ft.location) / ctx.R + norm(ft.color) / ctx.max_intensity + norm(ft.velocity) / ctx.motion_scale
    overlap = np.maximum(ft.start[rows][:, None], ft.start[cols][None, :]) <= np.minimum(
        ft.end[rows][:, None], ft.end[cols][None, :])
    return np.where(overlap, d, ctx.H)


def distance_matrix(ft: FeatureTable, idx, ctx: NormalizationContext) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp)
    d = _pairwise(ft, idx, idx, ctx)
    np.fill_diagonal(d, 0.0)
    return d


def distances_to(ft: FeatureTable, idx, j: int, ctx: NormalizationContext) -> np.ndarray:
    return _pairwise(ft, np.asarray(idx, dtype=np.intp), np.array([j]), ctx)[:, 0]


# ---------------------------------------------------------------------------
# initialisation


def grid_shape(width: int, height: int, K: int) -> tuple[int, int]:
    """Columns and rows of the grid of ``K`` cells with side ``R``.

    The last row/column absorb remainders. A frame side shorter than ``R``
    is spanned by a single strip of ``K`` cells.
    """
    R = sampling_step(width, height, K)
    if height < R:
        return K, 1
    if width < R:
        return 1, K
    return max(1, int(width // R)), max(1, int(height // R))


def _cell_index(coord: np.ndarray, length: int, count: int, R: float) -> np.ndarray:
    step = coord // R if length >= R else np.floor(coord * count / length)
    return np.clip(step.astype(np.intp), 0, count - 1)


def grid_partition(trajs: Sequence[Trajectory], K: int, frame_dims: tuple[int, int]) -> list[np.ndarray]:
    """Bucket trajectory indices by the grid cell holding their first point.

    Returns one (possibly empty) index array per cell, row-major.
    """
    if K < 1:
        raise ContractError("K must be >= 1")
    width, height = frame_dims
    R = sampling_step(width, height, K)
    nx, ny = grid_shape(width, height, K)
    if not trajs:
        return [np.zeros(0, np.intp) for _ in range(nx * ny)]
    first = np.array([tr.xy[0] for tr in trajs])
    cx = _cell_index(first[:, 0], width, nx, R)
    cy = _cell_index(first[:, 1], height, ny, R)
    cell = cy * nx + cx
    return [np.flatnonzero(cell == k) for k in range(nx * ny)]


def cluster_count(T: int, mean_len: float) -> int:
    return max(1, int(math.floor(T / mean_len + 0.5)))


def initial_centers(group, T: int, mean_len: float, ctx: NormalizationContext, ft: FeatureTable,
                    mode: dpc.DensityMode = "similarity") -> list[int]:
    """DPC centers of one grid group, as global trajectory indices."""
    group = np.asarray(group, dtype=np.intp)
    if group.size == 0:
        raise ContractError("empty trajectory group")
    C = cluster_count(T, mean_len)
    local = dpc.select_centers(distance_matrix(ft, group, ctx), C, mode, ctx.H)
    return [int(group[i]) for i in local]


# ---------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class RefineResult:
    labels: np.ndarray  # cluster slot per trajectory index
    centers: list[int]  # center trajectory index per slot


def _assign(ft: FeatureTable, centers: list[int], ctx: NormalizationContext, tree: cKDTree) -> np.ndarray:
    n = len(ft)
    labels = np.full(n, -1, np.intp)
    kappa = np.full(n, ctx.H)
    windows = tree.query_ball_point(ft.location[centers], r=ctx.R, p=np.inf)
    for k, (c, cand) in enumerate(zip(centers, windows)):
        if not cand:
            continue
        cand = np.asarray(cand, dtype=np.intp)
        d = distances_to(ft, cand, c, ctx)
        better = d < kappa[cand]
        kappa[cand[better]] = d[better]
        labels[cand[better]] = k
    labels[centers] = np.arange(len(centers))
    orphans = np.flatnonzero(labels < 0)
    if orphans.size:
        labels[orphans] = _nearest_slot(ft, orphans, centers, ctx)
    return labels


def _nearest_slot(ft: FeatureTable, items: np.ndarray, centers, ctx: NormalizationContext,
                  chunk: int = 2048) -> np.ndarray:
    cidx = np.asarray(centers, dtype=np.intp)
    out = np.empty(items.size, np.intp)
    for s in range(0, items.size, chunk):
        d = _pairwise(ft, items[s:s + chunk], cidx, ctx)
        out[s:s + chunk] = np.argmin(d, axis=1)
    return out


def _update_center(ft: FeatureTable, members: np.ndarray, ctx: NormalizationContext,
                   mode: dpc.DensityMode) -> int:
    if members.size == 1:
        return int(members[0])
    d = distance_matrix(ft, members, ctx)
    picked = dpc.select_centers(d, 1, mode, ctx.H)
    if len(picked) > 1:
        # several isolated groups: keep the strongest one as the single center
        s = dpc.dpc_scores(d, mode, ctx.H)
        picked = sorted(picked, key=lambda i: (-s.gamma[i], -s.rho[i], i))[:1]
    return int(members[picked[0]])


def refine(ft: FeatureTable, centers: Sequence[int], ctx: NormalizationContext,
           cfg: ClusteringConfig = ClusteringConfig(), workers: int = 1) -> RefineResult:
    """Iterative windowed assignment + DPC center update, then small-cluster merge.

    A trajectory is a candidate for a center when its mean location lies in
    the ``2R x 2R`` window around the center's mean location; it joins the
    candidate at minimum distance (lower slot on ties). Trajectories outside
    every window go to the globally nearest center.
    """
    centers = [int(c) for c in centers]
    if not centers:
        raise ContractError("refine needs at least one center")
    tree = cKDTree(ft.location)
    labels = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(cfg.iterations):
            new_labels = _assign(ft, centers, ctx, tree)
            groups = [np.flatnonzero(new_labels == k) for k in range(len(centers))]
            fn = lambda m: _update_center(ft, m, ctx, cfg.density_mode)  # noqa: E731
            new_centers = list(pool.map(fn, groups)) if pool else [fn(m) for m in groups]
            converged = labels is not None and np.array_equal(labels, new_labels) and new_centers == centers
            labels, centers = new_labels, new_centers
            if cfg.stop_on_convergence and converged:
                break
    finally:
        if pool:
            pool.shutdown()
    labels, centers = merge_small(ft, labels, centers, ctx, cfg.min_cluster_size)
    return RefineResult(labels, centers)


def merge_small(ft: FeatureTable, labels: np.ndarray, centers: list[int], ctx: NormalizationContext,
                min_size: int) -> tuple[np.ndarray, list[int]]:
    """Dissolve clusters below ``min_size`` into the nearest surviving cluster.

    Slots are compacted to ``0..m-1`` preserving order. When no cluster
    reaches ``min_size`` nothing is dissolved.
    """
    sizes = np.bincount(labels, minlength=len(centers))
    keep = np.flatnonzero(sizes >= min_size)
    if keep.size == 0:
        keep = np.arange(len(centers))
    remap = np.full(len(centers), -1, np.intp)
    remap[keep] = np.arange(keep.size)
    new_centers = [centers[k] for k in keep]
    out = remap[labels]
    stray = np.flatnonzero(out < 0)
    if stray.size:
        out[stray] = _nearest_slot(ft, stray, new_centers, ctx)
    return out, new_centers


# ---------------------------------------------------------------------------
# end to end


def build_supertrajectories(trajs: Sequence[Trajectory], ft: FeatureTable, labels: np.ndarray,
                            centers: Sequence[int]) -> list[SuperTrajectory]:
    out = []
    for k, c in enumerate(centers):
        members = np.flatnonzero(labels == k)
        out.append(SuperTrajectory(
            id=k,
            members=tuple(int(trajs[i].id) for i in members),
            center=int(trajs[c].id),
            location=tuple(map(float, ft.location[members].mean(axis=0))),
            color=tuple(map(float, ft.color[members].mean(axis=0))),
            velocity=tuple(map(float, ft.velocity[members].mean(axis=0))),
        ))
    return out


def generate_supertrajectories(trajs: Sequence[Trajectory], ft: FeatureTable, video_dims: tuple[int, int, int],
                               cfg: ClusteringConfig = ClusteringConfig(), workers: int = 1) -> list[SuperTrajectory]:
    """Grid initialisation, per-cell DPC seeding and iterative refinement.

    ``video_dims`` is ``(width, height, T)``; ``ft`` rows align with ``trajs``.
    """
    if not trajs:
        raise ContractError("no trajectories to cluster")
    if len(ft) != len(trajs):
        raise ContractError("feature table does not match trajectory set")
    width, height, T = video_dims
    ctx = make_context(ft, width, height, cfg.K, cfg.H)
    mean_len = float(np.mean([len(tr) for tr in trajs]))
    centers: list[int] = []
    for group in grid_partition(trajs, cfg.K, (width, height)):
        if group.size:
            centers.extend(initial_centers(group, T, mean_len, ctx, ft, cfg.density_mode))
    centers.sort()
    res = refine(ft, centers, ctx, cfg, workers)
    return build_supertrajectories(trajs, ft, res.labels, res.centers)


def membership(supertrajs: Iterable[SuperTrajectory]) -> dict[int, int]:
    """Map trajectory id -> super-trajectory id."""
    return {tid: st.id for st in supertrajs for tid in st.members}


# ---------------------------------------------------------------------------
# serialisation and visualisation


def save_supertrajectories(path: str | os.PathLike, supertrajs: Iterable[SuperTrajectory]) -> None:
    with open(path, "w") as fh:
        for st in supertrajs:
            fh.write(f"supertraj {st.id} {st.center} {len(st.members)}\n")
            fh.write(" ".join(str(m) for m in st.members) + "\n")


def load_supertrajectories(path: str | os.PathLike, trajs: Sequence[Trajectory],
                           ft: FeatureTable) -> list[SuperTrajectory]:
    """Read a membership file; aggregate features are recomputed from ``ft``."""
    index = {tr.id: i for i, tr in enumerate(trajs)}
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    labels = np.full(len(trajs), -1, np.intp)
    centers = []
    for k in range(0, len(lines), 2):
        head = lines[k]
        if len(head) != 4 or head[0] != "supertraj":
            raise ValueError(f"{path}: bad header {' '.join(head)!r}")
        members = [index[int(m)] for m in lines[k + 1]] if k + 1 < len(lines) else []
        if len(members) != int(head[3]):
            raise ValueError(f"{path}: member count mismatch for super-trajectory {head[1]}")
        labels[members] = len(centers)
        centers.append(index[int(head[2])])
    return build_supertrajectories(trajs, ft, labels, centers)


def render_frame(trajs: Sequence[Trajectory], supertrajs: Sequence[SuperTrajectory], t: int,
                 width: int, height: int, point_size: int = 2) -> np.ndarray:
    """Colour each trajectory point on frame ``t`` (1-based) by its cluster's mean colour."""
    owner = membership(supertrajs)
    colors = {st.id: st.color for st in supertrajs}
    img = np.zeros((height, width, 3), np.float64)
    half = point_size // 2
    for tr in trajs:
        n = t - tr.t0
        if 0 <= n < len(tr) and tr.id in owner:
            x, y = np.rint(tr.xy[n]).astype(int)
            img[max(0, y - half):y - half + point_size, max(0, x - half):x - half + point_size] = colors[owner[tr.id]]
    return img
