"""Dense point trajectories from forward/backward flow.

Each tracker follows the flow one frame at a time. Every step is scored by an
appearance energy (colour change between the two sub-pixel samples) and an
occlusion energy (forward/backward flow disagreement); the survival
probability is the running product of ``exp(-(e_app + e_occ))`` and a
tracker stops once it drops below 0.5 or the next position leaves the frame.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError
from .flow import FlowPair, VideoSequence, bilinear, check_flows

APP_SCALE = 1.0 / 50.0
MIN_LENGTH = 4
SURVIVAL_THRESHOLD = 0.5


class TrajPoint(NamedTuple):
    x: float
    y: float
    t: int  # 1-based frame index


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A chain of sub-pixel positions on consecutive frames ``t0 .. t0+L-1``."""

    id: int
    t0: int
    xy: np.ndarray  # (L, 2) of (x, y)

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        xy.setflags(write=False)
        object.__setattr__(self, "xy", xy)

    def __len__(self) -> int:
        return self.xy.shape[0]

    @property
    def t_end(self) -> int:
        return self.t0 + len(self) - 1

    @property
    def points(self) -> list[TrajPoint]:
        return [TrajPoint(float(x), float(y), self.t0 + n) for n, (x, y) in enumerate(self.xy)]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.id == other.id and self.t0 == other.t0 and np.array_equal(self.xy, other.xy)

    __hash__ = None


@dataclass(frozen=True)
class TrajectoryFeatures:
    location: tuple[float, float]
    color: tuple[float, float, float]
    velocity: tuple[float, float]


@dataclass(frozen=True)
class FeatureTable:
    """Per-trajectory features as aligned arrays (row i <-> trajectory i)."""

    location: np.ndarray  # (n, 2)
    color: np.ndarray  # (n, 3)
    velocity: np.ndarray  # (n, 2)
    start: np.ndarray  # (n,) first frame, 1-based
    end: np.ndarray  # (n,) last frame, inclusive

    def __len__(self) -> int:
        return self.location.shape[0]

    def subset(self, idx) -> "FeatureTable":
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureTable(
            self.location[idx], self.color[idx], self.velocity[idx], self.start[idx], self.end[idx]
        )


# ---------------------------------------------------------------------------
# energies


def appearance_energy(frame_prev: np.ndarray, frame_cur: np.ndarray, p_prev: TrajPoint, p_cur: TrajPoint) -> float:
    """Euclidean RGB distance between the two bilinearly sampled colours."""
    if p_cur.t != p_prev.t + 1:
        raise ContractError(f"points are on frames {p_prev.t} and {p_cur.t}, not consecutive")
    for frame, p in ((frame_prev, p_prev), (frame_cur, p_cur)):
        h, w = frame.shape[:2]
        if not (0 <= p.x <= w - 1 and 0 <= p.y <= h - 1):
            raise ContractError(f"point {p} outside {w}x{h} frame")
    a = bilinear(np.asarray(frame_prev, np.float64), np.array(p_prev.x), np.array(p_prev.y))
    b = bilinear(np.asarray(frame_cur, np.float64), np.array(p_cur.x), np.array(p_cur.y))
    return float(np.linalg.norm(b - a))


def _occlusion(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    num = np.hypot(bwd[..., 0] + fwd[..., 0], bwd[..., 1] + fwd[..., 1])
    den = np.hypot(bwd[..., 0], bwd[..., 1]) + np.hypot(fwd[..., 0], fwd[..., 1])
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def occlusion_energy(fwd: tuple[float, float], bwd: tuple[float, float]) -> float:
    """``|bwd + fwd| / (|bwd| + |fwd|)``; zero when both vectors vanish."""
    return float(_occlusion(np.asarray(fwd, np.float64), np.asarray(bwd, np.float64)))


def step_probability(e_app: float, e_occ: float) -> float:
    return float(np.exp(-(e_app + e_occ)))


# ---------------------------------------------------------------------------
# tracking


def _advance(video: np.ndarray, flows: Sequence[FlowPair], t: int, pos: np.ndarray,
             prob: np.ndarray, app_scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Move points from frame index ``t`` to ``t + 1`` (0-based).

    Returns new positions, new cumulative probabilities and a survival mask.
    """
    h, w = video.shape[1:3]
    fwd = bilinear(flows[t].forward.vectors, pos[:, 0], pos[:, 1])
    nxt = pos + fwd
    inside = (nxt[:, 0] >= 0) & (nxt[:, 0] <= w - 1) & (nxt[:, 1] >= 0) & (nxt[:, 1] <= h - 1)
    # evaluate energies on clamped coordinates; outside points are dropped anyway
    qx = np.clip(nxt[:, 0], 0, w - 1)
    qy = np.clip(nxt[:, 1], 0, h - 1)
    bwd = bilinear(flows[t + 1].backward.vectors, qx, qy)
    e_occ = _occlusion(fwd, bwd)
    c0 = bilinear(video[t], pos[:, 0], pos[:, 1])
    c1 = bilinear(video[t + 1], qx, qy)
    e_app = np.sqrt(((c1 - c0) ** 2).sum(axis=1)) * app_scale
    new_prob = prob * np.exp(-(e_app + e_occ))
    alive = inside & (new_prob >= SURVIVAL_THRESHOLD)
    return nxt, new_prob, alive


def track_point(start: TrajPoint, video: VideoSequence, flows: Sequence[FlowPair],
                app_scale: float = APP_SCALE, id: int = 0) -> Trajectory:
    """Track a single point forward until it fails or the video ends."""
    if not (1 <= start.t <= video.T and 0 <= start.x <= video.width - 1 and 0 <= start.y <= video.height - 1):
        raise ContractError(f"start {start} out of bounds")
    check_flows(video, flows)
    frames = video.frames
    pos = np.array([[start.x, start.y]], np.float64)
    prob = np.ones(1)
    chain = [pos[0].copy()]
    for t in range(start.t - 1, video.T - 1):
        pos, prob, alive = _advance(frames, flows, t, pos, prob, app_scale)
        if not alive[0]:
            break
        chain.append(pos[0].copy())
    return Trajectory(id, start.t, np.array(chain))


def _grid_shape(width: int, height: int, stride: int) -> tuple[int, int]:
    return (height - 1) // stride + 1, (width - 1) // stride + 1


def _track_all(video: VideoSequence, flows: Sequence[FlowPair], seed_stride: int,
               app_scale: float) -> list[Trajectory]:
    """Run every tracker, keeping tracks of any length, ids in seed order."""
    frames = video.frames
    T, h, w = video.T, video.height, video.width
    ny, nx = _grid_shape(w, h, seed_stride)
    gy, gx = np.mgrid[0:ny, 0:nx]
    grid_xy = np.stack([gx.ravel() * seed_stride, gy.ravel() * seed_stride], axis=1).astype(np.float64)

    ids = np.empty(0, np.intp)
    pos = np.empty((0, 2))
    prob = np.empty(0)
    starts: list[int] = []
    rec_ids, rec_xy = [], []
    for t in range(T):
        if t > 0 and ids.size:
            pos, prob, alive = _advance(frames, flows, t - 1, pos, prob, app_scale)
            ids, pos, prob = ids[alive], pos[alive], prob[alive]
        covered = np.zeros(ny * nx, bool)
        if ids.size:
            cx = np.clip(np.floor(pos[:, 0] / seed_stride + 0.5).astype(np.intp), 0, nx - 1)
            cy = np.clip(np.floor(pos[:, 1] / seed_stride + 0.5).astype(np.intp), 0, ny - 1)
            covered[cy * nx + cx] = True
        fresh = np.flatnonzero(~covered)
        new_ids = np.arange(len(starts), len(starts) + fresh.size)
        starts.extend([t + 1] * fresh.size)
        ids = np.concatenate([ids, new_ids])
        pos = np.concatenate([pos, grid_xy[fresh]])
        prob = np.concatenate([prob, np.ones(fresh.size)])
        rec_ids.append(ids.copy())
        rec_xy.append(pos.copy())

    all_ids = np.concatenate(rec_ids)
    all_xy = np.concatenate(rec_xy)
    order = np.argsort(all_ids, kind="stable")
    counts = np.bincount(all_ids, minlength=len(starts))
    chunks = np.split(all_xy[order], np.cumsum(counts)[:-1])
    return [Trajectory(i, starts[i], chunk) for i, chunk in enumerate(chunks)]


def generate_trajectories(video: VideoSequence, flows: Sequence[FlowPair], seed_stride: int = 2,
                          app_scale: float = APP_SCALE, min_length: int = MIN_LENGTH) -> list[Trajectory]:
    """Seed trackers on a ``seed_stride`` grid and track them through the video.

    Frame 1 is seeded on every grid node; later frames are re-seeded wherever
    no live tracker rounds onto a node. Tracks shorter than ``min_length`` are
    dropped and survivors are renumbered ``0..n-1`` in (frame, y, x) seed order.
    """
    if video is None or video.T < 1:
        raise ContractError("empty video")
    if seed_stride < 1:
        raise ContractError("seed_stride must be >= 1")
    check_flows(video, flows)
    tracks = _track_all(video, flows, seed_stride, app_scale)
    kept = [tr for tr in tracks if len(tr) >= min_length]
    return [Trajectory(i, tr.t0, tr.xy) for i, tr in enumerate(kept)]


# ---------------------------------------------------------------------------
# features


def _velocity(xy: np.ndarray, dt: int) -> np.ndarray:
    L = xy.shape[0]
    if L <= dt:
        if L < 2:
            return np.zeros(2)
        return (xy[-1] - xy[0]) / (L - 1)
    return ((xy[dt:] - xy[:-dt]) / dt).mean(axis=0)


def trajectory_features(traj: Trajectory, video: VideoSequence, dt: int = 3) -> TrajectoryFeatures:
    """Mean location, mean colour and mean ``dt``-step velocity of one trajectory."""
    xy = traj.xy
    colors = np.array([
        bilinear(video.frames[traj.t0 - 1 + n], np.array(x), np.array(y))
        for n, (x, y) in enumerate(xy)
    ])
    loc = xy.mean(axis=0)
    col = colors.mean(axis=0)
    vel = _velocity(xy, dt)
    return TrajectoryFeatures(tuple(map(float, loc)), tuple(map(float, col)), tuple(map(float, vel)))


def compute_features(trajs: Sequence[Trajectory], video: VideoSequence, dt: int = 3) -> FeatureTable:
    """Batch version of :func:`trajectory_features` for a whole set."""
    n = len(trajs)
    if n == 0:
        z = np.zeros((0, 2))
        return FeatureTable(z, np.zeros((0, 3)), z.copy(), np.zeros(0, int), np.zeros(0, int))
    lengths = np.array([len(tr) for tr in trajs])
    t0 = np.array([tr.t0 for tr in trajs])
    owner, _, xy, colors = point_table(trajs, video)
    loc = np.stack([np.bincount(owner, xy[:, k], n) for k in range(2)], axis=1) / lengths[:, None]
    col = np.stack([np.bincount(owner, colors[:, k], n) for k in range(3)], axis=1) / lengths[:, None]
    vel = np.array([_velocity(tr.xy, dt) for tr in trajs])
    return FeatureTable(loc, col, vel, t0, t0 + lengths - 1)


class PointTable(NamedTuple):
    """All trajectory points flattened: owner index, 0-based frame, position, colour."""

    owner: np.ndarray
    frame: np.ndarray
    xy: np.ndarray
    color: np.ndarray


def point_table(trajs: Sequence[Trajectory], video: VideoSequence) -> PointTable:
    if not trajs:
        return PointTable(np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros((0, 2)), np.zeros((0, 3)))
    lengths = np.array([len(tr) for tr in trajs])
    owner = np.repeat(np.arange(len(trajs)), lengths)
    frame = np.concatenate([np.arange(tr.t0 - 1, tr.t0 - 1 + len(tr)) for tr in trajs])
    xy = np.concatenate([tr.xy for tr in trajs])
    colors = np.empty((xy.shape[0], 3))
    for t in np.unique(frame):
        sel = frame == t
        colors[sel] = bilinear(video.frames[t], xy[sel, 0], xy[sel, 1])
    return PointTable(owner, frame, xy, colors)


# ---------------------------------------------------------------------------
# serialisation


def save_trajectories(path: str | os.PathLike, trajs: Iterable[Trajectory]) -> None:
    lines = []
    for tr in trajs:
        lines.append(f"{tr.id} {len(tr)} {tr.t0}")
        lines.extend(f"{x:.3f} {y:.3f}" for x, y in tr.xy)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_trajectories(path: str | os.PathLike) -> list[Trajectory]:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    out = []
    i = 0
    while i < len(rows):
        if len(rows[i]) != 3:
            raise ValueError(f"{path}: expected 'id L t0' header at record line {i + 1}")
        tid, L, t0 = map(int, rows[i])
        body = rows[i + 1:i + 1 + L]
        if len(body) != L:
            raise ValueError(f"{path}: trajectory {tid} truncated")
        out.append(Trajectory(tid, t0, np.array(body, dtype=np.float64)))
        i += 1 + L
    return out
