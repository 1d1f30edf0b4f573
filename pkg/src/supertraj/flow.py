"""Optical-flow fields: Middlebury ``.flo`` I/O, bilinear sampling, and a
block-matching estimator for synthetic sequences.

Frames are handled as ``(H, W, 3)`` arrays; flow vectors are ``(dx, dy)`` in
pixels per frame, stored row-major as an ``(H, W, 2)`` float32 array.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, FlowFormatError

FLO_MAGIC = 202021.25


@dataclass(frozen=True)
class FlowField:
    """Dense 2D motion field. ``vectors[y, x] == (dx, dy)``."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ContractError(f"flow must have shape (H, W, 2), got {v.shape}")
        if v.shape[0] <= 0 or v.shape[1] <= 0:
            raise ContractError("flow dimensions must be positive")
        if not np.all(np.isfinite(v)):
            raise ContractError("flow contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), np.float32))

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.vectors.shape == other.vectors.shape and bool(
            np.array_equal(self.vectors, other.vectors)
        )

    __hash__ = None


@dataclass(frozen=True)
class FlowPair:
    """Forward (t -> t+1) and backward (t -> t-1) flow for one frame.

    ``forward`` is ``None`` on the last frame and ``backward`` is ``None`` on
    the first.
    """

    forward: FlowField | None
    backward: FlowField | None

    def __post_init__(self):
        if self.forward is not None and self.backward is not None:
            if self.forward.vectors.shape != self.backward.vectors.shape:
                raise ContractError("forward and backward flow dimensions differ")


@dataclass(frozen=True)
class VideoSequence:
    """Ordered RGB frames stored as a float64 ``(T, H, W, 3)`` array."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4 or f.shape[3] != 3:
            raise ContractError(f"frames must have shape (T, H, W, 3), got {f.shape}")
        if f.shape[0] < 2:
            raise ContractError("a video needs at least 2 frames")
        if f.shape[1] <= 0 or f.shape[2] <= 0:
            raise ContractError("frame dimensions must be positive")
        if f.min() < 0 or f.max() > 255:
            raise ContractError("channel values must lie in [0, 255]")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def size(self) -> int:
        """Pixel count S of one frame."""
        return self.width * self.height


def check_flows(video: VideoSequence, flows: Sequence[FlowPair]) -> None:
    """Validate that ``flows`` covers every transition of ``video``."""
    if len(flows) != video.T:
        raise ContractError(f"expected {video.T} flow pairs, got {len(flows)}")
    shape = (video.height, video.width, 2)
    for t, pair in enumerate(flows):
        if t < video.T - 1 and pair.forward is None:
            raise ContractError(f"missing forward flow for frame {t + 1}")
        if t > 0 and pair.backward is None:
            raise ContractError(f"missing backward flow for frame {t + 1}")
        for f in (pair.forward, pair.backward):
            if f is not None and f.vectors.shape != shape:
                raise ContractError(f"flow for frame {t + 1} has shape {f.vectors.shape}")


# ---------------------------------------------------------------------------
# .flo I/O


def write_flo(path: str | os.PathLike, field: FlowField) -> None:
    h, w = field.height, field.width
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(np.ascontiguousarray(field.vectors, dtype="<f4").tobytes())


def load_flo(path: str | os.PathLike) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise OSError(f"{path}: truncated .flo header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic number {magic!r}")
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: nonpositive dimensions {w}x{h}")
    n = 2 * w * h
    if len(data) < 12 + 4 * n:
        raise OSError(f"{path}: truncated .flo payload")
    vec = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(h, w, 2)
    return FlowField(vec.astype(np.float32))


# ---------------------------------------------------------------------------
# PNG I/O


def read_rgb(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_rgb(path: str | os.PathLike, image: np.ndarray) -> None:
    arr = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_gray(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_gray(path: str | os.PathLike, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# sampling


def bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised bilinear lookup of ``grid[y, x]`` at real coordinates.

    Coordinates must already be inside ``[0, W-1] x [0, H-1]``. Returns shape
    ``x.shape + grid.shape[2:]``. Exact on integer coordinates.
    """
    h, w = grid.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.clip(np.floor(x).astype(np.intp), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    extra = (np.newaxis,) * (grid.ndim - 2)
    fx = fx[(...,) + extra]
    fy = fy[(...,) + extra]
    g = grid.astype(np.float64, copy=False)
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bot = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_bilinear(field: FlowField, x: float, y: float) -> tuple[float, float]:
    if not (0 <= x <= field.width - 1 and 0 <= y <= field.height - 1):
        raise ContractError(f"({x}, {y}) outside {field.width}x{field.height} field")
    dx, dy = bilinear(field.vectors, np.array(x), np.array(y))
    return float(dx), float(dy)


# ---------------------------------------------------------------------------
# block matching


def _displacement_order(radius: int) -> list[tuple[int, int]]:
    cands = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    # tie-break order: magnitude, then dy, then dx
    cands.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[1], d[0]))
    return cands


def estimate_flow_block(a: np.ndarray, b: np.ndarray, block: int = 8, radius: int = 4) -> FlowField:
    """Integer block-matching flow from ``a`` to ``b`` (sum of absolute differences).

    Each ``block x block`` tile of ``a`` is matched against ``b`` within
    ``+-radius`` pixels; displacements that would leave ``b`` are skipped.
    Intended for synthetic test sequences only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if block < 1 or radius < 0:
        raise ConfigError("block must be >= 1 and radius >= 0")
    if block > w or block > h:
        raise ConfigError(f"block {block} larger than image {w}x{h}")
    if a.ndim == 3:
        a = a.sum(axis=2)
        b = b.sum(axis=2)
    out = np.zeros((h, w, 2), np.float32)
    order = _displacement_order(radius)
    for by in range(0, h, block):
        for bx in range(0, w, block):
            ye, xe = min(by + block, h), min(bx + block, w)
            tile = a[by:ye, bx:xe]
            best, best_sad = (0, 0), np.inf
            for dx, dy in order:
                if by + dy < 0 or ye + dy > h or bx + dx < 0 or xe + dx > w:
                    continue
                sad = np.abs(b[by + dy:ye + dy, bx + dx:xe + dx] - tile).sum()
                if sad < best_sad:
                    best, best_sad = (dx, dy), sad
            out[by:ye, bx:xe] = best
    return FlowField(out)
