"""Small builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from supertraj.flow import FlowField, FlowPair, VideoSequence


def constant_flows(T: int, width: int, height: int, fwd=(0.0, 0.0), bwd=None) -> list[FlowPair]:
    """Spatially uniform forward flow ``fwd`` and backward flow ``bwd`` (default ``-fwd``)."""
    if bwd is None:
        bwd = (-fwd[0], -fwd[1])
    f = FlowField(np.broadcast_to(np.asarray(fwd, np.float32), (height, width, 2)).copy())
    b = FlowField(np.broadcast_to(np.asarray(bwd, np.float32), (height, width, 2)).copy())
    return [FlowPair(f if t < T - 1 else None, b if t > 0 else None) for t in range(T)]


def constant_video(T: int, width: int, height: int, color=(100, 100, 100)) -> VideoSequence:
    return VideoSequence(np.broadcast_to(np.asarray(color, np.float64), (T, height, width, 3)).copy())


def flows_from_arrays(fwd: list[np.ndarray], bwd: list[np.ndarray]) -> list[FlowPair]:
    """``fwd[t]`` for t < T-1 and ``bwd[t]`` for t > 0, each ``(H, W, 2)``."""
    T = len(fwd) + 1
    return [FlowPair(FlowField(fwd[t]) if t < T - 1 else None, FlowField(bwd[t - 1]) if t > 0 else None)
            for t in range(T)]
