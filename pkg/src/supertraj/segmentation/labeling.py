"""Trajectory categories from the first-frame mask, reverse tracking, and
super-trajectory foreground ratios."""
from __future__ import annotations

from enum import IntEnum
from typing import Literal, Sequence

import numpy as np

from ..clustering import SuperTrajectory
from ..errors import ContractError
from ..trajectory import Trajectory


class Label(IntEnum):
    UNLABELED = 0
    FOREGROUND = 1
    BACKGROUND = 2
    OUTSIDE = 3  # started outside the view; counted as background


LABELED = (Label.FOREGROUND, Label.BACKGROUND, Label.OUTSIDE)

ReverseVariant = Literal["printed", "extrapolated"]


def _pixel(x: float, y: float, width: int, height: int) -> tuple[int, int]:
    return (min(max(int(np.floor(x + 0.5)), 0), width - 1),
            min(max(int(np.floor(y + 0.5)), 0), height - 1))


def classify_trajectories(trajs: Sequence[Trajectory], mask: np.ndarray) -> np.ndarray:
    """Label frame-1 starters from ``mask`` (bool, ``(H, W)``); others unlabeled."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.full(len(trajs), Label.UNLABELED, dtype=np.int8)
    for i, tr in enumerate(trajs):
        if tr.t0 == 1:
            x, y = _pixel(*tr.xy[0], w, h)
            out[i] = Label.FOREGROUND if mask[y, x] else Label.BACKGROUND
    return out


def virtual_source(tr: Trajectory, velocity, variant: ReverseVariant = "printed") -> tuple[float, float]:
    """Position one mean-velocity step before the first point.

    ``extrapolated`` instead walks back all the way to frame 1.
    """
    steps = 1 if variant == "printed" else tr.t0 - 1
    x1, y1 = tr.xy[0]
    return float(x1 - steps * velocity[0]), float(y1 - steps * velocity[1])


def reverse_track_sources(labels: np.ndarray, trajs: Sequence[Trajectory], velocities: np.ndarray,
                          frame_dims: tuple[int, int], variant: ReverseVariant = "printed") -> np.ndarray:
    """Move unlabeled trajectories whose virtual source lies off-frame to ``OUTSIDE``."""
    if len(labels) != len(trajs) or len(velocities) != len(trajs):
        raise ContractError("labels, trajectories and velocities must align")
    width, height = frame_dims
    out = np.array(labels, dtype=np.int8, copy=True)
    for i, tr in enumerate(trajs):
        if out[i] != Label.UNLABELED:
            continue
        x0, y0 = virtual_source(tr, velocities[i], variant)
        if not (0 <= x0 <= width - 1 and 0 <= y0 <= height - 1):
            out[i] = Label.OUTSIDE
    return out


def supertraj_probability(member_labels) -> float | None:
    """Foreground share among labeled members; ``None`` when none is labeled."""
    member_labels = np.asarray(member_labels)
    if member_labels.size == 0:
        raise ContractError("empty super-trajectory")
    fg = int(np.count_nonzero(member_labels == Label.FOREGROUND))
    bg = int(np.count_nonzero((member_labels == Label.BACKGROUND) | (member_labels == Label.OUTSIDE)))
    if fg + bg == 0:
        return None
    return fg / (fg + bg)


def supertraj_probabilities(supertrajs: Sequence[SuperTrajectory], labels: np.ndarray,
                            trajs: Sequence[Trajectory]) -> list[float | None]:
    index = {tr.id: i for i, tr in enumerate(trajs)}
    return [supertraj_probability(labels[[index[m] for m in st.members]]) for st in supertrajs]
