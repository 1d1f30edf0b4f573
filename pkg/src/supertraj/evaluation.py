"""IoU scoring, synthetic ground-truth sequences and dataset benchmarking."""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config
from .errors import ContractError
from .flow import (FlowField, FlowPair, VideoSequence, load_flo, read_gray, read_rgb, write_flo, write_gray,
                   write_rgb)
from .segmentation.pipeline import segment_video

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def iou(mask: np.ndarray, gt: np.ndarray, empty: float = 1.0) -> float:
    """Intersection over union; ``empty`` is returned when both masks are empty."""
    mask = np.asarray(mask, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if mask.shape != gt.shape:
        raise ContractError(f"mask shape {mask.shape} != ground truth shape {gt.shape}")
    union = np.count_nonzero(mask | gt)
    if union == 0:
        return float(empty)
    return np.count_nonzero(mask & gt) / union


# ---------------------------------------------------------------------------
# synthetic sequences


@dataclass(frozen=True)
class SyntheticObject:
    start: tuple[float, float]  # top-left corner on frame 1
    velocity: tuple[float, float] | Sequence[tuple[float, float]] = (0.0, 0.0)
    size: int = 30
    shape: str = "rectangle"  # or "disk"
    color: tuple[float, float, float] = (220.0, 60.0, 40.0)
    texture: float = 0.0  # +- amplitude of hash noise, grey levels
    target: bool = True


@dataclass(frozen=True)
class Occluder:
    """Full-height vertical bar present on frames ``first..last`` (1-based, inclusive)."""

    x: int
    width: int
    first: int
    last: int
    color: tuple[float, float, float] = (30.0, 30.0, 30.0)


@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 160
    height: int = 120
    T: int = 40
    objects: tuple[SyntheticObject, ...] = (SyntheticObject(start=(20.0, 45.0)),)
    occluder: Occluder | None = None
    background: tuple[float, float, float] = (60.0, 110.0, 170.0)
    background_texture: float = 0.0
    salt: int = 0

    def __post_init__(self):
        if self.T < 2 or self.width < 1 or self.height < 1:
            raise ContractError("synthetic video needs T >= 2 and positive dimensions")
        for obj in self.objects:
            if obj.shape not in ("rectangle", "disk"):
                raise ContractError(f"unknown shape {obj.shape!r}")
            if not isinstance(obj.velocity[0], (int, float)) and len(obj.velocity) != self.T - 1:
                raise ContractError("per-frame velocity list must have T-1 entries")
            if obj.target:
                for t in (0, self.T - 1):
                    if not self._in_frame(obj, t):
                        raise ContractError(f"target object leaves the frame on frame {t + 1}")

    def _in_frame(self, obj: SyntheticObject, t: int) -> bool:
        x, y = object_position(obj, t)
        return x + obj.size > 0 and y + obj.size > 0 and x < self.width and y < self.height

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        data["objects"] = tuple(SyntheticObject(**_tuplify(o)) for o in data.get("objects", []))
        if data.get("occluder") is not None:
            data["occluder"] = Occluder(**_tuplify(data["occluder"]))
        return cls(**_tuplify(data))

    def to_dict(self) -> dict:
        return asdict(self)


def _tuplify(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, list) and k != "objects":
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        out[k] = v
    return out


def _step(obj: SyntheticObject, t: int) -> np.ndarray:
    """Displacement from 0-based frame ``t`` to ``t + 1``."""
    v = obj.velocity
    if isinstance(v[0], (int, float)):
        return np.asarray(v, dtype=np.float64)
    return np.asarray(v[t], dtype=np.float64)


def object_position(obj: SyntheticObject, t: int) -> np.ndarray:
    pos = np.asarray(obj.start, dtype=np.float64).copy()
    for k in range(t):
        pos += _step(obj, k)
    return pos


def _hash_noise(u: np.ndarray, v: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic per-pixel noise in [-1, 1]."""
    u = u.astype(np.int64).astype(np.uint64)
    v = v.astype(np.int64).astype(np.uint64)
    h = (u * np.uint64(73856093)) ^ (v * np.uint64(19349663)) ^ np.uint64((salt * 83492791) & 0xFFFFFFFF)
    h = (h ^ (h >> np.uint64(13))) * np.uint64(0x5BD1E995)
    h = h ^ (h >> np.uint64(15))
    return (h % np.uint64(65536)).astype(np.float64) / 32767.5 - 1.0


def _textured(color, amp: float, u, v, salt: int) -> np.ndarray:
    base = np.broadcast_to(np.asarray(color, np.float64), u.shape + (3,))
    if amp == 0:
        return base.copy()
    return np.clip(base + amp * _hash_noise(u, v, salt)[..., None], 0, 255)


@dataclass
class SyntheticSequence:
    video: VideoSequence
    flows: list[FlowPair]
    gt: np.ndarray  # (T, H, W) visible target pixels
    mask: np.ndarray  # (H, W) frame-1 annotation
    layers: np.ndarray  # (T, H, W): -1 background, -2 occluder, k >= 0 object index


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSequence:
    """Render the scene and its exact forward/backward flow.

    Objects are drawn in order, the occluder on top. Flow inside a visible
    object is its displacement; background and occluder pixels are static.
    """
    W, H, T = spec.width, spec.height, spec.T
    ys, xs = np.mgrid[0:H, 0:W]
    frames = np.empty((T, H, W, 3))
    layers = np.full((T, H, W), -1, np.intp)
    for t in range(T):
        img = _textured(spec.background, spec.background_texture, xs, ys, spec.salt)
        for k, obj in enumerate(spec.objects):
            px, py = object_position(obj, t)
            u, v = xs - px, ys - py
            if obj.shape == "rectangle":
                inside = (u >= 0) & (u < obj.size) & (v >= 0) & (v < obj.size)
            else:
                c = (obj.size - 1) / 2.0
                inside = (u - c) ** 2 + (v - c) ** 2 <= (obj.size / 2.0) ** 2
            tex = _textured(obj.color, obj.texture, np.floor(u), np.floor(v), spec.salt + 1 + k)
            img[inside] = tex[inside]
            layers[t][inside] = k
        occ = spec.occluder
        if occ is not None and occ.first <= t + 1 <= occ.last:
            bar = (xs >= occ.x) & (xs < occ.x + occ.width)
            img[bar] = occ.color
            layers[t][bar] = -2
        frames[t] = img

    flows = []
    for t in range(T):
        fwd = bwd = None
        if t < T - 1:
            f = np.zeros((H, W, 2), np.float32)
            for k, obj in enumerate(spec.objects):
                f[layers[t] == k] = _step(obj, t)
            fwd = FlowField(f)
        if t > 0:
            b = np.zeros((H, W, 2), np.float32)
            for k, obj in enumerate(spec.objects):
                b[layers[t] == k] = -_step(obj, t - 1)
            bwd = FlowField(b)
        flows.append(FlowPair(fwd, bwd))

    targets = [k for k, obj in enumerate(spec.objects) if obj.target]
    gt = np.isin(layers, targets)
    return SyntheticSequence(VideoSequence(frames), flows, gt, gt[0].copy(), layers)


# ---------------------------------------------------------------------------
# dataset layout


def frame_name(t: int) -> str:
    return f"{t:05d}"


def write_sequence(seq_dir: str | os.PathLike, seq: SyntheticSequence) -> None:
    """Write ``frames/``, ``flow/``, ``gt/`` and ``mask.png`` under ``seq_dir``."""
    root = Path(seq_dir)
    for sub in ("frames", "flow", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t in range(seq.video.T):
        name = frame_name(t)
        write_rgb(root / "frames" / f"{name}.png", seq.video.frames[t])
        write_gray(root / "gt" / f"{name}.png", seq.gt[t].astype(np.uint8) * 255)
        pair = seq.flows[t]
        if pair.forward is not None:
            write_flo(root / "flow" / f"{name}.flo", pair.forward)
        if pair.backward is not None:
            write_flo(root / "flow" / f"{name}.rflo", pair.backward)
    write_gray(root / "mask.png", seq.mask.astype(np.uint8) * 255)


def read_mask(path: str | os.PathLike) -> np.ndarray:
    m = read_gray(path)
    bad = (m != 0) & (m != 255)
    if bad.any():
        raise ValueError(f"{path}: mask values must be 0 or 255")
    return m == 255


def frame_paths(frames_dir: str | os.PathLike) -> list[Path]:
    return sorted(Path(frames_dir).glob("*.png"))


def load_frames(frames_dir: str | os.PathLike) -> VideoSequence:
    paths = frame_paths(frames_dir)
    if len(paths) < 2:
        raise ContractError(f"{frames_dir}: need at least 2 frames, found {len(paths)}")
    return VideoSequence(np.stack([read_rgb(p) for p in paths]).astype(np.float64))


def load_flows(flow_dir: str | os.PathLike, names: Sequence[str]) -> list[FlowPair]:
    """Forward ``<name>.flo`` for all but the last frame, backward ``<name>.rflo`` for all but the first."""
    flow_dir = Path(flow_dir)
    pairs = []
    for t, name in enumerate(names):
        fwd = bwd = None
        if t < len(names) - 1:
            p = flow_dir / f"{name}.flo"
            if not p.exists():
                raise FileNotFoundError(f"missing flow file {p}")
            fwd = load_flo(p)
        if t > 0:
            p = flow_dir / f"{name}.rflo"
            if not p.exists():
                raise FileNotFoundError(f"missing flow file {p}")
            bwd = load_flo(p)
        pairs.append(FlowPair(fwd, bwd))
    return pairs


def load_sequence(seq_dir: str | os.PathLike):
    """Return ``(video, flows, mask, gt)``; ``gt`` is ``None`` when absent."""
    root = Path(seq_dir)
    paths = frame_paths(root / "frames")
    video = load_frames(root / "frames")
    flows = load_flows(root / "flow", [p.stem for p in paths])
    mask = read_mask(root / "mask.png")
    gt = None
    gt_paths = [root / "gt" / f"{p.stem}.png" for p in paths]
    if all(p.exists() for p in gt_paths):
        gt = np.stack([read_gray(p) > 127 for p in gt_paths])
    return video, flows, mask, gt


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class SequenceResult:
    name: str
    status: str  # "ok", "skipped" or "failed"
    per_frame: list[float] = field(default_factory=list)
    mean: float | None = None
    message: str = ""
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    sequences: list[SequenceResult]
    config: dict
    skip_first: bool = True

    @property
    def scored(self) -> list[SequenceResult]:
        return [s for s in self.sequences if s.status == "ok"]

    @property
    def mean(self) -> float | None:
        scored = self.scored
        if not scored:
            return None
        return float(np.mean([s.mean for s in scored]))

    def to_dict(self, timings: bool = False) -> dict:
        seqs = []
        for s in self.sequences:
            d = asdict(s)
            if not timings:
                d.pop("timings")
            seqs.append(d)
        return {"schema": SCHEMA_VERSION, "mean_iou": self.mean, "skip_first": self.skip_first,
                "sequences": seqs, "config": self.config}

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        width = max([len(s.name) for s in self.sequences] + [len("Avg. (entire)")])
        lines = [f"{'Video':<{width}}  IoU", "-" * (width + 8)]
        for s in self.sequences:
            score = f"{s.mean:.3f}" if s.mean is not None else s.status
            lines.append(f"{s.name:<{width}}  {score}")
        lines.append("-" * (width + 8))
        avg = f"{self.mean:.3f}" if self.mean is not None else "n/a"
        lines.append(f"{'Avg. (entire)':<{width}}  {avg}")
        return "\n".join(lines)


def score_masks(masks: np.ndarray, gt: np.ndarray, skip_first: bool = True) -> tuple[list[float], float]:
    per_frame = [iou(m, g) for m, g in zip(masks, gt)]
    scored = per_frame[1:] if skip_first and len(per_frame) > 1 else per_frame
    return per_frame, float(np.mean(scored))


def evaluate_sequence(seq_dir: str | os.PathLike, config: Config, skip_first: bool = True,
                      out_dir: str | os.PathLike | None = None) -> SequenceResult:
    name = Path(seq_dir).name
    try:
        video, flows, mask, gt = load_sequence(seq_dir)
    except FileNotFoundError as exc:
        return SequenceResult(name, "failed", message=str(exc))
    if gt is None:
        log.warning("%s: no ground truth, skipped", name)
        return SequenceResult(name, "skipped", message="missing ground truth")
    start = time.perf_counter()
    try:
        res = segment_video(video, flows, mask, config)
    except (ContractError, ValueError) as exc:
        return SequenceResult(name, "failed", message=str(exc))
    per_frame, mean = score_masks(res.masks, gt, skip_first)
    timings = dict(res.timings, total=time.perf_counter() - start)
    if out_dir is not None:
        dest = Path(out_dir) / name
        dest.mkdir(parents=True, exist_ok=True)
        for t, m in enumerate(res.masks):
            write_gray(dest / f"{frame_name(t)}.png", m.astype(np.uint8) * 255)
    return SequenceResult(name, "ok", per_frame, mean, timings=timings)


def list_sequences(dataset_dir: str | os.PathLike) -> list[Path]:
    root = Path(dataset_dir)
    if (root / "frames").is_dir():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "frames").is_dir())


def run_benchmark(dataset_dir: str | os.PathLike, config: Config = Config(), workers: int = 1,
                  skip_first: bool = True, out_dir: str | os.PathLike | None = None) -> EvalReport:
    """Segment and score every sequence below ``dataset_dir``.

    ``dataset_dir`` may itself be a sequence directory. Sequences run on
    ``workers`` threads; the report keeps directory order.
    """
    seqs = list_sequences(dataset_dir) if Path(dataset_dir).is_dir() else []
    fn = lambda p: evaluate_sequence(p, config, skip_first, out_dir)  # noqa: E731
    if workers > 1 and len(seqs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, seqs))
    else:
        results = [fn(p) for p in seqs]
    return EvalReport(results, config.to_dict(), skip_first)
