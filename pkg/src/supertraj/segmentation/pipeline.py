"""End-to-end mask propagation from a first-frame annotation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import clustering
from ..clustering import SuperTrajectory
from ..config import Config
from ..errors import ContractError, ModelError
from ..flow import FlowPair, VideoSequence, check_flows
from ..trajectory import Trajectory, compute_features, generate_trajectories
from .appearance import AppearanceModel, fit_appearance_model
from .labeling import LABELED, Label, classify_trajectories, reverse_track_sources, supertraj_probabilities
from .propagation import PropagationState, build_transition, finalize_masks, propagate
from .regions import build_regions, knn_backward

log = logging.getLogger(__name__)


@dataclass
class PixelEstimates:
    prob: np.ndarray  # (T, H, W) foreground probability
    on_supertraj: np.ndarray  # (T, H, W) pixel carries a labeled super-trajectory point
    on_labeled: np.ndarray  # (T, H, W) pixel carries a point of a labeled trajectory


@dataclass
class SegmentationResult:
    masks: np.ndarray  # (T, H, W) bool
    diagnostics: dict
    stages: dict[str, np.ndarray] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    trajectories: list[Trajectory] = field(default_factory=list)
    supertrajectories: list[SuperTrajectory] = field(default_factory=list)
    labels: np.ndarray | None = None
    probabilities: list[float | None] = field(default_factory=list)
    region_v0: np.ndarray | None = None
    region_v: np.ndarray | None = None
    clamped: np.ndarray | None = None


def _points(trajs: Sequence[Trajectory], shape: tuple[int, int, int]):
    """Rounded pixel coordinates ``(t, y, x)`` of every point plus its owner index."""
    T, h, w = shape
    if not trajs:
        z = np.zeros(0, np.intp)
        return z, z, z, z
    lengths = np.array([len(tr) for tr in trajs])
    owner = np.repeat(np.arange(len(trajs)), lengths)
    t = np.concatenate([np.arange(tr.t0 - 1, tr.t0 - 1 + len(tr)) for tr in trajs])
    xy = np.concatenate([tr.xy for tr in trajs])
    x = np.clip(np.floor(xy[:, 0] + 0.5).astype(np.intp), 0, w - 1)
    y = np.clip(np.floor(xy[:, 1] + 0.5).astype(np.intp), 0, h - 1)
    return t, y, x, owner


def posterior_maps(video: VideoSequence, model: AppearanceModel | None) -> np.ndarray:
    T, h, w = video.T, video.height, video.width
    if model is None:
        return np.full((T, h, w), 0.5)
    return np.stack([model.posterior(f.reshape(-1, 3)).reshape(h, w) for f in video.frames])


def pixel_estimates(video: VideoSequence, trajs: Sequence[Trajectory], supertrajs: Sequence[SuperTrajectory],
                    probabilities: Sequence[float | None], model: AppearanceModel | None,
                    labels: np.ndarray | None = None) -> PixelEstimates:
    """Super-trajectory ratios on trajectory pixels, appearance posterior elsewhere.

    Several labeled points falling on one pixel are averaged.
    """
    shape = (video.T, video.height, video.width)
    prob = posterior_maps(video, model)
    index = {tr.id: i for i, tr in enumerate(trajs)}
    p_traj = np.full(len(trajs), np.nan)
    for st, p in zip(supertrajs, probabilities):
        if p is not None:
            p_traj[[index[m] for m in st.members]] = p
    t, y, x, owner = _points(trajs, shape)
    flat = np.ravel_multi_index((t, y, x), shape) if t.size else t
    size = int(np.prod(shape))
    sel = ~np.isnan(p_traj[owner]) if owner.size else np.zeros(0, bool)
    acc = np.bincount(flat[sel], p_traj[owner[sel]], minlength=size)
    cnt = np.bincount(flat[sel], minlength=size)
    on_st = (cnt > 0).reshape(shape)
    prob = prob.copy()
    prob[on_st] = (acc / np.maximum(cnt, 1)).reshape(shape)[on_st]
    on_labeled = np.zeros(size, bool)
    if labels is not None and owner.size:
        lab = np.isin(np.asarray(labels)[owner], [int(v) for v in LABELED]) & sel
        on_labeled[flat[lab]] = True
    return PixelEstimates(prob, on_st, on_labeled.reshape(shape))


def _fit_model(video, trajs, supertrajs, probabilities, labels, cfg: Config) -> AppearanceModel | None:
    try:
        return fit_appearance_model(video, trajs, supertrajs, probabilities, labels, cfg.gmm_components, cfg.seed)
    except ModelError as exc:
        log.warning("appearance model unavailable (%s); using 0.5 prior", exc)
        return None


def segment_video(video: VideoSequence, flows: Sequence[FlowPair], mask: np.ndarray, config: Config = Config(),
                  workers: int = 1, stage_maps: bool = False, trajectories: Sequence[Trajectory] | None = None,
                  supertrajectories: Sequence[SuperTrajectory] | None = None) -> SegmentationResult:
    """Propagate the frame-1 ``mask`` through ``video``.

    Precomputed ``trajectories`` (and ``supertrajectories`` built from them)
    skip the corresponding stages. With ``stage_maps`` the intermediate probability maps (mask-only ratios,
    reverse-tracked ratios, propagated regions, final) are returned in
    ``result.stages``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (video.height, video.width):
        raise ContractError(f"mask shape {mask.shape} does not match frames {(video.height, video.width)}")
    check_flows(video, flows)
    cfg = config
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    if supertrajectories is not None and trajectories is None:
        raise ContractError("super-trajectories require the trajectories they were built from")
    if trajectories is None:
        trajs = generate_trajectories(video, flows, cfg.seed_stride, cfg.app_scale)
    else:
        trajs = list(trajectories)
    if not trajs:
        raise ContractError("no trajectories survived tracking")
    ft = compute_features(trajs, video, cfg.dt)
    lap("track")

    ccfg = clustering.ClusteringConfig(K=cfg.K, iterations=cfg.iterations, min_cluster_size=cfg.min_cluster_size,
                                       dt=cfg.dt, H=cfg.H, density_mode=cfg.density_mode)
    if supertrajectories is None:
        dims = (video.width, video.height, video.T)
        supertrajs = clustering.generate_supertrajectories(trajs, ft, dims, ccfg, workers)
    else:
        supertrajs = list(supertrajectories)
    lap("cluster")

    base_labels = classify_trajectories(trajs, mask)
    labels = reverse_track_sources(base_labels, trajs, ft.velocity, (video.width, video.height), cfg.reverse_variant)
    probs = supertraj_probabilities(supertrajs, labels, trajs)
    model = _fit_model(video, trajs, supertrajs, probs, labels, cfg)
    est = pixel_estimates(video, trajs, supertrajs, probs, model, labels)
    lap("appearance")

    stages: dict[str, np.ndarray] = {}
    if stage_maps:
        probs_b = supertraj_probabilities(supertrajs, base_labels, trajs)
        model_b = _fit_model(video, trajs, supertrajs, probs_b, base_labels, cfg)
        stages["mask_ratio"] = pixel_estimates(video, trajs, supertrajs, probs_b, model_b).prob
        stages["reverse_tracked"] = est.prob

    regions = build_regions(video.frames, cfg.superpixels, cfg.compactness, workers)
    lap("regions")

    n_regions = len(regions)
    flat_labels = regions.labels.ravel()
    counts = np.bincount(flat_labels, minlength=n_regions)
    v0 = np.bincount(flat_labels, est.prob.ravel(), n_regions) / counts
    clamped = np.zeros(n_regions, bool)
    clamped[np.unique(regions.labels[est.on_labeled])] = True
    nn = knn_backward(regions.descriptors, regions.frame, cfg.N)
    P = build_transition(regions.descriptors, nn)
    v = propagate(PropagationState(v0, clamped, P), cfg.propagation_iterations)
    masks = finalize_masks(regions.labels, v, est.on_labeled, est.prob, cfg.threshold)
    lap("propagate")
    if stage_maps:
        stages["propagated"] = v[regions.labels]
        stages["final"] = masks.astype(np.float64)

    n_labeled_st = sum(p is not None for p in probs)
    diagnostics = {
        "frames": video.T,
        "width": video.width,
        "height": video.height,
        "trajectories": len(trajs),
        "mean_length": float(np.mean([len(tr) for tr in trajs])),
        "T_f": int(np.count_nonzero(labels == Label.FOREGROUND)),
        "T_b": int(np.count_nonzero(labels == Label.BACKGROUND)),
        "T_o": int(np.count_nonzero(labels == Label.OUTSIDE)),
        "T_u": int(np.count_nonzero(labels == Label.UNLABELED)),
        "supertrajectories": len(supertrajs),
        "labeled_supertrajectories": n_labeled_st,
        "regions": n_regions,
        "clamped_regions": int(clamped.sum()),
        "appearance_model": model is not None,
        "foreground_fraction": [float(m.mean()) for m in masks],
        "config": cfg.to_dict(),
    }
    return SegmentationResult(masks, diagnostics, stages, timings, trajs, supertrajs, labels, probs, v0, v, clamped)
