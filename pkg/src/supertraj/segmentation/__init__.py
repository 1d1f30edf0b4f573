from .appearance import AppearanceModel, GaussianMixture, fit_appearance_model, fit_weighted_gmm
from .labeling import Label, classify_trajectories, reverse_track_sources, supertraj_probability
from .pipeline import SegmentationResult, pixel_estimates, segment_video
from .propagation import PropagationState, build_transition, finalize_masks, propagate
from .regions import RegionSet, frame_descriptors, knn_backward, region_descriptor, slic_regions

__all__ = [
    "AppearanceModel",
    "GaussianMixture",
    "Label",
    "PropagationState",
    "RegionSet",
    "SegmentationResult",
    "build_transition",
    "classify_trajectories",
    "finalize_masks",
    "fit_appearance_model",
    "fit_weighted_gmm",
    "frame_descriptors",
    "knn_backward",
    "pixel_estimates",
    "propagate",
    "region_descriptor",
    "reverse_track_sources",
    "segment_video",
    "slic_regions",
    "supertraj_probability",
]
