"""Semi-supervised video object segmentation with super-trajectories.

Dense point trajectories are clustered into super-trajectories with a
density-peaks method, and a first-frame mask is propagated to every frame
through trajectory labels, colour models and a superpixel re-occurrence graph.
"""

from .config import Config, load_config
from .flow import FlowField, FlowPair, VideoSequence, load_flo, write_flo
from .segmentation import segment_video
from .trajectory import Trajectory, generate_trajectories

__all__ = [
    "Config",
    "FlowField",
    "FlowPair",
    "Trajectory",
    "VideoSequence",
    "generate_trajectories",
    "load_config",
    "load_flo",
    "segment_video",
    "write_flo",
]

__version__ = "0.1.0"
