"""Reference-based video colorization with spatiotemporal correspondence masks."""

from .correspondence import (
    AffinityMatrix,
    CorrelationMatrix,
    StackedCorrelation,
    affinity,
    correlation,
    restrict,
    stacked_affinity,
    windowed_affinity,
)
from .dense_tracking import DenseParams, DenseState, build_dense_mask, init_state, propagate_step
from .errors import ChromaflowError
from .features import FeatureGrid, FeatureSource, extract_builtin, load_external, write_stcf
from .imaging import Frame, VideoSequence, lab_to_rgb, load_sequence, rgb_to_lab, save_sequence
from .instance_tracking import InstanceLabelMap, build_instance_mask, track_instances
from .masks import TrackMask
from .pipeline import PipelineConfig, blend_baseline, colorize, combine_masks
from .refine import Refiner, refine_frame
from .synth import Fixture, generate_fixture
from .warp import WarpResult, upsample_ab, warp_multi, warp_single

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "ChromaflowError",
    "CorrelationMatrix",
    "DenseParams",
    "DenseState",
    "FeatureGrid",
    "FeatureSource",
    "Fixture",
    "Frame",
    "InstanceLabelMap",
    "PipelineConfig",
    "Refiner",
    "StackedCorrelation",
    "TrackMask",
    "VideoSequence",
    "WarpResult",
    "affinity",
    "blend_baseline",
    "build_dense_mask",
    "build_instance_mask",
    "colorize",
    "combine_masks",
    "correlation",
    "extract_builtin",
    "generate_fixture",
    "init_state",
    "lab_to_rgb",
    "load_external",
    "load_sequence",
    "propagate_step",
    "refine_frame",
    "restrict",
    "rgb_to_lab",
    "save_sequence",
    "stacked_affinity",
    "track_instances",
    "upsample_ab",
    "warp_multi",
    "warp_single",
    "windowed_affinity",
    "write_stcf",
]
