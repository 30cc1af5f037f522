"""Export multi-layer CNN features of frame sequences to STCF files."""

from .backbone import DEFAULT_TAPS, MissingWeightsError, load_backbone, tap_channel_total
from .exporter import ExportDataError, ExportJob, export
from .stcf import write_stcf

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TAPS",
    "ExportDataError",
    "ExportJob",
    "MissingWeightsError",
    "export",
    "load_backbone",
    "tap_channel_total",
    "write_stcf",
]
