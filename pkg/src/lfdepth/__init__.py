"""Dense multi-view depth from superpixel planes refined by PatchMatch-style propagation."""

from .config import PipelineConfig, load_config
from .data_io import MultiViewSet, load_dataset, read_pfm, write_pfm
from .geometry import DepthRange, PinholeCamera, SuperpixelPlane
from .pipeline import run_pipeline
from .refine import EnergyModel, EnergyParams, run_refinement
from .superpixel import SlicParams, slic_segment
from .sweep import SweepParams, plane_sweep_init

__version__ = "0.1.0"

__all__ = [
    "DepthRange", "EnergyModel", "EnergyParams", "MultiViewSet", "PinholeCamera",
    "PipelineConfig", "SlicParams", "SuperpixelPlane", "SweepParams", "load_config",
    "load_dataset", "plane_sweep_init", "read_pfm", "run_pipeline", "run_refinement",
    "slic_segment", "write_pfm",
]
