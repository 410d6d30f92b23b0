"""strandforge: sketch-conditioned multi-scale hair strand generation."""

from .codec import LatentCodec, LatentGrid, StrandCodec, StrandCodecConfig
from .config import PipelineConfig, desk_config, full_scale_config
from .hairmap import HairMap, hairmap_to_strands, remove_outliers, strands_to_hairmap
from .pipeline import GenerationResult, HairPipeline
from .pyramid import PyramidConfig, ScalePyramid, decompose, reconstruct, tile, upsample_fixed
from .scalp import ScalpModel
from .sketchlab import SketchImage, StyleParams, augment, rasterize_sketch, synthesize_hairstyle
from .strands import Strand, StrandSet, resample_strand

__version__ = "0.1.0"

__all__ = [
    "HairMap",
    "HairPipeline",
    "GenerationResult",
    "LatentCodec",
    "LatentGrid",
    "PipelineConfig",
    "PyramidConfig",
    "ScalePyramid",
    "ScalpModel",
    "SketchImage",
    "Strand",
    "StrandCodec",
    "StrandCodecConfig",
    "StrandSet",
    "StyleParams",
    "augment",
    "decompose",
    "desk_config",
    "hairmap_to_strands",
    "full_scale_config",
    "rasterize_sketch",
    "reconstruct",
    "remove_outliers",
    "resample_strand",
    "strands_to_hairmap",
    "synthesize_hairstyle",
    "tile",
    "upsample_fixed",
]
