"""Convolutional spatial propagation: affinity-weighted recurrent diffusion on grids and volumes."""
from .affinity import AffinityField, Mode, NormalizedKernels, guided_affinity, normalize, stability_margin
from .disparity import CostVolume, depth_metrics, l1_loss, soft_argmin, stereo_metrics
from .formats import SparseSamples, make_scene, read_pfm, read_pgm, sample_sparse, write_pfm, write_pgm
from .grid import BinaryMask, FeatureGrid, FeatureVolume, ShapeError
from .propagate import (PropagationConfig, complete_depth, nearest_fill, replacement_only, run, smooth_fill,
                        step)
from .volume import fuse_stack, run3, step3

__all__ = [
    "AffinityField", "BinaryMask", "CostVolume", "FeatureGrid", "FeatureVolume", "Mode",
    "NormalizedKernels", "PropagationConfig", "ShapeError", "SparseSamples", "complete_depth",
    "depth_metrics", "fuse_stack", "guided_affinity", "l1_loss", "make_scene", "nearest_fill",
    "normalize", "read_pfm", "read_pgm", "replacement_only", "run", "run3", "sample_sparse",
    "smooth_fill", "soft_argmin", "stability_margin", "step", "step3", "stereo_metrics", "write_pfm", "write_pgm",
]
