"""Segmentation-guided frame synthesis: region style encoding, generation, editing."""

from .editing import swap_background, swap_region_codes
from .encoder import PyramidEncoder, RegionFeature, RegionStyleEncoder, StyleMLP, pool_regions
from .estimator import SegmentationGuidedInjector, prior_mask_sample
from .generator import MaskGuidedGenerator, influence_mask, receptive_radius, style_map
from .losses import SGILossReport, SGIProviders, sgi_loss

__all__ = [
    "MaskGuidedGenerator", "PyramidEncoder", "RegionFeature", "RegionStyleEncoder",
    "SGILossReport", "SGIProviders", "SegmentationGuidedInjector", "StyleMLP",
    "influence_mask", "pool_regions", "prior_mask_sample", "receptive_radius", "sgi_loss", "style_map",
    "swap_background", "swap_region_codes",
]
