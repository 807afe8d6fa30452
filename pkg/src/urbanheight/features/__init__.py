"""Explanatory feature construction: indices, temporal statistics, textures, terrain."""

from .glcm import glcm_features, quantize
from .indices import INDICES, spectral_index
from .scenes import OPTICAL_L, OPTICAL_S, RADAR, Scene, scene_filter
from .stack import N_FEATURES, FeatureStack, FeatureStackBuilder, assemble_feature_stack, feature_names
from .temporal import OPTICAL_STATS, RADAR_STATS, temporal_stats, temporal_stats_cube
from .terrain import terrain_features

__all__ = [
    "INDICES", "N_FEATURES", "OPTICAL_L", "OPTICAL_S", "OPTICAL_STATS", "RADAR", "RADAR_STATS",
    "FeatureStack", "FeatureStackBuilder", "Scene", "assemble_feature_stack", "feature_names",
    "glcm_features", "quantize", "scene_filter", "spectral_index", "temporal_stats",
    "temporal_stats_cube", "terrain_features",
]
