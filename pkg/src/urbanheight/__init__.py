"""Wall-to-wall urban building height mapping from sparse lidar heights and image time series."""

from .exceptions import (ConfigError, ConvergenceError, GridMismatchError, GridParseError,
                         MalformedRecordError, MissingModelError, PredictionError, ProjectionDomainError,
                         StageError, TrainingError, UrbanHeightError)
from .features import FeatureStack, FeatureStackBuilder, assemble_feature_stack, feature_names
from .forest import ForestRegressor, load_model, save_model
from .pipeline import Pipeline, PipelineConfig, load_config, parse_config, run_pipeline
from .projection import GeoPoint, mollweide_forward, mollweide_inverse
from .raster import GridSpec, Raster
from .sampler import Footprint, HeightSample, HeightSampler
from .subregion import SubregionHeightModel, SubregionPartition
from .validation import ValidationReport, compare_products, pearson_r, rmse

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "GridMismatchError", "GridParseError", "MalformedRecordError",
    "MissingModelError", "PredictionError", "ProjectionDomainError", "StageError", "TrainingError",
    "UrbanHeightError", "FeatureStack", "FeatureStackBuilder", "assemble_feature_stack", "feature_names",
    "ForestRegressor", "load_model", "save_model", "Pipeline", "PipelineConfig", "load_config",
    "parse_config", "run_pipeline", "GeoPoint", "mollweide_forward", "mollweide_inverse", "GridSpec",
    "Raster", "Footprint", "HeightSample", "HeightSampler", "SubregionHeightModel", "SubregionPartition",
    "ValidationReport", "compare_products", "pearson_r", "rmse",
]
