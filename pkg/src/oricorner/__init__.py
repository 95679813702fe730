"""Building polygon extraction from oriented-corner rasters.

Supervision targets, losses, threshold-based polygon initialization,
energy-based refinement, evaluation metrics and a synthetic scene generator.
"""

from .errors import (ConfigError, DomainEmpty, EmptyMask, InvalidPolygon, OriCornerError,
                     PlacementFailure, UndefinedMetric, VertexCollision)
from .geom import Polygon, is_simple, polygon_iou
from .initialization import InitConfig, Initialization, initialize
from .losses import LossWeights, total_loss
from .metrics import EvalReport, InstancePrediction, ap_ar, ciou, polis
from .pipeline import infer_instance, infer_scene
from .refine import Energy, RefineConfig, energy, refine
from .scenegen import NoiseSpec, SceneSpec, generate_scene
from .targets import GridSize, RasterStack, encode

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainEmpty", "EmptyMask", "InvalidPolygon", "OriCornerError",
    "PlacementFailure", "UndefinedMetric", "VertexCollision",
    "Polygon", "is_simple", "polygon_iou",
    "InitConfig", "Initialization", "initialize",
    "LossWeights", "total_loss",
    "EvalReport", "InstancePrediction", "ap_ar", "ciou", "polis",
    "infer_instance", "infer_scene",
    "Energy", "RefineConfig", "energy", "refine",
    "NoiseSpec", "SceneSpec", "generate_scene",
    "GridSize", "RasterStack", "encode",
]
