"""Instance-silhouette pose estimation against untextured LoD city models."""
from .camera import Intrinsics, Pose4
from .cost import cost_area, cost_confidence, cost_semantic, merge_to_semantic
from .evaluation import PoseError, pose_error, recall_at, summarize
from .kernels import DEFAULT_BACKEND
from .lod_model import InstancedModel, Mesh, instancify, parse_obj
from .masks import Mask, MaskSet
from .raster import InstanceMap, extract_hypothesis_masks, render_instance_map
from .solver import CostVolume, Evaluator, RefineConfig, SearchSpace, localize

__version__ = "0.1.0"

__all__ = [
    "CostVolume", "Evaluator", "InstanceMap", "InstancedModel", "Intrinsics", "Mask", "MaskSet", "Mesh",
    "Pose4", "PoseError", "RefineConfig", "SearchSpace", "DEFAULT_BACKEND", "cost_area", "cost_confidence",
    "cost_semantic", "extract_hypothesis_masks", "instancify", "localize", "merge_to_semantic",
    "parse_obj", "pose_error", "recall_at", "render_instance_map", "summarize",
]
