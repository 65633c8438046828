"""Adaptive tiling inference pipeline for small-object detection."""

from .detector import (
    CountingDetector,
    DetectorBackend,
    DetectRequest,
    DetectResponse,
    FileDetector,
    SimDetector,
    SimDetectorConfig,
    StdioDetector,
    TTADetector,
)
from .errors import DynTileError
from .evaluation import EvalConfig, EvalResult, evaluate
from .fusion import FusionConfig, fuse, nms, size_filter
from .geometry import (
    Box,
    Detection,
    GridConfig,
    TileSpec,
    classify_detection,
    iou,
    make_grid,
    to_global,
    to_local,
)
from .packing import CompositeCanvas, MinimizerConfig, Placement, dedupe_proposals, pack
from .pipeline import DatasetEntry, RunReport, RunStats, Strategy, run_dataset, run_image
from .scenegen import Scene, SceneConfig, generate_scene, generate_suite, render_scene
from .tiler import (
    BoundaryGroup,
    DynamicTileProposal,
    TilerConfig,
    accept_dynamic_predictions,
    group_by_boundary,
    propose_corner_tile,
    propose_edge_tile,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BoundaryGroup",
    "CompositeCanvas",
    "CountingDetector",
    "DatasetEntry",
    "DetectRequest",
    "DetectResponse",
    "Detection",
    "DetectorBackend",
    "DynTileError",
    "DynamicTileProposal",
    "EvalConfig",
    "EvalResult",
    "FileDetector",
    "FusionConfig",
    "GridConfig",
    "MinimizerConfig",
    "Placement",
    "RunReport",
    "RunStats",
    "Scene",
    "SceneConfig",
    "SimDetector",
    "SimDetectorConfig",
    "StdioDetector",
    "Strategy",
    "TTADetector",
    "TileSpec",
    "TilerConfig",
    "accept_dynamic_predictions",
    "classify_detection",
    "dedupe_proposals",
    "evaluate",
    "fuse",
    "generate_scene",
    "generate_suite",
    "group_by_boundary",
    "iou",
    "make_grid",
    "nms",
    "pack",
    "propose_corner_tile",
    "propose_edge_tile",
    "render_scene",
    "run_dataset",
    "run_image",
    "size_filter",
    "to_global",
    "to_local",
]
