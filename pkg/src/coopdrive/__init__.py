"""Desk-scale cooperative driving pipeline: multi-view encoding to a BEV
map, temporal and V2X fusion, query-based tracking, anchor-based motion
prediction and collision post-processing — numpy only, fully deterministic."""

from .accident import (Box, CollisionEvent, detect_collisions, min_distance,
                       predict_accident, score)
from .bev import BEVFeature, MultiViewImages, encode_bev
from .config import ConfigError, PipelineConfig, config_from_text, config_to_text
from .geometry import BEVGrid, CameraRig, CameraView, Pose2D
from .motion import MotionOutput, predict_motion
from .pipeline import (RunRecord, build_model, evaluate, load_record,
                       run_pipeline, save_record)
from .plots import emit_plots
from .scenario import (Scenario, TEMPLATES, generate_scenario, render_views,
                       scenario_from_text, scenario_to_text)
from .selftest import run_selftest
from .tracking import PerceptionState, associate, step_perception

__version__ = "0.1.0"

__all__ = [
    "Box", "CollisionEvent", "detect_collisions", "min_distance",
    "predict_accident", "score",
    "BEVFeature", "MultiViewImages", "encode_bev",
    "ConfigError", "PipelineConfig", "config_from_text", "config_to_text",
    "BEVGrid", "CameraRig", "CameraView", "Pose2D",
    "MotionOutput", "predict_motion",
    "RunRecord", "build_model", "evaluate", "load_record", "run_pipeline",
    "save_record",
    "emit_plots",
    "Scenario", "TEMPLATES", "generate_scenario", "render_views",
    "scenario_from_text", "scenario_to_text",
    "run_selftest",
    "PerceptionState", "associate", "step_perception",
    "__version__",
]
