"""Forward-consistency video anomaly detection with gated context aggregation."""

__version__ = "0.1.0"

from .backbone import FoGA, PredictionPair, count_params, estimate_flops, load_checkpoint, save_checkpoint
from .config import (
    CheckpointError,
    ConfigError,
    DataError,
    LossMask,
    ModelConfig,
    RunConfig,
    ScoringConfig,
    SsimConfig,
    SyntheticSpec,
    TrainConfig,
    load_config,
    profile_config,
)
from .datapipe import DatasetIndex, FrameWindow, Video, make_windows, preprocess_frame, synth_generate
from .scoring import ScoreSeries, frame_auc, pyramid_psnr, plain_psnr, score_video

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DatasetIndex",
    "FoGA",
    "FrameWindow",
    "LossMask",
    "ModelConfig",
    "PredictionPair",
    "RunConfig",
    "ScoreSeries",
    "ScoringConfig",
    "SsimConfig",
    "SyntheticSpec",
    "TrainConfig",
    "Video",
    "count_params",
    "estimate_flops",
    "frame_auc",
    "load_checkpoint",
    "load_config",
    "make_windows",
    "plain_psnr",
    "preprocess_frame",
    "profile_config",
    "pyramid_psnr",
    "save_checkpoint",
    "score_video",
    "synth_generate",
]
