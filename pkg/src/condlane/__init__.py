"""Conditional lane detection: dynamic-kernel shape heads with row-wise decoding.

Detects lane instances from start-point proposals, then predicts each
instance's shape with per-instance dynamic convolutions. A recurrent
instance head resolves fork and dense topologies where several lanes share
one proposal point. Includes synthetic scene generation, CULane/TuSimple
style metrics and a training/evaluation CLI.
"""

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .config import (
    ModelConfig,
    RunConfig,
    TrainConfig,
    load_run_config,
    parse_run_config,
)
from .errors import AnnotationFormatError, ConfigError, DegenerateLaneError
from .geometry import (
    GridSpec,
    ImageSpec,
    LanePolyline,
    ProposalPoint,
    ProposalTarget,
    RowwiseTarget,
    decode_lane,
    encode_rowwise_targets,
    expected_abscissa,
    extract_proposal_points,
    render_proposal_heatmap,
)
from .metrics import EvalReport, MatchConfig, lane_iou, match_and_score
from .model import LaneDetector
from .pipeline import encode_sample, evaluate, fit, infer, train_step
from .synth import Sample, SceneConfig, generate_dataset, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "AnnotationFormatError",
    "ConfigError",
    "DegenerateLaneError",
    "EvalReport",
    "GridSpec",
    "ImageSpec",
    "LaneDetector",
    "LanePolyline",
    "MatchConfig",
    "ModelConfig",
    "ProposalPoint",
    "ProposalTarget",
    "RowwiseTarget",
    "RunConfig",
    "Sample",
    "SceneConfig",
    "TrainConfig",
    "decode_lane",
    "encode_rowwise_targets",
    "encode_sample",
    "evaluate",
    "expected_abscissa",
    "extract_proposal_points",
    "fit",
    "generate_dataset",
    "infer",
    "lane_iou",
    "load_checkpoint",
    "load_dataset",
    "load_run_config",
    "match_and_score",
    "parse_run_config",
    "read_manifest",
    "render_proposal_heatmap",
    "save_checkpoint",
    "save_dataset",
    "train_step",
    "__version__",
]
