"""Elliptical fiber detection toolkit.

Five-parameter ellipse geometry and RRoI regression offsets, synthetic fiber
images, symmetry-ranked NMS, classical and oracle detection backends, and
ellipse/box-level evaluation.
"""

from .errors import ConfigError, DataError, FiberDetError, InsufficientData, InvalidArgument
from .geometry import (BoxOffsets, Ellipse, EllipseOffsets, HBox, OrientedBox, RRoI,
                       angle_distance, canonicalize_angle, decode_box_offsets,
                       decode_ellipse_offsets, encode_box_offsets, encode_ellipse_offsets,
                       hbe_of, obe_of, rotate_roi)
from .raster import box_iou, pixel_iou, rasterize, read_png, rotate180, ssim, write_png
from .synth import (DEFAULT_PRIOR, GaussianPrior, SceneGroundTruth, SynthConfig,
                    export_dataset, fit_priors, render_scene, sample_scene)
from .detect import MomentsConfig, OracleConfig, Proposal, detect_moments, propose_oracle
from .ranking import (RankedProposal, combined_score, dedup_final, nms_symmetry,
                      rank_and_filter, rank_proposals, symmetry_score)
from .evaluation import (EvalReport, MatchResult, aggregate, box_metrics, ellipse_metrics,
                         evaluate_image, match_ellipses)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "FiberDetError", "InsufficientData", "InvalidArgument",
    "BoxOffsets", "Ellipse", "EllipseOffsets", "HBox", "OrientedBox", "RRoI", "angle_distance",
    "canonicalize_angle", "decode_box_offsets", "decode_ellipse_offsets", "encode_box_offsets",
    "encode_ellipse_offsets", "hbe_of", "obe_of", "rotate_roi", "box_iou", "pixel_iou",
    "rasterize", "read_png", "rotate180", "ssim", "write_png", "DEFAULT_PRIOR",
    "GaussianPrior", "SceneGroundTruth", "SynthConfig", "export_dataset", "fit_priors",
    "render_scene", "sample_scene", "MomentsConfig", "OracleConfig", "Proposal",
    "detect_moments", "propose_oracle", "RankedProposal", "combined_score", "dedup_final",
    "nms_symmetry", "rank_and_filter", "rank_proposals", "symmetry_score", "EvalReport",
    "MatchResult", "aggregate", "box_metrics", "ellipse_metrics", "evaluate_image",
    "match_ellipses",
]
