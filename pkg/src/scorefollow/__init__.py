"""Real-time monophonic score following robust to performance errors and
arbitrary repeats/skips.

Typical use::

    from scorefollow import load_score, build_performance_hmm, flatten, synth_models, Follower

    std = flatten(build_performance_hmm(load_score("piece.json")), synth_models())
    follower = Follower(std)
    for frame in frames:              # normalized CQT frames
        estimate = follower.push(frame)
"""
from .backend import ACTIVE as BACKEND
from .emission import PitchModelSet, mixture_weights, synth_models, train_pitch_models
from .eval import bench, ppr, repeat_skip_report
from .features import CqtConfig, extract_features, stream_frames
from .inference import AlignmentTrace, Follower, PositionEstimate, follow
from .model import ModelConfig, Variant, build_performance_hmm, flatten
from .score import Score, ScoreEvent, load_score, parse_score
from .simulator import ErrorRates, GroundTruth, inject_errors, inject_repeats_skips, render_audio, render_features

__version__ = "0.1.0"

__all__ = [
    "AlignmentTrace",
    "BACKEND",
    "CqtConfig",
    "ErrorRates",
    "Follower",
    "GroundTruth",
    "ModelConfig",
    "PitchModelSet",
    "PositionEstimate",
    "Score",
    "ScoreEvent",
    "Variant",
    "bench",
    "build_performance_hmm",
    "extract_features",
    "flatten",
    "follow",
    "inject_errors",
    "inject_repeats_skips",
    "load_score",
    "mixture_weights",
    "parse_score",
    "ppr",
    "render_audio",
    "render_features",
    "repeat_skip_report",
    "stream_frames",
    "synth_models",
    "train_pitch_models",
]
