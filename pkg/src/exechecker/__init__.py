"""Exercise correctness checking from 3D skeleton motion.

A spatial-temporal graph-attention encoder is trained with a triplet ratio
loss so that correct and incorrect executions of an exercise separate in
embedding space. Its attention maps localize the faulty joints, and a
hop-adjusted canonical time warping baseline scores joints for comparison.
"""
from .errors import ExeCheckerError
from .skeldata import (
    JoAAnnotation,
    Label,
    SkeletonSequence,
    SkeletonTopology,
    h36m_topology,
    execheck_topology,
)
from .stgat import STGAT, StgatConfig
from .triplet import TrainConfig
from .pipeline import PipelineConfig, desk_config

__version__ = "0.1.0"

__all__ = [
    "ExeCheckerError",
    "JoAAnnotation",
    "Label",
    "PipelineConfig",
    "STGAT",
    "SkeletonSequence",
    "SkeletonTopology",
    "StgatConfig",
    "TrainConfig",
    "desk_config",
    "execheck_topology",
    "h36m_topology",
]
