"""Two-stage referring-relationship grounding on a synthetic shapes world.

Stage one scores and refines candidate regions per entity category
(:mod:`refrel.proposal`); stage two classifies predicates over subject/object
candidate pairs (:mod:`refrel.predicate`); :mod:`refrel.inference` combines
both into ranked pairs and :mod:`refrel.metrics` scores them.
"""

__version__ = "0.1.0"

from .boxes import Box, box_iou, decode_offsets, encode_offsets, nms, spatial_feature_of
from .inference import InferenceConfig, RelationshipGrounder, combined_score, infer
from .metrics import MetricsConfig, heatmap_iou, recall_at_k
from .predicate import PredicateClassifier, VectorPredicateClassifier
from .proposal import CategoryProposalModel
from .scene_synth import DatasetSpec, generate_dataset, generate_scene

__all__ = [
    "Box",
    "CategoryProposalModel",
    "DatasetSpec",
    "InferenceConfig",
    "MetricsConfig",
    "PredicateClassifier",
    "RelationshipGrounder",
    "VectorPredicateClassifier",
    "box_iou",
    "combined_score",
    "decode_offsets",
    "encode_offsets",
    "generate_dataset",
    "generate_scene",
    "heatmap_iou",
    "infer",
    "nms",
    "recall_at_k",
    "spatial_feature_of",
]
