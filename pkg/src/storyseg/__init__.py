"""Story detection in broadcast video: shot features, a triplet-trained
embedding, temporally constrained clustering, annotation agreement and
query-driven retrieval with aesthetic thumbnails."""

from .agreement import AgreementResult, brute_force_agreement, max_agreement
from .core import (AnnotationSet, FeatureVector, Segmentation, ShotRecord, Story, mean_iou,
                   segmentation_iou)
from .embedding import EmbeddingModel, TrainConfig, feature_importance, forward, train
from .evaluate import EvalVideo, EvaluationReport, run_evaluation
from .features import ConceptGroups, SemanticConfig, TranscriptTerm, assemble_video_features
from .retrieval import RankModel, build_hypercolumns, match_query, rank_stories, train_rank_model
from .segment import auto_segment, segment_video
from .synth import SynthConfig, generate_synthetic_corpus

__version__ = "0.1.0"

__all__ = [
    "AgreementResult", "AnnotationSet", "ConceptGroups", "EmbeddingModel", "EvalVideo", "EvaluationReport",
    "FeatureVector", "RankModel", "Segmentation", "SemanticConfig", "ShotRecord", "Story", "SynthConfig",
    "TrainConfig", "TranscriptTerm", "assemble_video_features", "auto_segment", "brute_force_agreement",
    "build_hypercolumns", "feature_importance", "forward", "generate_synthetic_corpus", "match_query",
    "max_agreement", "mean_iou", "rank_stories", "run_evaluation", "segment_video", "segmentation_iou",
    "train", "train_rank_model",
]
