"""Evaluation harness: train on some videos, segment the others, report IoU.

Every held-out video is segmented twice with the automatic ``C`` sweep:
once on the trained embedding and once on the raw feature vectors, so the
two columns of the report are directly comparable.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import Segmentation, segmentation_iou
from .embedding import DEFAULT_HIDDEN, EmbeddingModel, TrainConfig, train
from .segment import auto_segment

MODES = ("leave-one-out", "split", "pretrained")


@dataclass
class EvalVideo:
    id: str
    features: np.ndarray
    truth: Segmentation

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] != self.truth.n_shots:
            raise ValueError(f"video {self.id}: {self.features.shape[0]} feature rows, "
                             f"ground truth has {self.truth.n_shots} shots")


@dataclass(frozen=True)
class FoldResult:
    video: str
    n_shots: int
    true_stories: int
    predicted_stories: int
    raw_stories: int
    iou_embedding: float
    iou_raw: float
    C: float


@dataclass
class EvaluationReport:
    mode: str
    rows: list
    config: dict = field(default_factory=dict)

    @property
    def mean_embedding(self) -> float:
        return float(np.mean([r.iou_embedding for r in self.rows]))

    @property
    def mean_raw(self) -> float:
        return float(np.mean([r.iou_raw for r in self.rows]))

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "videos": [asdict(r) for r in self.rows],
            "mean_iou_embedding": self.mean_embedding,
            "mean_iou_raw": self.mean_raw,
        }

    def to_table(self) -> str:
        head = f"{'video':<12} {'shots':>5} {'true':>4} {'pred':>4} {'IoU emb':>8} {'IoU raw':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.video:<12} {r.n_shots:>5} {r.true_stories:>4} {r.predicted_stories:>4} "
                         f"{r.iou_embedding:>8.4f} {r.iou_raw:>8.4f}")
        lines.append("-" * len(head))
        lines.append(f"{'mean':<12} {'':>5} {'':>4} {'':>4} {self.mean_embedding:>8.4f} {self.mean_raw:>8.4f}")
        return "\n".join(lines)


def score_video(model: EmbeddingModel, video: EvalVideo, step: float = 0.001) -> FoldResult:
    edges = video.truth.edges
    emb = auto_segment(model.embed(video.features), step=step, edges=edges)
    raw = auto_segment(video.features, step=step, edges=edges)
    return FoldResult(video.id, video.truth.n_shots, len(video.truth), len(emb.segmentation),
                      len(raw.segmentation), segmentation_iou(emb.segmentation, video.truth),
                      segmentation_iou(raw.segmentation, video.truth), emb.C)


def _fold(args) -> FoldResult:
    train_videos, test_video, cfg, hidden, step = args
    model, _ = train([(v.features, v.truth) for v in train_videos], cfg, hidden=hidden, standardize=True)
    return score_video(model, test_video, step)


def run_evaluation(videos: Sequence[EvalVideo], mode: str = "leave-one-out", cfg: TrainConfig | None = None,
                   model: EmbeddingModel | None = None, test_ids: Sequence[str] | None = None,
                   hidden: Sequence[int] = DEFAULT_HIDDEN, step: float = 0.001, workers: int = 1) -> EvaluationReport:
    """Segmentation IoU per held-out video.

    ``leave-one-out`` trains one model per video on all the others (fold
    ``i`` uses seed ``cfg.seed + i``); ``split`` trains once on the videos not
    in ``test_ids``; ``pretrained`` scores ``model`` on ``test_ids`` (or on every
    video). Folds are independent, so ``workers > 1`` runs them in separate
    processes with identical results.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    cfg = cfg or TrainConfig()
    videos = list(videos)
    ids = [v.id for v in videos]
    if len(set(ids)) != len(ids):
        raise ValueError("video ids must be unique")
    config = {"train": asdict(cfg), "hidden": list(hidden), "step": step}
    if mode == "leave-one-out":
        if len(videos) < 2:
            raise ValueError("leave-one-out evaluation needs at least 2 videos")
        jobs = []
        for i, v in enumerate(videos):
            fold_cfg = TrainConfig(**{**asdict(cfg), "seed": cfg.seed + i})
            jobs.append((videos[:i] + videos[i + 1:], v, fold_cfg, tuple(hidden), step))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_fold, jobs))
        else:
            rows = [_fold(j) for j in jobs]
        return EvaluationReport(mode, rows, config)

    test = set(test_ids) if test_ids is not None else None
    if test is not None and not test <= set(ids):
        raise ValueError(f"unknown test ids {sorted(test - set(ids))}")
    if mode == "split":
        if not test:
            raise ValueError("split evaluation needs test ids")
        train_videos = [v for v in videos if v.id not in test]
        if not train_videos:
            raise ValueError("split evaluation needs at least one training video")
        model, _ = train([(v.features, v.truth) for v in train_videos], cfg, hidden=hidden, standardize=True)
    elif model is None:
        raise ValueError("pretrained evaluation needs a model")
    targets = [v for v in videos if test is None or v.id in test]
    return EvaluationReport(mode, [score_video(model, v, step) for v in targets], config)


def report_json(report: EvaluationReport) -> str:
    return json.dumps(report.to_json(), indent=1)
