"""Shared domain types and the segmentation IoU metric.

Stories are addressed by inclusive shot ordinals. Every overlap computation
happens on half-open unit intervals ``[start, end)`` derived from a set of
shot edges: frame indices when the video's shot timing is known, plain shot
counts otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class IncompatibleSegmentations(ValueError):
    """Raised when two segmentations do not describe the same video extent."""


@dataclass(frozen=True)
class ShotRecord:
    index: int
    start_frame: int
    end_frame: int
    word_count: int = 0
    fps: float = 25.0
    keyframe_tensors: tuple = ()
    audio_vector: np.ndarray | None = None

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise ValueError(
                f"shot {self.index}: start_frame {self.start_frame} must be < end_frame {self.end_frame}"
            )
        if self.word_count < 0:
            raise ValueError(f"shot {self.index}: word_count must be nonnegative")
        shapes = {np.shape(t) for t in self.keyframe_tensors}
        if len(shapes) > 1:
            raise ValueError(f"shot {self.index}: keyframe tensors have different shapes {sorted(shapes)}")

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_frame + self.end_frame)


def check_contiguous(shots: Sequence[ShotRecord]) -> None:
    for prev, cur in zip(shots, shots[1:]):
        if cur.start_frame != prev.end_frame:
            raise ValueError(
                f"shots {prev.index} and {cur.index} are not contiguous "
                f"({prev.end_frame} != {cur.start_frame})"
            )


def shot_edges(shots: Sequence[ShotRecord]) -> tuple[int, ...]:
    """Frame edges ``e`` such that shot ``i`` spans ``[e[i], e[i+1])``."""
    check_contiguous(shots)
    return tuple([s.start_frame for s in shots] + [shots[-1].end_frame])


@dataclass(frozen=True)
class Story:
    first_shot: int
    last_shot: int

    def __post_init__(self):
        if self.first_shot < 0 or self.first_shot > self.last_shot:
            raise ValueError(f"invalid story [{self.first_shot}, {self.last_shot}]")

    @property
    def n_shots(self) -> int:
        return self.last_shot - self.first_shot + 1

    def interval(self, edges: Sequence[float]) -> tuple[float, float]:
        return edges[self.first_shot], edges[self.last_shot + 1]


@dataclass(frozen=True)
class Segmentation:
    """Ordered partition of ``n_shots`` shots into contiguous stories.

    ``edges`` optionally carries the frame edges of the underlying shots
    (length ``n_shots + 1``); without it every shot counts as one unit.
    """

    stories: tuple[Story, ...]
    n_shots: int
    edges: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        stories = tuple(self.stories)
        object.__setattr__(self, "stories", stories)
        if not stories:
            raise ValueError("a segmentation needs at least one story")
        if stories[0].first_shot != 0:
            raise ValueError("first story must start at shot 0")
        for a, b in zip(stories, stories[1:]):
            if b.first_shot != a.last_shot + 1:
                kind = "overlapping or out-of-order" if b.first_shot <= a.last_shot else "gapped"
                raise ValueError(f"{kind} stories {a} and {b}")
        if stories[-1].last_shot != self.n_shots - 1:
            raise ValueError(f"stories cover shots up to {stories[-1].last_shot}, expected {self.n_shots - 1}")
        if self.edges is not None:
            edges = tuple(self.edges)
            if len(edges) != self.n_shots + 1:
                raise ValueError("edges must have n_shots + 1 entries")
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError("edges must be strictly increasing")
            object.__setattr__(self, "edges", edges)

    @classmethod
    def from_boundaries(cls, boundaries: Iterable[int], n_shots: int, edges=None) -> "Segmentation":
        """Build from story start ordinals; the first entry must be 0."""
        starts = [int(b) for b in boundaries]
        if not starts or starts[0] != 0:
            raise ValueError("boundaries must start with 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("boundaries must be strictly increasing")
        if starts[-1] >= n_shots:
            raise ValueError(f"boundary {starts[-1]} outside video of {n_shots} shots")
        ends = starts[1:] + [n_shots]
        stories = tuple(Story(s, e - 1) for s, e in zip(starts, ends))
        return cls(stories, n_shots, edges)

    @classmethod
    def from_labels(cls, labels: Sequence, edges=None) -> "Segmentation":
        """One story per run of equal consecutive labels."""
        starts = [0] + [i for i in range(1, len(labels)) if labels[i] != labels[i - 1]]
        return cls.from_boundaries(starts, len(labels), edges)

    @classmethod
    def single(cls, n_shots: int, edges=None) -> "Segmentation":
        return cls((Story(0, n_shots - 1),), n_shots, edges)

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(s.first_shot for s in self.stories)

    @property
    def unit_edges(self) -> tuple[float, ...]:
        if self.edges is not None:
            return self.edges
        return tuple(range(self.n_shots + 1))

    def with_edges(self, edges) -> "Segmentation":
        return Segmentation(self.stories, self.n_shots, edges)

    def intervals(self) -> np.ndarray:
        """``(len(stories), 2)`` array of half-open unit intervals."""
        e = self.unit_edges
        return np.array([s.interval(e) for s in self.stories], dtype=float)

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_shots, dtype=int)
        for k, s in enumerate(self.stories):
            out[s.first_shot : s.last_shot + 1] = k
        return out

    def __len__(self) -> int:
        return len(self.stories)


@dataclass(frozen=True)
class AnnotationSet:
    annotations: tuple[Segmentation, ...]

    def __post_init__(self):
        anns = tuple(self.annotations)
        object.__setattr__(self, "annotations", anns)
        if not anns:
            raise ValueError("an annotation set needs at least one segmentation")
        for a in anns[1:]:
            _check_compatible(anns[0], a)

    @property
    def n_shots(self) -> int:
        return self.annotations[0].n_shots

    @property
    def unit_edges(self) -> tuple[float, ...]:
        return self.annotations[0].unit_edges

    def __len__(self) -> int:
        return len(self.annotations)

    def __iter__(self):
        return iter(self.annotations)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    block_map: dict = field(compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        pos = 0
        for name, (lo, hi) in self.block_map.items():
            if lo != pos or hi < lo:
                raise ValueError(f"block {name!r} range ({lo}, {hi}) does not tile the vector")
            pos = hi
        if pos != values.shape[0]:
            raise ValueError(f"block_map covers {pos} values, vector has {values.shape[0]}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def block(self, name: str) -> np.ndarray:
        lo, hi = self.block_map[name]
        return self.values[lo:hi]


def interval_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of half-open intervals ``[a0, a1)`` and ``[b0, b1)``."""
    a0, a1 = a
    b0, b1 = b
    if a0 >= a1 or b0 >= b1:
        raise ValueError(f"invalid intervals {a}, {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between rows of two ``(k, 2)`` interval arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.maximum(a[:, None, 0], b[None, :, 0])
    hi = np.minimum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(hi - lo, 0.0, None)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    return inter / union


def _check_compatible(a: Segmentation, b: Segmentation) -> None:
    if a.n_shots != b.n_shots:
        raise IncompatibleSegmentations(f"segmentations cover {a.n_shots} and {b.n_shots} shots")
    if a.edges is not None and b.edges is not None and a.edges != b.edges:
        raise IncompatibleSegmentations("segmentations have different frame extents")


def _pick_edges(a: Segmentation, b: Segmentation):
    return a.edges if a.edges is not None else b.edges


def segmentation_iou(a: Segmentation, b: Segmentation) -> float:
    """Symmetric best-match IoU between two segmentations of one video."""
    _check_compatible(a, b)
    edges = _pick_edges(a, b)
    ia = a.with_edges(edges).intervals()
    ib = b.with_edges(edges).intervals()
    m = iou_matrix(ia, ib)
    return 0.5 * (m.max(axis=1).mean() + m.max(axis=0).mean())


def mean_iou(a: Segmentation, annotations: AnnotationSet | Sequence[Segmentation]) -> float:
    anns = annotations.annotations if isinstance(annotations, AnnotationSet) else tuple(annotations)
    if not anns:
        raise ValueError("mean_iou needs at least one annotation")
    return float(np.mean([segmentation_iou(a, s) for s in anns]))
