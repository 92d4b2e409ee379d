"""Maximum-agreement segmentation over several human annotations.

Shot boundaries are graph vertices ``0..n``; an edge ``(x, v)`` is the story
covering shots ``[x, v)`` and a path from 0 to ``n`` is a segmentation. For
every path length the longest path is found by dynamic programming, carrying
for each state the best IoU reached so far against every annotation story so
that the coverage term can be scored incrementally. The candidates (one per
length) are then re-scored exactly and the best one is returned.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AnnotationSet, Segmentation, iou_matrix, mean_iou


@dataclass(frozen=True)
class AgreementGraph:
    """Implicit DAG over story boundaries, with IoU lookups for every edge.

    ``iou[x, v, j]`` is the IoU of story ``[x, v)`` with annotation story
    ``j`` (all annotations concatenated); ``story_weight[j]`` is ``1/#S`` of
    the annotation ``j`` belongs to, and ``best_match[x, v]`` is the sum over
    annotations of the best IoU of ``[x, v)`` with any of its stories.
    """

    n: int
    iou: np.ndarray
    story_weight: np.ndarray
    best_match: np.ndarray

    @classmethod
    def build(cls, annotations: AnnotationSet) -> "AgreementGraph":
        n = annotations.n_shots
        edges = np.asarray(annotations.unit_edges, dtype=float)
        xs, vs = np.triu_indices(n + 1, k=1)
        candidates = np.column_stack([edges[xs], edges[vs]])
        story_iv = [s.with_edges(annotations.unit_edges).intervals() for s in annotations]
        flat = iou_matrix(candidates, np.vstack(story_iv))
        iou = np.zeros((n + 1, n + 1, flat.shape[1]))
        iou[xs, vs] = flat
        weights = np.concatenate([np.full(len(iv), 1.0 / len(iv)) for iv in story_iv])
        splits = np.cumsum([0] + [len(iv) for iv in story_iv])[:-1]
        best = np.maximum.reduceat(iou, splits, axis=2).sum(axis=2)
        return cls(n, iou, weights, best)


def canonical(annotations: AnnotationSet | Sequence[Segmentation]) -> AnnotationSet:
    """Order annotations by their boundaries so results do not depend on input order."""
    anns = annotations.annotations if isinstance(annotations, AnnotationSet) else tuple(annotations)
    return AnnotationSet(tuple(sorted(anns, key=lambda s: s.boundaries)))


def edge_weight_w1(i: int, j: int, annotations: AnnotationSet, l: int) -> float:
    """Per-edge share of the precision term for a path of ``l`` stories."""
    if not i < j or l < 1:
        raise ValueError("need i < j and l >= 1")
    edges = annotations.unit_edges
    story = np.array([[edges[i], edges[j]]], dtype=float)
    total = sum(iou_matrix(story, s.with_edges(edges).intervals()).max() for s in annotations)
    return total / l


def marginal_gain_w2(best_iou: np.ndarray, new_story: tuple[int, int], annotations: AnnotationSet) -> float:
    """Increase of the coverage term when ``new_story`` (shots ``[x, v)``) joins a path.

    ``best_iou`` holds, per annotation story (annotations concatenated in
    order), the best IoU reached by the stories already on the path.
    """
    edges = annotations.unit_edges
    x, v = new_story
    story = np.array([[edges[x], edges[v]]], dtype=float)
    gain, pos = 0.0, 0
    for s in annotations:
        row = iou_matrix(story, s.with_edges(edges).intervals())[0]
        prev = best_iou[pos : pos + len(row)]
        gain += (np.maximum(prev, row) - prev).sum() / len(row)
        pos += len(row)
    return float(gain)


@dataclass(frozen=True)
class AgreementState:
    """DP tables for one path length: scores, running maxima and backpointers."""

    D: np.ndarray
    best_iou: np.ndarray
    back: np.ndarray

    def path(self) -> list[int]:
        l, n = self.D.shape[0] - 1, self.D.shape[1] - 1
        verts, v = [n], n
        for i in range(l, 0, -1):
            v = int(self.back[i, v])
            verts.append(v)
        return verts[::-1]


def longest_path(graph: AgreementGraph, l: int) -> AgreementState:
    """Approximate longest 0 -> n walk with exactly ``l`` edges."""
    n, J = graph.n, graph.iou.shape[2]
    D = np.full((l + 1, n + 1), -np.inf)
    best = np.zeros((l + 1, n + 1, J))
    back = np.zeros((l + 1, n + 1), dtype=int)
    D[0, 0] = 0.0
    w = graph.story_weight
    for i in range(1, l + 1):
        x_lo, x_hi = i - 1, n - (l - i) - 1
        v_lo, v_hi = i, n - (l - i)
        xs = np.arange(x_lo, x_hi + 1)
        vs = np.arange(v_lo, v_hi + 1)
        prev = best[i - 1, xs]
        base = prev @ w
        tri = graph.iou[x_lo : x_hi + 1, v_lo : v_hi + 1]
        merged = np.maximum(prev[:, None, :], tri)
        gain = merged @ w - base[:, None]
        score = D[i - 1, xs][:, None] + graph.best_match[x_lo : x_hi + 1, v_lo : v_hi + 1] / l + gain
        score[xs[:, None] >= vs[None, :]] = -np.inf
        # argmax keeps the first maximum: smallest predecessor wins ties
        arg = np.argmax(score, axis=0)
        cols = np.arange(len(vs))
        D[i, vs] = score[arg, cols]
        back[i, vs] = xs[arg]
        best[i, vs] = merged[arg, cols]
    return AgreementState(D, best, back)


@dataclass(frozen=True)
class AgreementResult:
    segmentation: Segmentation
    value: float
    candidates: tuple


def max_agreement(annotations: AnnotationSet | Sequence[Segmentation], tie_tol: float = 1e-12) -> AgreementResult:
    """Segmentation with (approximately) maximal mean IoU against the annotations.

    ``value`` is the exact mean IoU of the returned segmentation.
    """
    if not isinstance(annotations, AnnotationSet):
        annotations = AnnotationSet(tuple(annotations))
    anns = canonical(annotations)
    graph = AgreementGraph.build(anns)
    n = graph.n
    edges = anns.annotations[0].edges
    cands = []
    for l in range(1, n + 1):
        verts = longest_path(graph, l).path()
        seg = Segmentation.from_boundaries(verts[:-1], n, edges)
        cands.append((seg, mean_iou(seg, anns)))
    best_val = max(v for _, v in cands)
    # exact ties go to the lexicographically smallest boundary vector, as in the brute force
    best_seg = min((s for s, v in cands if v >= best_val - tie_tol), key=lambda s: s.boundaries)
    return AgreementResult(best_seg, mean_iou(best_seg, anns),
                           tuple((len(s), v) for s, v in cands))


def _story_spans(cuts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-shot (start, end) vertex of the enclosing story for each cut mask row."""
    M, n1 = cuts.shape
    n = n1 + 1
    is_start = np.ones((M, n), dtype=bool)
    is_start[:, 1:] = cuts
    idx = np.arange(n)
    start = np.maximum.accumulate(np.where(is_start, idx, 0), axis=1)
    nxt = np.full((M, n), n)
    nxt[:, :-1] = np.where(cuts, idx[1:], n)
    end = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    return start, end


def _score_cuts(graph: AgreementGraph, cuts: np.ndarray, n_annotations: int) -> np.ndarray:
    start, end = _story_spans(cuts)
    n_stories = cuts.sum(axis=1) + 1
    precision = (graph.best_match[start, end] / (end - start)).sum(axis=1) / n_stories
    coverage = graph.iou[start, end].max(axis=1) @ graph.story_weight
    return (precision + coverage) / (2.0 * n_annotations)


def _enumerate_cuts(n: int, min_stories: int, max_stories: int, chunk: int):
    if n == 1:
        yield np.zeros((1, 0), dtype=bool)
        return
    if min_stories == 1 and max_stories >= n:
        total = 1 << (n - 1)
        bits = np.arange(n - 1)
        for lo in range(0, total, chunk):
            codes = np.arange(lo, min(total, lo + chunk))
            yield ((codes[:, None] >> (n - 2 - bits)) & 1).astype(bool)
        return
    batch = []
    for k in range(min_stories - 1, max_stories):
        for combo in itertools.combinations(range(n - 1), k):
            row = np.zeros(n - 1, dtype=bool)
            row[list(combo)] = True
            batch.append(row)
            if len(batch) == chunk:
                yield np.array(batch)
                batch = []
    if batch:
        yield np.array(batch)


def brute_force_agreement(annotations: AnnotationSet | Sequence[Segmentation], max_n: int = 20,
                          max_stories: int | None = None, min_stories: int = 1,
                          max_candidates: int = 1 << 22, tie_tol: float = 1e-12) -> AgreementResult:
    """Exhaustive maximizer of mean IoU.

    Without ``max_stories`` every segmentation of ``n <= max_n`` shots is
    scored; with it, only those with ``min_stories..max_stories`` stories.
    Scores within ``tie_tol`` of the best are ties, broken towards the
    lexicographically smallest boundary vector.
    """
    if not isinstance(annotations, AnnotationSet):
        annotations = AnnotationSet(tuple(annotations))
    anns = canonical(annotations)
    n = anns.n_shots
    hi = n if max_stories is None else min(max_stories, n)
    lo = max(1, min_stories)
    if max_stories is None and n > max_n:
        raise ValueError(f"{n} shots exceeds the exhaustive bound max_n={max_n}; pass max_stories")
    count = sum(math.comb(n - 1, k - 1) for k in range(lo, hi + 1))
    if count > max_candidates:
        raise ValueError(f"{count} candidate segmentations exceeds max_candidates={max_candidates}")
    if count == 0:
        raise ValueError("no segmentation satisfies the story-count bounds")
    graph = AgreementGraph.build(anns)
    best_val, tied = -np.inf, []
    for cuts in _enumerate_cuts(n, lo, hi, chunk=4096):
        vals = _score_cuts(graph, cuts, len(anns))
        best_val = max(best_val, float(vals.max()))
        keep = np.flatnonzero(vals >= best_val - tie_tol)
        tied = [(c, v) for c, v in tied if v >= best_val - tie_tol]
        tied += [(cuts[i], vals[i]) for i in keep]
    boundaries = min(tuple([0] + [int(i) + 1 for i in np.flatnonzero(c)]) for c, _ in tied)
    seg = Segmentation.from_boundaries(boundaries, n, anns.annotations[0].edges)
    return AgreementResult(seg, mean_iou(seg, anns), ())
