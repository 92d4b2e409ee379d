"""Query-driven story ranking and aesthetic thumbnail scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Segmentation

N_GROUPS = 5


@dataclass(frozen=True)
class ThumbnailFeatures:
    hyper_maps: tuple
    tau: np.ndarray


@dataclass
class RankModel:
    w_r: np.ndarray
    C_r: float = 1.0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.w_r = np.asarray(self.w_r, dtype=float)
        if not np.all(np.isfinite(self.w_r)):
            raise ValueError("rank model weights must be finite")


@dataclass(frozen=True)
class Query:
    text: str
    resolved_term: str
    embedding: np.ndarray
    similarity: float


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """``(dst, src)`` bilinear weights with half-pixel centres and edge clamping."""
    out = np.zeros((dst, src))
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(out, (rows, lo), 1.0 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def bilinear_resize(img, size: int | tuple[int, int]) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("bilinear_resize expects a non-empty 2-D map")
    h, w = size if isinstance(size, tuple) else (size, size)
    return _interp_matrix(img.shape[0], h) @ img @ _interp_matrix(img.shape[1], w).T


def center_prior(S: int, sigma_b: float) -> np.ndarray:
    """Peak-1 Gaussian centred on the map with standard deviation ``sigma_b * S``."""
    c = (S - 1) / 2.0
    r = np.arange(S) - c
    g = np.exp(-(r**2) / (2.0 * (sigma_b * S) ** 2))
    return np.outer(g, g)


def build_hypercolumns(layer_maps: Sequence[Sequence[np.ndarray]], S: int = 224,
                       sigma_b: float | None = 0.3) -> ThumbnailFeatures:
    """Five resized, group-averaged, centre-weighted maps and their (mean, std) statistics.

    ``sigma_b=None`` skips the centre prior. Standard deviation is the
    population one.
    """
    if len(layer_maps) != N_GROUPS:
        raise ValueError(f"expected {N_GROUPS} groups of activation maps, got {len(layer_maps)}")
    prior = center_prior(S, sigma_b) if sigma_b is not None else None
    maps, tau = [], []
    for g, group in enumerate(layer_maps):
        if len(group) == 0:
            raise ValueError(f"activation group {g + 1} is empty")
        m = np.mean([bilinear_resize(a, S) for a in group], axis=0)
        if prior is not None:
            m = m * prior
        maps.append(m)
        tau += [m.mean(), m.std()]
    return ThumbnailFeatures(tuple(maps), np.array(tau))


def rank_objective(w: np.ndarray, diffs: np.ndarray, C_r: float) -> float:
    return 0.5 * float(w @ w) + C_r * float(np.maximum(0.0, 1.0 - diffs @ w).sum())


def train_rank_model(pairs: Sequence[tuple[np.ndarray, np.ndarray]], C_r: float = 1.0,
                     iterations: int = 1000, tol: float = 1e-8, seed: int = 0) -> RankModel:
    """Linear ranking SVM on ``tau(better) - tau(worse)`` difference vectors.

    Solved by dual coordinate descent over the pair multipliers
    ``0 <= a_i <= C_r`` with ``w = sum a_i d_i``; each epoch visits the pairs
    in a seeded random order. After every epoch the primal objective is
    evaluated and the iterate is kept only if it improves, so ``trace`` is
    non-increasing. Stops when the largest projected dual gradient falls
    below ``tol`` or after ``iterations`` epochs. Identical pairs carry no
    direction and only add constant slack.
    """
    if not pairs:
        raise ValueError("train_rank_model needs at least one pair")
    if C_r <= 0:
        raise ValueError("C_r must be positive")
    D = np.array([np.asarray(b, float) - np.asarray(w, float) for b, w in pairs])
    rng = np.random.default_rng(seed)
    sq = np.einsum("ij,ij->i", D, D)
    live = np.flatnonzero(sq > 0)
    alpha = np.zeros(len(D))
    w = np.zeros(D.shape[1])
    best_w, best = w.copy(), rank_objective(w, D, C_r)
    trace = [best]
    for _ in range(iterations):
        worst = 0.0
        for i in rng.permutation(live):
            grad = D[i] @ w - 1.0
            a = alpha[i]
            pg = min(grad, 0.0) if a == 0.0 else max(grad, 0.0) if a == C_r else grad
            worst = max(worst, abs(pg))
            if pg == 0.0:
                continue
            new = min(max(a - grad / sq[i], 0.0), C_r)
            w += (new - a) * D[i]
            alpha[i] = new
        obj = rank_objective(w, D, C_r)
        if obj < best:
            best_w, best = w.copy(), obj
        trace.append(best)
        if worst < tol:
            break
    return RankModel(best_w, C_r, trace)


def aesthetic_score(model: RankModel, tau) -> float:
    return float(np.dot(model.w_r, tau))


def swapped_pairs(model: RankModel, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Percentage of (better, worse) pairs the model orders the other way; ties count half."""
    if not pairs:
        raise ValueError("swapped_pairs needs at least one pair")
    swapped = 0.0
    for better, worse in pairs:
        a, b = aesthetic_score(model, better), aesthetic_score(model, worse)
        if a < b:
            swapped += 1.0
        elif a == b:
            swapped += 0.5
    return 100.0 * swapped / len(pairs)


def match_query(query_text: str, term_embeddings: Mapping[str, np.ndarray],
                word_vectors: Mapping[str, np.ndarray] | None = None) -> Query:
    """Closest video term to the mean embedding of the query words (cosine similarity)."""
    if not term_embeddings:
        raise ValueError("empty term vocabulary")
    lookup = term_embeddings if word_vectors is None else word_vectors
    words = query_text.split()
    vecs = [np.asarray(lookup[w], dtype=float) for w in words if w in lookup]
    if not vecs:
        raise KeyError(f"no embedding for any word of query {query_text!r}")
    q = np.mean(vecs, axis=0)
    qn = np.linalg.norm(q)
    best_term, best_sim = None, -np.inf
    for term in sorted(term_embeddings):
        v = np.asarray(term_embeddings[term], dtype=float)
        denom = qn * np.linalg.norm(v)
        sim = float(q @ v / denom) if denom > 0 else 0.0
        if sim > best_sim:
            best_term, best_sim = term, sim
    return Query(query_text, best_term, q, best_sim)


@dataclass(frozen=True)
class RankedStory:
    story_index: int
    first_shot: int
    last_shot: int
    keyframe: object
    score: float
    no_keyframes: bool = False


def rank_stories(segmentation: Segmentation, shot_probability: Sequence[float],
                 keyframe_scores: Sequence[Mapping[object, float]], alpha: float = 0.5) -> list[RankedStory]:
    """Score stories by their best shot and pick each story's thumbnail.

    ``keyframe_scores[s]`` maps keyframe ids of shot ``s`` to aesthetic
    scores. A shot without keyframes is scored on ``alpha * P`` alone; a
    story without any keyframe is flagged. Ties keep story order.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    P = np.asarray(shot_probability, dtype=float)
    if len(P) != segmentation.n_shots or len(keyframe_scores) != segmentation.n_shots:
        raise ValueError("need one probability and one keyframe mapping per shot")
    out = []
    for k, story in enumerate(segmentation.stories):
        best_score, thumb, thumb_score = -np.inf, None, -np.inf
        for s in range(story.first_shot, story.last_shot + 1):
            frames = keyframe_scores[s]
            top = None
            if frames:
                # ties between keyframes resolve to the smallest id
                top_id = max(sorted(frames, key=str), key=lambda d: frames[d])
                top = frames[top_id]
                if top > thumb_score:
                    thumb, thumb_score = top_id, top
            score = alpha * P[s] + ((1.0 - alpha) * top if top is not None else 0.0)
            best_score = max(best_score, score)
        out.append(RankedStory(k, story.first_shot, story.last_shot, thumb, float(best_score), thumb is None))
    return sorted(out, key=lambda r: -r.score)



def query_shot_probability(shots, terms, term: str, sigma_a: float) -> np.ndarray:
    """``P(s, u)`` of the matched term ``u`` for every shot.

    A unigram uttered several times takes the strongest occurrence per shot.
    Occurrences without classifier probabilities fall back to the Gaussian
    temporal weight alone.
    """
    P = np.zeros(len(shots))
    mids = np.array([s.midpoint for s in shots], dtype=float)
    idx = np.array([s.index for s in shots])
    for t in terms:
        if t.unigram != term:
            continue
        w = np.exp(-((t.t_u - mids) ** 2) / (2.0 * sigma_a**2))
        if t.svm_probs is not None:
            w = w * np.asarray(t.svm_probs, dtype=float)[idx]
        P = np.maximum(P, w)
    return P
