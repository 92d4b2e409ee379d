"""Per-shot descriptor assembly.

Perceptual blocks (pooled keyframe activations, audio, quantity of speech,
time) and the two concept-group semantic blocks are concatenated into one
:class:`~storyseg.core.FeatureVector` per shot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureVector, ShotRecord, check_contiguous

BLOCK_ORDER = ("visual", "audio", "qos", "time", "visual_semantic", "textual_semantic")


@dataclass(frozen=True)
class TranscriptTerm:
    unigram: str
    t_u: float
    svm_probs: np.ndarray | None = None

    def __post_init__(self):
        if self.svm_probs is not None:
            probs = np.asarray(self.svm_probs, dtype=float)
            if np.any(probs < 0) or np.any(probs > 1):
                raise ValueError(f"term {self.unigram!r}: svm_probs must lie in [0, 1]")
            object.__setattr__(self, "svm_probs", probs)


@dataclass(frozen=True)
class ConceptGroups:
    K: int
    assignment: dict
    term_embeddings: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        for term, g in self.assignment.items():
            if not 0 <= g < self.K:
                raise ValueError(f"term {term!r} assigned to group {g} outside [0, {self.K})")

    def group_of(self, unigram: str) -> int:
        try:
            return self.assignment[unigram]
        except KeyError:
            raise KeyError(f"term {unigram!r} has no concept group") from None


@dataclass(frozen=True)
class SemanticConfig:
    sigma_a: float
    K: int = 50

    def __post_init__(self):
        if not self.sigma_a > 0:
            raise ValueError("sigma_a must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @classmethod
    def for_fps(cls, fps: float, K: int = 50) -> "SemanticConfig":
        """Twenty seconds of video as the Gaussian standard deviation."""
        return cls(sigma_a=20.0 * fps, K=K)


def temporal_max_pool(tensors: Sequence[np.ndarray]) -> np.ndarray:
    if len(tensors) == 0:
        raise ValueError("temporal_max_pool needs at least one tensor")
    arrays = [np.asarray(t, dtype=float) for t in tensors]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"keyframe tensor shape {a.shape} differs from {shape}")
    return np.maximum.reduce(arrays)


def quantity_of_speech(word_counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(word_counts, dtype=float)
    if counts.size == 0:
        raise ValueError("quantity_of_speech needs at least one shot")
    if np.any(counts < 0):
        raise ValueError("word counts must be nonnegative")
    top = counts.max()
    if top == 0:
        return np.zeros_like(counts)
    return counts / top


def time_features(shots: Sequence[ShotRecord]) -> np.ndarray:
    """``(n, 2)`` array of (start, length), both relative to the video length."""
    check_contiguous(shots)
    origin = shots[0].start_frame
    total = shots[-1].end_frame - origin
    starts = np.array([s.start_frame - origin for s in shots], dtype=float)
    lengths = np.array([s.length for s in shots], dtype=float)
    return np.column_stack([starts / total, lengths / total])


def gaussian_weight(t_u: float, t_s: float, sigma_a: float) -> float:
    return math.exp(-((t_u - t_s) ** 2) / (2.0 * sigma_a**2))


def term_shot_probability(term: TranscriptTerm, shot: ShotRecord, cfg: SemanticConfig,
                          textual: bool = False) -> float:
    """Presence of ``term`` in ``shot``.

    In visual mode the Gaussian temporal weight is multiplied by the term's
    classifier probability for the shot; a term with no probabilities has no
    visual evidence and yields 0. Textual mode returns the weight alone.
    """
    w = gaussian_weight(term.t_u, shot.midpoint, cfg.sigma_a)
    if textual:
        return w
    if term.svm_probs is None:
        return 0.0
    return float(term.svm_probs[shot.index]) * w


def _semantic_vector(shot, terms, groups, cfg, textual):
    out = np.zeros(groups.K)
    for term in terms:
        out[groups.group_of(term.unigram)] += term_shot_probability(term, shot, cfg, textual)
    return out


def visual_semantic_vector(shot: ShotRecord, terms: Sequence[TranscriptTerm],
                           groups: ConceptGroups, cfg: SemanticConfig) -> np.ndarray:
    return _semantic_vector(shot, terms, groups, cfg, textual=False)


def textual_semantic_vector(shot: ShotRecord, terms: Sequence[TranscriptTerm],
                            groups: ConceptGroups, cfg: SemanticConfig) -> np.ndarray:
    return _semantic_vector(shot, terms, groups, cfg, textual=True)


def semantic_matrices(shots: Sequence[ShotRecord], terms: Sequence[TranscriptTerm],
                      groups: ConceptGroups, cfg: SemanticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(n_shots, K)`` visual and textual semantic blocks for a whole video."""
    n = len(shots)
    vis = np.zeros((n, groups.K))
    txt = np.zeros((n, groups.K))
    if not terms:
        return vis, txt
    mids = np.array([s.midpoint for s in shots])
    idx = np.array([s.index for s in shots])
    t_u = np.array([t.t_u for t in terms])
    g = np.array([groups.group_of(t.unigram) for t in terms])
    w = np.exp(-((t_u[None, :] - mids[:, None]) ** 2) / (2.0 * cfg.sigma_a**2))
    f = np.zeros((n, len(terms)))
    for j, term in enumerate(terms):
        if term.svm_probs is not None:
            f[:, j] = term.svm_probs[idx]
    onehot = np.zeros((len(terms), groups.K))
    onehot[np.arange(len(terms)), g] = 1.0
    return (f * w) @ onehot, w @ onehot


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 W D^-1/2`` for a nonnegative symmetric affinity matrix."""
    deg = W.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.eye(W.shape[0]) - inv_sqrt[:, None] * W * inv_sqrt[None, :]


def smallest_eigenpairs(sym: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(sym)
    return vals[:k], vecs[:, :k]


def kmeans(points: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 50) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; best inertia over ``n_init`` restarts."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    best_labels, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[rng.integers(n)]
        d2 = ((points - centers[0]) ** 2).sum(axis=1)
        for c in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[c] = points[rng.integers(n)]
            else:
                centers[c] = points[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
        labels = None
        for _ in range(max_iter):
            dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                members = points[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        inertia = ((points - centers[labels]) ** 2).sum()
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return best_labels


def spectral_cluster_terms(term_embeddings: Mapping[str, np.ndarray], K: int, seed: int = 0) -> ConceptGroups:
    """Group terms by cosine similarity of their embeddings.

    Negative cosine similarities are clipped to zero so the affinity matrix
    is a valid graph.
    """
    terms = sorted(term_embeddings)
    if len(terms) < K:
        raise ValueError(f"only {len(terms)} distinct terms for K={K}; choose a smaller K")
    if K == 1:
        return ConceptGroups(1, {t: 0 for t in terms}, dict(term_embeddings))
    X = np.array([np.asarray(term_embeddings[t], dtype=float) for t in terms])
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("term embeddings must be nonzero")
    U = X / norms[:, None]
    W = np.clip(U @ U.T, 0.0, None)
    _, V = smallest_eigenpairs(normalized_laplacian(W), K)
    rows = np.linalg.norm(V, axis=1)
    rows[rows == 0] = 1.0
    labels = kmeans(V / rows[:, None], K, seed=seed)
    return ConceptGroups(K, {t: int(g) for t, g in zip(terms, labels)}, dict(term_embeddings))


def assemble_feature_vector(blocks: Mapping[str, np.ndarray]) -> FeatureVector:
    """Concatenate named blocks in the canonical order.

    Missing optional blocks (``visual``, ``audio``) contribute zero-length
    slices so the block map keeps all six names.
    """
    parts, block_map, pos = [], {}, 0
    for name in BLOCK_ORDER:
        v = np.ravel(np.asarray(blocks.get(name, ()), dtype=float))
        if name in ("qos", "time", "visual_semantic", "textual_semantic") and name not in blocks:
            raise ValueError(f"required block {name!r} missing")
        block_map[name] = (pos, pos + v.size)
        pos += v.size
        parts.append(v)
    return FeatureVector(np.concatenate(parts), block_map)


def assemble_video_features(shots: Sequence[ShotRecord], terms: Sequence[TranscriptTerm],
                            groups: ConceptGroups, cfg: SemanticConfig,
                            visual: np.ndarray | None = None) -> list[FeatureVector]:
    """All feature vectors of one video.

    ``visual`` optionally supplies a precomputed ``(n, d_v)`` visual block; if
    omitted the pooled keyframe tensors are flattened.
    """
    qos = quantity_of_speech([s.word_count for s in shots])
    tf = time_features(shots)
    vis_sem, txt_sem = semantic_matrices(shots, terms, groups, cfg)
    out = []
    for i, shot in enumerate(shots):
        blocks = {"qos": [qos[i]], "time": tf[i], "visual_semantic": vis_sem[i],
                  "textual_semantic": txt_sem[i]}
        if visual is not None:
            blocks["visual"] = visual[i]
        elif shot.keyframe_tensors:
            blocks["visual"] = temporal_max_pool(shot.keyframe_tensors)
        if shot.audio_vector is not None:
            blocks["audio"] = shot.audio_vector
        out.append(assemble_feature_vector(blocks))
    check_corpus_dims(out)
    return out


def check_corpus_dims(vectors: Sequence[FeatureVector]) -> None:
    if not vectors:
        return
    ref = vectors[0].block_map
    for i, fv in enumerate(vectors):
        if fv.block_map != ref:
            raise ValueError(f"shot {i}: block layout {fv.block_map} differs from {ref}")


def stack(vectors: Sequence[FeatureVector]) -> np.ndarray:
    check_corpus_dims(vectors)
    return np.vstack([fv.values for fv in vectors])
