"""Synthetic story-structured corpus.

Each story gets a centre in a low-dimensional subspace shared by the whole
corpus; shot descriptors are centre plus isotropic noise. On top of that a
small palette of camera setups, shared by every story of the corpus and
orthogonal to the story subspace, persists over runs of shots. Raw-feature
clustering sees every setup change as a scene change, while a learned
embedding can discard the setup directions. Transcript terms form a steady
stream drawn from a per-story concept group, so the Gaussian-weighted
semantic features plateau inside each story.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureVector, Segmentation, ShotRecord
from .features import (ConceptGroups, SemanticConfig, TranscriptTerm,
                       assemble_video_features)


@dataclass
class SynthConfig:
    """Generator settings.

    ``dim`` is the size of the visual block; the assembled feature vector
    also carries quantity of speech, time and two ``n_groups``-sized
    semantic blocks. ``regime_shots`` is the mean run length of a camera
    setup, ``term_spacing`` the mean gap between transcript terms in seconds.
    """

    n_videos: int = 10
    shots_per_video: tuple = (40, 80)
    stories_per_video: tuple = (4, 8)
    dim: int = 32
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0
    informative_dims: int = 8
    min_story_shots: int = 2
    fps: float = 25.0
    shot_frames: tuple = (500, 1000)
    n_setups: int = 3
    setup_spread: float = 6.0
    regime_shots: float = 3.0
    n_groups: int = 6
    words_per_group: int = 4
    word_dim: int = 16
    term_spacing: float = 5.0
    topic_purity: float = 1.0
    prob_in: tuple = (0.6, 0.95)
    prob_out: tuple = (0.0, 0.15)

    def __post_init__(self):
        for name in ("shots_per_video", "stories_per_video", "shot_frames", "prob_in", "prob_out"):
            setattr(self, name, tuple(getattr(self, name)))
        for name in ("shots_per_video", "stories_per_video", "shot_frames"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        if self.noise < 0 or self.setup_spread < 0:
            raise ValueError("noise and setup_spread must be nonnegative")
        if self.n_videos < 1 or self.dim < 1:
            raise ValueError("n_videos and dim must be positive")
        if not 1 <= self.informative_dims <= self.dim:
            raise ValueError("informative_dims must be in 1..dim")
        if self.min_story_shots < 1 or self.n_setups < 0 or self.regime_shots < 1:
            raise ValueError("min_story_shots and regime_shots must be >= 1, n_setups >= 0")
        if self.n_groups < 1 or self.words_per_group < 1 or self.word_dim < 1:
            raise ValueError("vocabulary sizes must be positive")
        if not self.term_spacing > 0:
            raise ValueError("term_spacing must be positive")
        if not 0 <= self.topic_purity <= 1:
            raise ValueError("topic_purity must be in [0, 1]")
        for name in ("prob_in", "prob_out"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi <= 1:
                raise ValueError(f"{name} must be a sub-range of [0, 1]")
        if self.stories_per_video[0] * self.min_story_shots > self.shots_per_video[1]:
            raise ValueError(
                f"{self.stories_per_video[0]} stories of >= {self.min_story_shots} shots "
                f"do not fit in {self.shots_per_video[1]} shots"
            )


@dataclass
class SynthVideo:
    id: str
    shots: list
    terms: list
    visual: np.ndarray
    truth: Segmentation
    features: list = field(default_factory=list)

    @property
    def edges(self) -> tuple:
        return self.truth.edges


@dataclass
class SynthCorpus:
    config: SynthConfig
    videos: list
    word_vectors: dict
    groups: ConceptGroups
    semantic: SemanticConfig


def _story_lengths(rng, n, k, min_len):
    extra = rng.multinomial(n - k * min_len, np.ones(k) / k)
    return min_len + extra


def _centres(rng, basis, k, separation, max_tries=1000):
    r = basis.shape[1]
    # typical centre distance about 1.5 * separation before rejection
    scale = 1.5 * separation / np.sqrt(2.0 * r)
    centres = []
    while len(centres) < k:
        for _ in range(max_tries):
            c = rng.normal(scale=scale, size=r)
            if all(np.linalg.norm(c - o) >= separation for o in centres):
                break
        else:
            raise RuntimeError("could not place story centres at the requested separation")
        centres.append(c)
    return np.array(centres) @ basis.T


def _vocabulary(rng, cfg):
    directions = rng.normal(size=(cfg.n_groups, cfg.word_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    vectors, groups = {}, {}
    for g in range(cfg.n_groups):
        for w in range(cfg.words_per_group):
            word = f"concept{g}_{w}"
            vectors[word] = directions[g] + 0.15 * rng.normal(size=cfg.word_dim)
            groups[word] = g
    return vectors, groups


def _setup_runs(rng, n, n_setups, mean_run):
    """Markov chain over setups: each shot switches to a random setup with prob ``1/mean_run``."""
    state = np.empty(n, dtype=int)
    state[0] = rng.integers(n_setups)
    switch = rng.random(n) < 1.0 / mean_run
    draws = rng.integers(n_setups, size=n)
    for i in range(1, n):
        state[i] = draws[i] if switch[i] else state[i - 1]
    return state


def _video(rng, cfg, v, basis, palette, groups, sem):
    n = int(rng.integers(cfg.shots_per_video[0], cfg.shots_per_video[1] + 1))
    k_lo = min(cfg.stories_per_video[0], n // cfg.min_story_shots)
    k_hi = min(cfg.stories_per_video[1], n // cfg.min_story_shots)
    k = int(rng.integers(k_lo, k_hi + 1))
    lengths = _story_lengths(rng, n, k, cfg.min_story_shots)
    labels = np.repeat(np.arange(k), lengths)
    visual = _centres(rng, basis, k, cfg.separation)[labels] + cfg.noise * rng.normal(size=(n, cfg.dim))
    if cfg.n_setups > 0:
        visual += palette[_setup_runs(rng, n, cfg.n_setups, cfg.regime_shots)]

    frames = rng.integers(cfg.shot_frames[0], cfg.shot_frames[1] + 1, size=n)
    edges = np.concatenate([[0], np.cumsum(frames)])
    story_first = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    words = rng.poisson(8.0, size=n)
    words[story_first] = rng.poisson(1.0, size=k)
    shots = [ShotRecord(i, int(edges[i]), int(edges[i + 1]), int(words[i]), cfg.fps) for i in range(n)]

    story_group = rng.integers(cfg.n_groups, size=k)
    step = cfg.term_spacing * cfg.fps
    terms = []
    for s in range(k):
        lo, hi = edges[story_first[s]], edges[story_first[s] + lengths[s]]
        in_story = labels == s
        slots = np.arange(lo, hi, step)
        times = slots + rng.uniform(0.0, step, size=len(slots))
        for t_u in times[times < hi]:
            g = story_group[s] if rng.random() < cfg.topic_purity else rng.integers(cfg.n_groups)
            word = f"concept{g}_{rng.integers(cfg.words_per_group)}"
            probs = np.where(in_story, rng.uniform(*cfg.prob_in, size=n), rng.uniform(*cfg.prob_out, size=n))
            terms.append(TranscriptTerm(word, float(t_u), probs))

    truth = Segmentation.from_boundaries(story_first.tolist(), n, tuple(int(e) for e in edges))
    video = SynthVideo(f"video{v:02d}", shots, terms, visual, truth)
    video.features = assemble_video_features(shots, terms, groups, sem, visual=visual)
    return video


def generate_synthetic_corpus(cfg: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.dim, cfg.informative_dims)))
    palette = np.zeros((max(cfg.n_setups, 1), cfg.dim))
    if cfg.informative_dims < cfg.dim:
        palette = rng.normal(size=palette.shape)
        palette -= palette @ basis @ basis.T
        palette *= cfg.setup_spread / np.linalg.norm(palette, axis=1, keepdims=True)
    vectors, truth_groups = _vocabulary(rng, cfg)
    groups = ConceptGroups(cfg.n_groups, truth_groups, vectors)
    sem = SemanticConfig.for_fps(cfg.fps, K=cfg.n_groups)
    videos = [_video(rng, cfg, v, basis, palette, groups, sem) for v in range(cfg.n_videos)]
    return SynthCorpus(cfg, videos, vectors, groups, sem)


def feature_matrix(features: list[FeatureVector]) -> np.ndarray:
    return np.vstack([f.values for f in features])


def synth_thumbnails(rng: np.random.Generator, video_id: str, n_shots: int, keyframes_per_shot: int = 2,
                     map_size: int = 8, maps_per_group: int = 2) -> list[dict]:
    """Keyframes with five groups of small nonnegative activation maps each.

    Every keyframe draws a per-group activation level, so the hypercolumn
    statistics vary between keyframes.
    """
    from .retrieval import N_GROUPS

    items = []
    for s in range(n_shots):
        for k in range(keyframes_per_shot):
            level = rng.gamma(2.0, 1.0, size=N_GROUPS)
            groups = [[np.abs(rng.normal(level[g], 1.0, size=(map_size, map_size))) for _ in range(maps_per_group)]
                      for g in range(N_GROUPS)]
            items.append({"id": f"{video_id}/shot{s:03d}/kf{k}", "shot": s, "groups": groups})
    return items


def planted_weights(dim: int = 2 * 5, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=dim)


def planted_pairs(taus: np.ndarray, w_star: np.ndarray, rng: np.random.Generator, n_pairs: int,
                  candidates=None, margin: float = 0.0, max_tries: int = 1_000_000) -> list[tuple[int, int]]:
    """Index pairs ``(better, worse)`` ordered by the planted score ``w_star . tau``.

    ``candidates`` optionally restricts each pair to one group of indices
    (e.g. keyframes of the same story). Pairs whose planted scores differ by
    no more than ``margin`` times the score standard deviation are skipped,
    so exact ties never appear.
    """
    scores = np.asarray(taus, dtype=float) @ w_star
    pools = [np.asarray(c) for c in candidates] if candidates is not None else [np.arange(len(scores))]
    pools = [p for p in pools if len(p) >= 2]
    if not pools:
        raise ValueError("no candidate group has two items")
    gap = margin * float(scores.std())
    out, tries = [], 0
    while len(out) < n_pairs:
        tries += 1
        if tries > max_tries:
            raise ValueError(f"could not draw {n_pairs} pairs with margin {margin}")
        pool = pools[rng.integers(len(pools))]
        i, j = rng.choice(pool, size=2, replace=False)
        if abs(scores[i] - scores[j]) <= gap:
            continue
        out.append((int(i), int(j)) if scores[i] > scores[j] else (int(j), int(i)))
    return out


def save_corpus(corpus: SynthCorpus, out_dir, thumbnails: bool = True, thumbnail_size: int = 224,
                pairs_per_story: int = 4) -> dict:
    """Write a corpus as the on-disk formats and return the manifest written to ``manifest.json``.

    Each shot's visual descriptor is stored as its single keyframe tensor,
    so assembling features from the written files reproduces the in-memory
    feature vectors.
    """
    from pathlib import Path

    from . import io
    from .retrieval import build_hypercolumns

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_word_vectors(out / "words.txt", corpus.word_vectors)
    io.write_groups(out / "groups.json", corpus.groups)
    rng = np.random.default_rng(corpus.config.seed + 1)
    w_star = planted_weights(seed=corpus.config.seed + 2)
    entries, pairs = [], []
    for v in corpus.videos:
        shots = [ShotRecord(s.index, s.start_frame, s.end_frame, s.word_count, s.fps, (v.visual[s.index],))
                 for s in v.shots]
        files = {"video": f"{v.id}.video.json", "terms": f"{v.id}.terms.json",
                 "features": f"{v.id}.features.json", "annotations": [f"{v.id}.truth.json"]}
        io.write_video(out / files["video"], shots, corpus.config.fps)
        io.write_terms(out / files["terms"], v.terms)
        io.write_features(out / files["features"], v.features, v.id)
        io.write_segmentation(out / files["annotations"][0], v.truth)
        if thumbnails:
            items = synth_thumbnails(rng, v.id, len(v.shots))
            files["thumbnails"] = f"{v.id}.thumbs.json"
            io.write_thumbnails(out / files["thumbnails"], items)
            taus = np.array([build_hypercolumns(it["groups"], S=thumbnail_size).tau for it in items])
            shot_of = np.array([it["shot"] for it in items])
            labels = v.truth.labels()
            for k in range(len(v.truth)):
                members = np.flatnonzero(labels[shot_of] == k)
                if len(members) < 2:
                    continue
                for b, w in planted_pairs(taus, w_star, rng, pairs_per_story, [members]):
                    pairs.append((f"{v.id}/story{k}", items[b]["id"], items[w]["id"]))
        entries.append({"id": v.id, **files})
    ids = [e["id"] for e in entries]
    manifest = {"videos": entries, "split": {"train": ids[:-1], "test": ids[-1:]},
                "embeddings": "words.txt", "groups": "groups.json"}
    if thumbnails:
        io.write_pairs(out / "pairs.csv", pairs)
        manifest["pairs"] = "pairs.csv"
        manifest["thumbnail_size"] = thumbnail_size
    io.write_json(out / "manifest.json", manifest)
    return manifest
