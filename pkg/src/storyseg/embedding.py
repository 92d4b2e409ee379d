"""Triplet-trained shot embedding.

A small fully connected ReLU network maps a shot descriptor to a 30-d space
where squared Euclidean distance tracks story membership. Training draws
triplets (anchor, same-story positive, other-story negative) within each
video and minimizes the batch-mean hinge loss plus an L2 penalty on the
weights with momentum SGD.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Segmentation

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (500, 125, 30)


@dataclass
class TrainConfig:
    iterations: int = 100
    batch_size: int = 500
    reg: float = 0.0005
    learning_rate: float = 0.01
    decay_after: int = 50
    decay_factor: float = 0.1
    momentum: float = 0.9
    dropout_keep: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reg < 0 or self.learning_rate <= 0 or self.momentum < 0:
            raise ValueError("reg, learning_rate and momentum must be nonnegative (learning_rate > 0)")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError("dropout_keep must be in (0, 1]")

    def lr_at(self, iteration: int) -> float:
        """Learning rate for 1-based ``iteration``."""
        if iteration > self.decay_after:
            return self.learning_rate * self.decay_factor
        return self.learning_rate


@dataclass
class EmbeddingModel:
    """Weights are stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``.

    ``input_mean``/``input_scale``, when set, standardize raw descriptors
    before they enter the network (see :meth:`embed`); :func:`forward` works
    on already standardized input.
    """

    layer_dims: list
    weights: list
    biases: list
    final_linear: bool = False
    config: dict = field(default_factory=dict)
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs an input and at least one layer")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer expected")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[k], self.layer_dims[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape}, bias {b.shape}, expected {shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
        if (self.input_mean is None) != (self.input_scale is None):
            raise ValueError("input_mean and input_scale must be given together")
        if self.input_mean is not None:
            self.input_mean = np.asarray(self.input_mean, dtype=float)
            self.input_scale = np.asarray(self.input_scale, dtype=float)
            if self.input_mean.shape != (self.input_dim,) or self.input_scale.shape != (self.input_dim,):
                raise ValueError("standardization vectors must match the input dimension")
            if not np.all(self.input_scale > 0):
                raise ValueError("input_scale must be positive")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @classmethod
    def zeros(cls, layer_dims, final_linear=False) -> "EmbeddingModel":
        dims = list(layer_dims)
        return cls(dims, [np.zeros((a, b)) for a, b in zip(dims, dims[1:])],
                   [np.zeros(b) for b in dims[1:]], final_linear)

    @classmethod
    def glorot(cls, layer_dims, rng: np.random.Generator, final_linear=False) -> "EmbeddingModel":
        dims = list(layer_dims)
        weights = []
        for a, b in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-limit, limit, size=(a, b)))
        return cls(dims, weights, [np.zeros(b) for b in dims[1:]], final_linear)

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(list(self.layer_dims), [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], self.final_linear, dict(self.config),
                              None if self.input_mean is None else self.input_mean.copy(),
                              None if self.input_scale is None else self.input_scale.copy())

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.input_mean is None:
            return X
        return (X - self.input_mean) / self.input_scale

    def embed(self, X) -> np.ndarray:
        """Embed raw descriptors: standardize, then run the network in inference mode."""
        return forward(self, self.standardize(X))


def _rectified(model: EmbeddingModel, layer: int) -> bool:
    return not (model.final_linear and layer == model.n_layers - 1)


def sample_masks(model: EmbeddingModel, rng: np.random.Generator, keep: float, batch: int):
    """Inverted-dropout multipliers (0 or 1/keep) for every hidden layer, one row per sample."""
    if keep >= 1.0:
        return None
    return tuple((rng.random((batch, width)) < keep) / keep for width in model.layer_dims[1:-1])


def _forward_cache(model: EmbeddingModel, X: np.ndarray, masks=None):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.input_dim:
        raise ValueError(f"input has dimension {X.shape[-1]}, model expects {model.input_dim}")
    acts, pre = [X], []
    a = X
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if _rectified(model, k) else z
        if masks is not None and k < model.n_layers - 1:
            a = a * masks[k]
        acts.append(a)
    return acts, pre


def forward(model: EmbeddingModel, x, masks=None) -> np.ndarray:
    """Embed one descriptor or a batch of row descriptors.

    ``masks`` holds one multiplier array per hidden layer (see
    :func:`sample_masks`); inference passes ``None``.
    """
    return _forward_cache(model, x, masks)[0][-1]


def _backward(model: EmbeddingModel, acts, pre, masks, grad_out):
    gw = [None] * model.n_layers
    gb = [None] * model.n_layers
    g = grad_out
    for k in range(model.n_layers - 1, -1, -1):
        if masks is not None and k < model.n_layers - 1:
            g = g * masks[k]
        if _rectified(model, k):
            g = g * (pre[k] > 0)
        gw[k] = acts[k].T @ g
        gb[k] = g.sum(axis=0)
        if k:
            g = g @ model.weights[k].T
    return gw, gb


def triplet_losses(model, anchors, positives, negatives, masks=None) -> np.ndarray:
    """Per-triplet hinge loss with one shared dropout mask per triplet across the three branches."""
    fa = forward(model, anchors, masks)
    fp = forward(model, positives, masks)
    fn = forward(model, negatives, masks)
    d_pos = ((fa - fp) ** 2).sum(axis=-1)
    d_neg = ((fa - fn) ** 2).sum(axis=-1)
    return np.maximum(0.0, d_pos + 1.0 - d_neg)


def triplet_loss(model, triplet, masks=None) -> float:
    a, p, n = (np.atleast_2d(np.asarray(v, dtype=float)) for v in triplet)
    if masks is not None:
        masks = tuple(np.atleast_2d(m) for m in masks)
    return float(triplet_losses(model, a, p, n, masks)[0])


def weight_penalty(model: EmbeddingModel, reg: float) -> float:
    return 0.5 * reg * sum(float((w**2).sum()) for w in model.weights)


def batch_loss(model, anchors, positives, negatives, reg: float, masks=None) -> float:
    """Mean hinge loss over the batch plus ``reg/2 * ||w||^2`` (biases unpenalized)."""
    return weight_penalty(model, reg) + float(triplet_losses(model, anchors, positives, negatives, masks).mean())


def batch_gradients(model, anchors, positives, negatives, reg: float, masks=None):
    """Loss and gradient of :func:`batch_loss` w.r.t. weights and biases.

    Triplets whose hinge is inactive contribute exactly zero gradient.
    """
    ca = _forward_cache(model, anchors, masks)
    cp = _forward_cache(model, positives, masks)
    cn = _forward_cache(model, negatives, masks)
    fa, fp, fn = ca[0][-1], cp[0][-1], cn[0][-1]
    hinge = ((fa - fp) ** 2).sum(axis=1) + 1.0 - ((fa - fn) ** 2).sum(axis=1)
    losses = np.maximum(0.0, hinge)
    n = fa.shape[0]
    active = (hinge > 0).astype(float)[:, None] / n
    g_a = 2.0 * (fn - fp) * active
    g_p = -2.0 * (fa - fp) * active
    g_n = 2.0 * (fa - fn) * active
    gw = [reg * w for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    for cache, g in ((ca, g_a), (cp, g_p), (cn, g_n)):
        w_k, b_k = _backward(model, cache[0], cache[1], masks, g)
        for k in range(model.n_layers):
            gw[k] += w_k[k]
            gb[k] += b_k[k]
    loss = weight_penalty(model, reg) + float(losses.mean())
    return loss, gw, gb


class MomentumSGD:
    """``v <- momentum * v + lr * grad; param <- param - v``."""

    def __init__(self, model: EmbeddingModel, momentum: float):
        self.model = model
        self.momentum = momentum
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, gw, gb, lr: float) -> None:
        for k in range(self.model.n_layers):
            self.v_w[k] = self.momentum * self.v_w[k] + lr * gw[k]
            self.v_b[k] = self.momentum * self.v_b[k] + lr * gb[k]
            self.model.weights[k] -= self.v_w[k]
            self.model.biases[k] -= self.v_b[k]


class TripletSampler:
    """Uniform within-video triplet sampling.

    Anchors are drawn uniformly from shots that have at least one same-story
    partner and at least one shot of another story in the same video.
    """

    def __init__(self, corpus: Sequence[tuple[np.ndarray, Segmentation]]):
        feats, anchors, story_lo, story_len, vid_lo, vid_len = [], [], [], [], [], []
        offset = 0
        for X, seg in corpus:
            X = np.asarray(X, dtype=float)
            if X.shape[0] != seg.n_shots:
                raise ValueError(f"{X.shape[0]} feature rows for a {seg.n_shots}-shot segmentation")
            feats.append(X)
            for story in seg.stories:
                if story.n_shots >= 2 and len(seg) >= 2:
                    for i in range(story.first_shot, story.last_shot + 1):
                        anchors.append(offset + i)
                        story_lo.append(offset + story.first_shot)
                        story_len.append(story.n_shots)
                        vid_lo.append(offset)
                        vid_len.append(seg.n_shots)
            offset += seg.n_shots
        if not anchors:
            raise ValueError("no valid triplets: every video has single-shot stories or a single story")
        dims = {f.shape[1] for f in feats}
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature dimensions {sorted(dims)}")
        self.X = np.vstack(feats)
        self.anchors = np.array(anchors)
        self.story_lo = np.array(story_lo)
        self.story_len = np.array(story_len)
        self.vid_lo = np.array(vid_lo)
        self.vid_len = np.array(vid_len)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row indices (anchor, positive, negative) into ``self.X``."""
        pick = rng.integers(len(self.anchors), size=n)
        a = self.anchors[pick]
        lo, length = self.story_lo[pick], self.story_len[pick]
        r = (rng.random(n) * (length - 1)).astype(int)
        p = lo + r + (lo + r >= a)
        v0, vlen = self.vid_lo[pick], self.vid_len[pick]
        r = (rng.random(n) * (vlen - length)).astype(int)
        neg = v0 + r + (v0 + r >= lo) * length
        return a, p, neg


def fit_standardization(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std; constant columns get scale 1."""
    X = np.asarray(X, dtype=float)
    mean, scale = X.mean(axis=0), X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def train(corpus: Sequence[tuple[np.ndarray, Segmentation]], cfg: TrainConfig,
          hidden: Sequence[int] = DEFAULT_HIDDEN, final_linear: bool = False,
          init: EmbeddingModel | None = None,
          standardize: bool = False) -> tuple[EmbeddingModel, list[float]]:
    """Fit the embedding on ``(features, ground truth)`` pairs.

    With ``standardize`` the model first learns per-column mean and scale
    from all training shots and is trained on standardized input; use
    :meth:`EmbeddingModel.embed` on raw descriptors afterwards. Returns the
    trained model and the per-iteration batch loss measured before each
    update.
    """
    rng = np.random.default_rng(cfg.seed)
    sampler = TripletSampler(corpus)
    dims = [sampler.X.shape[1], *hidden]
    model = init.copy() if init is not None else EmbeddingModel.glorot(dims, rng, final_linear)
    model.config = asdict(cfg)
    if standardize:
        model.input_mean, model.input_scale = fit_standardization(sampler.X)
    if model.input_mean is not None:
        sampler.X = model.standardize(sampler.X)
    opt = MomentumSGD(model, cfg.momentum)
    history = []
    for it in range(1, cfg.iterations + 1):
        a, p, n = sampler.sample(rng, cfg.batch_size)
        masks = sample_masks(model, rng, cfg.dropout_keep, cfg.batch_size)
        loss, gw, gb = batch_gradients(model, sampler.X[a], sampler.X[p], sampler.X[n], cfg.reg, masks)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss became non-finite at iteration {it}")
        history.append(loss)
        opt.step(gw, gb, cfg.lr_at(it))
        if it % 50 == 0:
            log.debug("iteration %d loss %.5f", it, loss)
    return model, history


def input_jacobians(model: EmbeddingModel, X) -> np.ndarray:
    """``(n_samples, out_dim, in_dim)`` Jacobians of the inference-mode embedding."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    acts, pre = _forward_cache(model, X)
    J = None
    for k, w in enumerate(model.weights):
        local = np.broadcast_to(w.T, (X.shape[0],) + w.T.shape)
        J = local if J is None else np.einsum("oh,nhd->nod", w.T, J)
        if _rectified(model, k):
            J = J * (pre[k] > 0)[:, :, None]
    return np.array(J)


def feature_importance(model: EmbeddingModel, X, block_map: Mapping[str, tuple[int, int]]) -> dict:
    """Relative importance of each feature block, L1-normalized.

    Absolute gradients with respect to the network input (standardized
    descriptors when the model carries a standardization) are averaged over
    samples and embedding dimensions, then within each block. Empty blocks
    are skipped; a model with no input sensitivity at all returns zeros.
    """
    J = np.abs(input_jacobians(model, model.standardize(X)))
    per_input = J.mean(axis=(0, 1))
    raw = {name: float(per_input[lo:hi].mean()) for name, (lo, hi) in block_map.items() if hi > lo}
    total = sum(raw.values())
    if total == 0:
        return {name: 0.0 for name in raw}
    return {name: v / total for name, v in raw.items()}
