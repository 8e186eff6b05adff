"""Batch-hard soft-plus triplet loss, toy embedding training, and
per-track representative embedding selection.

The trainable model is a small affine (optionally one-hidden-layer) map
over precomputed feature vectors; the loss and mining logic do not depend
on the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    DegenerateBatchError,
    EmptyTrackError,
    InsufficientClassesError,
    ZeroVectorError,
)


@dataclass(frozen=True)
class EmbeddingRecord:
    key: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite embedding for key {self.key!r}")
        object.__setattr__(self, "vector", v)


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ZeroVectorError("cannot normalize the zero vector")
    return vector / norm


def representative_embedding(track_vectors: list[EmbeddingRecord]) -> EmbeddingRecord:
    """Member vector closest to the arithmetic mean; earliest wins ties."""
    if not track_vectors:
        raise EmptyTrackError("track has no crop embeddings")
    vecs = np.stack([r.vector for r in track_vectors])
    mean = vecs.mean(axis=0)
    dists = np.linalg.norm(vecs - mean, axis=1)
    return track_vectors[int(np.argmin(dists))]


def softplus(x):
    """ln(1 + exp(x)), stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class TripletBatch:
    """P classes with K raw feature vectors each, shape (P, K, D_in)."""

    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3:
            raise ValueError("features must have shape (P, K, D_in)")
        object.__setattr__(self, "features", f)

    @property
    def num_classes(self) -> int:
        return self.features.shape[0]

    @property
    def per_class(self) -> int:
        return self.features.shape[1]


class EmbeddingModel:
    """Affine map or one-hidden-layer tanh network, parameters in numpy."""

    def __init__(self, in_dim, out_dim=128, hidden_dim=None, seed=0):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden_dim = hidden_dim
        self.params = []
        dims = [in_dim] + ([hidden_dim] if hidden_dim else []) + [out_dim]
        for d_in, d_out in zip(dims, dims[1:]):
            scale = 1.0 / np.sqrt(d_in)
            self.params.append(
                [rng.normal(0.0, scale, size=(d_out, d_in)), np.zeros(d_out)]
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map (..., in_dim) features to (..., out_dim) embeddings."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.params) - 1
        for i, (w, b) in enumerate(self.params):
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
        return h

    def _forward_cached(self, x):
        acts = [np.asarray(x, dtype=np.float64)]
        last = len(self.params) - 1
        for i, (w, b) in enumerate(self.params):
            z = acts[-1] @ w.T + b
            acts.append(np.tanh(z) if i < last else z)
        return acts

    def _backward(self, acts, d_out):
        grads = [None] * len(self.params)
        grad = d_out
        for i in range(len(self.params) - 1, -1, -1):
            w, _ = self.params[i]
            grads[i] = [grad.T @ acts[i], grad.sum(axis=0)]
            if i > 0:
                grad = (grad @ w) * (1.0 - acts[i] ** 2)  # tanh'
        return grads

    def copy(self) -> "EmbeddingModel":
        clone = EmbeddingModel.__new__(EmbeddingModel)
        clone.in_dim = self.in_dim
        clone.out_dim = self.out_dim
        clone.hidden_dim = self.hidden_dim
        clone.params = [[w.copy(), b.copy()] for w, b in self.params]
        return clone

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for layer in self.params for a in layer])

    def set_flat_params(self, flat: np.ndarray) -> None:
        pos = 0
        for layer in self.params:
            for i, a in enumerate(layer):
                layer[i] = flat[pos : pos + a.size].reshape(a.shape)
                pos += a.size

    def save(self, path) -> None:
        arrays = {}
        for i, (w, b) in enumerate(self.params):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        np.savez(
            path,
            meta=np.array(
                [self.in_dim, self.out_dim, self.hidden_dim or 0], dtype=np.int64
            ),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        data = np.load(path)
        in_dim, out_dim, hidden = data["meta"].tolist()
        model = cls(in_dim, out_dim, hidden or None, seed=0)
        for i in range(len(model.params)):
            model.params[i] = [data[f"w{i}"], data[f"b{i}"]]
        return model


def _check_batch(batch: TripletBatch) -> None:
    if batch.num_classes < 2 or batch.per_class < 2:
        raise DegenerateBatchError(
            f"need P >= 2 and K >= 2, got P={batch.num_classes}, K={batch.per_class}"
        )


def _hard_indices(emb: np.ndarray, p: int, k: int):
    """Per anchor: first-attaining hardest positive and negative indices.

    Returns (d_pos, d_neg, pos_idx, neg_idx), each shaped (P*K,), with
    indices into the flattened batch (class-major order).
    """
    b = p * k
    flat = emb.reshape(b, -1)
    diff = flat[:, None, :] - flat[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    labels = np.repeat(np.arange(p), k)
    same = labels[:, None] == labels[None, :]
    pos_dist = np.where(same, dist, -np.inf)
    neg_dist = np.where(same, np.inf, dist)
    pos_idx = np.argmax(pos_dist, axis=1)
    neg_idx = np.argmin(neg_dist, axis=1)
    return (
        pos_dist[np.arange(b), pos_idx],
        neg_dist[np.arange(b), neg_idx],
        pos_idx,
        neg_idx,
    )


def batch_hard_terms(model: EmbeddingModel, batch: TripletBatch):
    """Hardest-positive and hardest-negative distance per anchor, (P, K)."""
    _check_batch(batch)
    p, k = batch.num_classes, batch.per_class
    emb = model.forward(batch.features)
    d_pos, d_neg, _, _ = _hard_indices(emb, p, k)
    return d_pos.reshape(p, k), d_neg.reshape(p, k)


def triplet_loss(model: EmbeddingModel, batch: TripletBatch) -> float:
    """Sum over anchors of softplus(hardest-positive - hardest-negative)."""
    d_pos, d_neg = batch_hard_terms(model, batch)
    return float(softplus(d_pos - d_neg).sum())


def loss_gradient(model: EmbeddingModel, batch: TripletBatch):
    """Analytic gradient of :func:`triplet_loss` with respect to the
    model parameters, with max/min subgradients taken at the first
    attaining index and zero-distance pairs contributing zero."""
    _check_batch(batch)
    p, k = batch.num_classes, batch.per_class
    b = p * k
    x = batch.features.reshape(b, -1)
    acts = model._forward_cached(x)
    emb = acts[-1]
    d_pos, d_neg, pos_idx, neg_idx = _hard_indices(emb, p, k)

    margin = d_pos - d_neg
    # d softplus(m)/dm = sigmoid(m), computed stably
    coeff = np.where(
        margin >= 0,
        1.0 / (1.0 + np.exp(-np.clip(margin, -500, 500))),
        np.exp(np.clip(margin, -500, 500))
        / (1.0 + np.exp(np.clip(margin, -500, 500))),
    )

    d_emb = np.zeros_like(emb)
    for a in range(b):
        pi, ni = pos_idx[a], neg_idx[a]
        if d_pos[a] > 0:
            u = (emb[a] - emb[pi]) / d_pos[a]
            d_emb[a] += coeff[a] * u
            d_emb[pi] -= coeff[a] * u
        if d_neg[a] > 0:
            v = (emb[a] - emb[ni]) / d_neg[a]
            d_emb[a] -= coeff[a] * v
            d_emb[ni] += coeff[a] * v
    return model._backward(acts, d_emb)


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 1e-5
    lr_decayed: float = 1e-6
    decay_after_samples: int = 1_500_000
    total_samples: int = 5_000_000
    # second milestone left inactive unless both fields are set explicitly
    second_decay_after_samples: int | None = None
    lr_second: float | None = None
    num_classes_per_batch: int = 16
    per_class: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_decayed <= 0:
            raise ValueError("step sizes must be positive")
        if self.total_samples < 0 or self.decay_after_samples <= 0:
            raise ValueError("sample budgets must be positive")

    def learning_rate(self, samples_seen: int) -> float:
        if (
            self.second_decay_after_samples is not None
            and self.lr_second is not None
            and samples_seen >= self.second_decay_after_samples
        ):
            return self.lr_second
        if samples_seen >= self.decay_after_samples:
            return self.lr_decayed
        return self.lr_initial


def _sample_batch(rng, features_by_class, cfg):
    class_ids = sorted(features_by_class)
    chosen = rng.choice(len(class_ids), size=cfg.num_classes_per_batch, replace=False)
    groups = []
    for ci in chosen:
        feats = features_by_class[class_ids[ci]]
        replace = len(feats) < cfg.per_class
        rows = rng.choice(len(feats), size=cfg.per_class, replace=replace)
        groups.append(feats[rows])
    return TripletBatch(features=np.stack(groups))


def train_embedding(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    seed: int = 0,
    embed_dim: int = 128,
    hidden_dim: int | None = None,
) -> EmbeddingModel:
    """Adam training loop over batch-hard triplet batches; deterministic
    given the seed. Classes smaller than K are sampled with replacement."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < cfg.num_classes_per_batch:
        raise InsufficientClassesError(
            f"need {cfg.num_classes_per_batch} classes, got {len(classes)}"
        )
    by_class = {c: features[labels == c] for c in classes}

    rng = np.random.default_rng(seed)
    model = EmbeddingModel(features.shape[1], embed_dim, hidden_dim, seed=seed)
    m = [[np.zeros_like(a) for a in layer] for layer in model.params]
    v = [[np.zeros_like(a) for a in layer] for layer in model.params]

    samples_seen = 0
    step = 0
    batch_size = cfg.num_classes_per_batch * cfg.per_class
    while samples_seen < cfg.total_samples:
        batch = _sample_batch(rng, by_class, cfg)
        grads = loss_gradient(model, batch)
        lr = cfg.learning_rate(samples_seen)
        step += 1
        for li, layer in enumerate(model.params):
            for pi in range(len(layer)):
                g = grads[li][pi]
                m[li][pi] = cfg.beta1 * m[li][pi] + (1 - cfg.beta1) * g
                v[li][pi] = cfg.beta2 * v[li][pi] + (1 - cfg.beta2) * g * g
                m_hat = m[li][pi] / (1 - cfg.beta1**step)
                v_hat = v[li][pi] / (1 - cfg.beta2**step)
                layer[pi] = layer[pi] - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        samples_seen += batch_size
    return model


class TripletEmbedder(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`train_embedding`.

    fit(X, y) trains the embedding map on labeled feature vectors;
    transform(X) maps features into the learned embedding space.
    """

    def __init__(
        self,
        embed_dim=128,
        hidden_dim=None,
        lr_initial=1e-5,
        lr_decayed=1e-6,
        decay_after_samples=1_500_000,
        total_samples=5_000_000,
        num_classes_per_batch=16,
        per_class=4,
        seed=0,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.lr_initial = lr_initial
        self.lr_decayed = lr_decayed
        self.decay_after_samples = decay_after_samples
        self.total_samples = total_samples
        self.num_classes_per_batch = num_classes_per_batch
        self.per_class = per_class
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D (n_samples, n_features)")
        cfg = TrainConfig(
            lr_initial=self.lr_initial,
            lr_decayed=self.lr_decayed,
            decay_after_samples=self.decay_after_samples,
            total_samples=self.total_samples,
            num_classes_per_batch=self.num_classes_per_batch,
            per_class=self.per_class,
        )
        self.model_ = train_embedding(
            X,
            np.asarray(y),
            cfg,
            seed=self.seed,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
        )
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("TripletEmbedder is not fitted")
        return self.model_.forward(np.asarray(X, dtype=np.float64))
