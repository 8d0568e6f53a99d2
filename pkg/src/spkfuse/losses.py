"""Training objective: additive angular margin softmax plus penalties."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError, NumericError

# sin^2 below ~2 ulp of cos = 1 is pure rounding noise from the length
# normalization; snapping it to zero keeps exactly aligned embeddings at
# precisely scale * cos(margin) and the square root's backward finite
SIN_SQ_SNAP = 4e-16


class ClassifierHead:
    """Class weight rows compared to embeddings by angle.

    weights: [num_classes, embed_dim]. Rows and embeddings are length
    normalized at scoring time, so only directions matter.
    """

    def __init__(self, num_classes: int, embed_dim: int, margin: float, scale: float,
                 rng: np.random.Generator, dtype=np.float64, name: str = "classifier"):
        bound = 1.0 / np.sqrt(embed_dim)
        data = rng.uniform(-bound, bound, size=(num_classes, embed_dim)).astype(dtype)
        self.weights = Tensor(data, requires_grad=True, name=f"{name}.weights")
        self.margin = float(margin)
        self.scale = float(scale)
        self.name = name

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.weights", self.weights)]


def _normalize_rows(x: Tensor, what: str) -> Tensor:
    norm2 = ag.tensor_sum(x * x, axis=-1, keepdims=True)
    if np.any(norm2.data <= 0.0):
        raise NumericError(f"zero-norm {what} cannot be angle-compared")
    return x / ag.sqrt(norm2)


def aam_logits(embedding: Tensor, head: ClassifierHead, target) -> Tensor:
    """Scaled cosine logits with an additive angular margin on the target.

    embedding is [E] or [B, E]; target is an int or an int array [B].
    The target logit becomes scale * cos(theta + margin), computed as
    cos*cos(m) - sin*sin(m) with sin = sqrt(1 - cos^2); cosines are
    clipped to [-1, 1] against rounding overshoot. All other logits are
    scale * cos(theta).
    """
    squeeze = embedding.ndim == 1
    e = ag.reshape(embedding, (1, embedding.shape[0])) if squeeze else embedding
    if e.ndim != 2 or e.shape[1] != head.weights.shape[1]:
        raise DimensionError(
            f"embedding dim {embedding.shape} does not match classifier "
            f"rows of width {head.weights.shape[1]}"
        )
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.shape != (e.shape[0],):
        raise DimensionError(
            f"need one target per embedding: {targets.shape} vs batch {e.shape[0]}"
        )
    if np.any(targets < 0) or np.any(targets >= head.num_classes):
        raise DimensionError(
            f"target outside [0, {head.num_classes}): {targets.tolist()}"
        )
    e_hat = _normalize_rows(e, "embedding")
    w_hat = _normalize_rows(head.weights, "classifier row")
    cos = ag.clip(ag.matmul(e_hat, ag.transpose(w_hat)), -1.0, 1.0)
    sin_sq = ag.clamp_min(1.0 - cos * cos, SIN_SQ_SNAP)
    live = Tensor((sin_sq.data > SIN_SQ_SNAP).astype(e.dtype))
    sin = ag.sqrt(sin_sq) * live
    cos_margin = cos * math.cos(head.margin) - sin * math.sin(head.margin)
    onehot = np.zeros((e.shape[0], head.num_classes), dtype=e.dtype)
    onehot[np.arange(e.shape[0]), targets] = 1.0
    mask = Tensor(onehot)
    logits = head.scale * (cos + mask * (cos_margin - cos))
    return ag.reshape(logits, (head.num_classes,)) if squeeze else logits


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean softmax cross entropy; nonnegative, zero only for one-hot rows."""
    squeeze = logits.ndim == 1
    z = ag.reshape(logits, (1, logits.shape[0])) if squeeze else logits
    if z.ndim != 2:
        raise DimensionError(f"logits must be [S] or [B, S], got {logits.shape}")
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if targets.shape != (z.shape[0],):
        raise DimensionError(
            f"need one target per row: {targets.shape} vs batch {z.shape[0]}"
        )
    shift = Tensor(z.data.max(axis=-1, keepdims=True))
    shifted = z - shift
    lse = ag.log(ag.tensor_sum(ag.exp(shifted), axis=-1))
    onehot = np.zeros(z.shape, dtype=z.dtype)
    onehot[np.arange(z.shape[0]), targets] = 1.0
    picked = ag.tensor_sum(shifted * Tensor(onehot), axis=-1)
    return ag.mean(lse - picked)


def total_loss(logits: Tensor, target, penalty: Tensor | None = None) -> Tensor:
    """Mean cross entropy plus the (already averaged) diversity penalty."""
    ce = cross_entropy(logits, target)
    if penalty is None:
        return ce
    pen = ag.mean(penalty) if penalty.ndim > 0 else penalty
    return ce + pen
