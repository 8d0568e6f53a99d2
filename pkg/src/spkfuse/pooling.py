"""Multi-head channel- and context-attentive statistics pooling.

Each head scores every (time, channel) cell of the frame-level map
through a tanh bottleneck, normalizes the scores over time with a
softmax (each channel gets its own attention distribution), and emits
attention-weighted mean and standard deviation vectors. Heads are
concatenated, means first, then standard deviations.

A hinge diversity penalty keeps the per-head attention maps apart:
pairs closer than a margin in squared Frobenius distance are penalized.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError

VARIANCE_FLOOR = 1e-8


class AttentionHead:
    """Per-cell scoring parameters of one pooling head.

    hidden_w: [bottleneck, C], hidden_b: [bottleneck],
    score_w: [C, bottleneck], score_b: [C].
    """

    def __init__(self, feat_dim: int, bottleneck: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "head"):
        def init(shape, fan_in, label):
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
            return Tensor(data, requires_grad=True, name=f"{name}.{label}")

        self.hidden_w = init((bottleneck, feat_dim), feat_dim, "hidden_w")
        self.hidden_b = init((bottleneck,), feat_dim, "hidden_b")
        self.score_w = init((feat_dim, bottleneck), bottleneck, "score_w")
        self.score_b = init((feat_dim,), bottleneck, "score_b")
        self.name = name

    def params(self) -> list[tuple[str, Tensor]]:
        return [
            (f"{self.name}.hidden_w", self.hidden_w),
            (f"{self.name}.hidden_b", self.hidden_b),
            (f"{self.name}.score_w", self.score_w),
            (f"{self.name}.score_b", self.score_b),
        ]


def attention_scores(feats: Tensor, head: AttentionHead) -> Tensor:
    """Attention weights of one head over a frame-level map.

    feats is [C, T] or [B, C, T]; the result is [T, C] or [B, T, C] with
    every channel column summing to one over time.
    """
    if feats.ndim not in (2, 3):
        raise DimensionError(f"attention input must be [C, T] or [B, C, T], got {feats.shape}")
    bottleneck = head.hidden_w.shape[0]
    feat_dim = head.hidden_w.shape[1]
    if feats.shape[-2] != feat_dim:
        raise DimensionError(
            f"attention head built for {feat_dim} channels, got {feats.shape[-2]}"
        )
    hidden_b = ag.reshape(head.hidden_b, (bottleneck, 1))
    score_b = ag.reshape(head.score_b, (feat_dim, 1))
    hidden = ag.tanh(ag.matmul(head.hidden_w, feats) + hidden_b)
    scores = ag.matmul(head.score_w, hidden) + score_b
    return ag.swap_trailing(ag.softmax(scores, axis=-1))


def weighted_stats(feats: Tensor, weights: Tensor) -> tuple[Tensor, Tensor]:
    """Attention-weighted per-channel mean and standard deviation.

    feats is [.., C, T], weights is [.., T, C] column-normalized over
    time. The variance is floored at VARIANCE_FLOOR before the square
    root, so the deviation never collapses below sqrt of the floor.
    """
    if feats.shape[-2:] != (weights.shape[-1], weights.shape[-2]):
        raise DimensionError(
            f"feature map {feats.shape} does not pair with weights {weights.shape}"
        )
    w = ag.swap_trailing(weights)
    mean = ag.tensor_sum(feats * w, axis=-1)
    second = ag.tensor_sum(feats * feats * w, axis=-1)
    var = ag.clamp_min(second - mean * mean, VARIANCE_FLOOR)
    return mean, ag.sqrt(var)


def pool(feats: Tensor, heads: list[AttentionHead],
         maps: list[Tensor] | None = None) -> Tensor:
    """Concatenated multi-head statistics vector.

    Returns [2 * len(heads) * C] for a [C, T] map, or [B, 2 * I * C] for
    a batched one. Layout is every head's mean, then every head's
    standard deviation. Precomputed attention maps may be passed to
    avoid scoring twice.
    """
    if not heads:
        raise DimensionError("pool needs at least one attention head")
    if maps is None:
        maps = [attention_scores(feats, head) for head in heads]
    if len(maps) != len(heads):
        raise DimensionError(f"{len(maps)} maps for {len(heads)} heads")
    means, stds = [], []
    for weights in maps:
        m, s = weighted_stats(feats, weights)
        means.append(m)
        stds.append(s)
    return ag.concat(means + stds, axis=-1)


def attention_maps(feats: Tensor, heads: list[AttentionHead]) -> list[Tensor]:
    return [attention_scores(feats, head) for head in heads]


def diversity_penalty(weight_maps: list[Tensor], margin: float = 1.0,
                      coeff: float = 1.0) -> Tensor:
    """Hinge penalty pushing per-head attention maps apart.

    Sums max(margin - d2, 0) over unordered head pairs, where d2 is the
    squared Frobenius distance between two maps, then scales by coeff.
    The subgradient at the hinge kink is zero. Identical maps therefore
    cost coeff * margin per pair. For batched [B, T, C] maps the result
    is a [B] vector, one penalty per utterance; for [T, C] maps it is a
    scalar.
    """
    if not weight_maps:
        raise DimensionError("diversity penalty needs at least one attention map")
    first = weight_maps[0]
    for m in weight_maps[1:]:
        if m.shape != first.shape:
            raise DimensionError(
                f"attention maps disagree in shape: {m.shape} vs {first.shape}"
            )
    batched = first.ndim == 3
    if batched:
        total = Tensor(np.zeros(first.shape[0], dtype=first.dtype))
    else:
        total = Tensor(np.zeros((), dtype=first.dtype))
    for i in range(len(weight_maps)):
        for j in range(i + 1, len(weight_maps)):
            diff = weight_maps[i] - weight_maps[j]
            d2 = ag.tensor_sum(diff * diff, axis=(-2, -1))
            total = total + ag.relu(float(margin) - d2)
    return float(coeff) * total
