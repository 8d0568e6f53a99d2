"""Finite-difference verification of every differentiable component.

Each named check builds a small seeded scalar loss, backpropagates it
through the tape, then re-derives the same gradients by central
differences and reports the worst scaled deviation. The registry is
shared by the test suite and the `gradcheck` CLI command.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import GradTape, Tensor, finite_diff_grad, relative_error
from .losses import ClassifierHead, aam_logits, total_loss
from .network import (BatchNorm1d, EncoderLayer, LayerNorm, NetworkConfig,
                      Res2DilatedConv, SEBlock, SERes2Block,
                      SpeakerEmbeddingModel, aggregate_branches,
                      dense_residual_input)
from .pooling import AttentionHead, attention_scores, diversity_penalty, pool

DEFAULT_TOL = 1e-4
DEFAULT_SEED = 2024
DEFAULT_MAX_DIM = 6


@dataclass
class CheckResult:
    name: str
    rel_err: float
    passed: bool
    seconds: float


def fd_against_tape(build: Callable[[], Tensor], wrt: list[Tensor],
                    eps: float = 1e-5) -> float:
    """Worst scaled deviation between tape and finite-difference gradients."""
    with GradTape() as tape:
        grads = tape.backward(build())
    worst = 0.0
    for t in wrt:
        def f(arr: np.ndarray, t=t) -> float:
            saved = t.data
            t.data = arr.astype(saved.dtype)
            try:
                return build().item()
            finally:
                t.data = saved

        fd = finite_diff_grad(f, t.data, eps)
        tape_grad = grads.get(t)
        if tape_grad is None:
            tape_grad = np.zeros_like(t.data)
        worst = max(worst, relative_error(tape_grad, fd))
    return worst


def _rand(rng, shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


def _weigh(rng, shape) -> Tensor:
    # fixed mixing constants so reductions do not hide sign errors
    return Tensor(rng.normal(0.0, 1.0, size=shape))


def check_elementwise(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    a = _rand(rng, (md, md))
    b = _rand(rng, (md, md))
    c = Tensor(rng.uniform(1.0, 2.0, size=(md, md)), requires_grad=True)
    return fd_against_tape(lambda: ag.mean(a * b + a / c - b + (-a) * 0.5),
                           [a, b, c])


def check_broadcasting(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    a = _rand(rng, (md, 1))
    b = _rand(rng, (md,))
    w = _weigh(rng, (md, md))
    return fd_against_tape(lambda: ag.mean((a + b) * (a - b) * w), [a, b])


def check_matmul(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    a = _rand(rng, (3, md))
    b = _rand(rng, (md, 2))
    stacked = _rand(rng, (2, 3, md))
    w = _weigh(rng, (3, 2))
    w2 = _weigh(rng, (2, 3, 2))

    def build():
        return ag.mean(ag.matmul(a, b) * w) + ag.mean(ag.matmul(stacked, b) * w2)

    return fd_against_tape(build, [a, b, stacked])


def check_shape_ops(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, md))
    w = _weigh(rng, (3, 2 * md))

    def build():
        moved = ag.transpose(x, (1, 0, 2))
        flat = ag.reshape(moved, (3, 2 * md))
        cut = ag.slice_along(x, 1, 1, 3)
        return ag.mean(flat * w) + ag.tensor_sum(cut) * 0.25 + ag.mean(
            ag.concat([x, x * 2.0], axis=0))

    return fd_against_tape(build, [x])


def check_reductions(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, md, 3))
    w = _weigh(rng, (2, 3))

    def build():
        return (ag.mean(ag.tensor_sum(x, axis=1) * w)
                + ag.mean(ag.mean(x, axis=(0, 2))) + ag.tensor_sum(x * 0.1))

    return fd_against_tape(build, [x])


def check_smooth_maps(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.5, 2.0, size=(md, md)), requires_grad=True)
    w = _weigh(rng, (md, md))

    def build():
        return ag.mean((ag.sqrt(x) + ag.log(x) + ag.exp(x * 0.3)) * w)

    return fd_against_tape(build, [x])


def check_activations(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (md, md))
    w = _weigh(rng, (md, md))

    def build():
        return ag.mean((ag.relu(x) + ag.tanh(x) + ag.sigmoid(x)) * w)

    return fd_against_tape(build, [x])


def check_clamps(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (md, md))
    w = _weigh(rng, (md, md))

    def build():
        return ag.mean((ag.clamp_min(x, 0.2) + ag.clip(x, -0.5, 0.5)) * w)

    return fd_against_tape(build, [x])


def check_softmax(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (3, md))
    w = _weigh(rng, (3, md))
    return fd_against_tape(lambda: ag.mean(ag.softmax(x, axis=-1) * w), [x])


def check_softmax_sum_flat(seed: int, md: int) -> float:
    # summing a softmax is constant, so both gradients must vanish
    rng = np.random.default_rng(seed)
    x = _rand(rng, (md,))
    return fd_against_tape(lambda: ag.tensor_sum(ag.softmax(x, axis=-1)), [x])


def check_mean_sqrt_concat(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(0.5, 1.5, size=(md, md)), requires_grad=True)
    b = _rand(rng, (md, md))
    w = _weigh(rng, (2 * md,))

    def build():
        joined = ag.concat_channels(ag.sqrt(a), b)
        return ag.mean(ag.mean_over_time(joined) * w)

    return fd_against_tape(build, [a, b])


def check_conv1d(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (2, 3, md + 2))
    w = _rand(rng, (2, 3, 3))
    b = _rand(rng, (2,))
    mix = _weigh(rng, (2, 2, md + 2))

    def build():
        return ag.mean(ag.conv1d(x, w, b, dilation=2) * mix)

    return fd_against_tape(build, [x, w, b])


def check_conv1d_unbatched(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (3, md + 2))
    w = _rand(rng, (4, 3, 3))
    b = _rand(rng, (4,))
    mix = _weigh(rng, (4, md + 2))

    def build():
        return ag.mean(ag.conv1d(x, w, b, dilation=1) * mix)

    return fd_against_tape(build, [x, w, b])


def check_batch_norm(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    layer = BatchNorm1d(4, rng, np.float64, "bn")
    x = _rand(rng, (2, 4, md))
    w = _weigh(rng, (2, 4, md))

    def build():
        return ag.mean(layer(x, training=True) * w)

    return fd_against_tape(build, [x, layer.gamma, layer.beta])


def check_layer_norm(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    layer = LayerNorm(md, rng, np.float64, "ln")
    x = _rand(rng, (2, 3, md))
    w = _weigh(rng, (2, 3, md))

    def build():
        return ag.mean(layer(x) * w)

    return fd_against_tape(build, [x, layer.gamma, layer.beta])


def check_se_block(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    block = SEBlock(4, 2, rng, np.float64, "se")
    x = _rand(rng, (2, 4, md))
    w = _weigh(rng, (2, 4, md))
    wrt = [x] + [t for _, t in block.params()]
    return fd_against_tape(lambda: ag.mean(block(x) * w), wrt)


def check_res2_conv(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    conv = Res2DilatedConv(4, 2, 3, 2, rng, np.float64, "res2")
    x = _rand(rng, (2, 4, md))
    w = _weigh(rng, (2, 4, md))
    wrt = [x] + [t for _, t in conv.params()]
    return fd_against_tape(lambda: ag.mean(conv(x) * w), wrt)


def check_se_res2block(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    block = SERes2Block(4, 3, 2, 2, 2, rng, np.float64, "block")
    x = _rand(rng, (2, 4, md))
    w = _weigh(rng, (2, 4, md))
    wrt = [x] + [t for _, t in block.params()]
    return fd_against_tape(lambda: ag.mean(block(x, training=True) * w), wrt)


def check_residual_aggregation(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    a, b, c = (_rand(rng, (3, md)) for _ in range(3))
    w = _weigh(rng, (6, md))

    def build():
        summed = dense_residual_input([a, b, c])
        return ag.mean(aggregate_branches(summed, c) * w)

    return fd_against_tape(build, [a, b, c])


def check_encoder_layer(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    layer = EncoderLayer(4, 2, 5, rng, np.float64, "enc")
    x = _rand(rng, (2, md, 4))
    w = _weigh(rng, (2, md, 4))
    wrt = [x] + [t for _, t in layer.params()]
    return fd_against_tape(lambda: ag.mean(layer(x) * w), wrt)


def check_attention_pool(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    heads = [AttentionHead(4, 3, rng) for _ in range(2)]
    feats = _rand(rng, (2, 4, md))
    w = _weigh(rng, (2, 16))
    wrt = [feats] + [t for h in heads for _, t in h.params()]
    return fd_against_tape(lambda: ag.mean(pool(feats, heads) * w), wrt)


def check_diversity_penalty(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    heads = [AttentionHead(4, 3, rng) for _ in range(3)]
    feats = _rand(rng, (2, 4, md))
    wrt = [feats] + [t for h in heads for _, t in h.params()]

    def build():
        maps = [attention_scores(feats, h) for h in heads]
        return ag.mean(diversity_penalty(maps, margin=5.0, coeff=1.3))

    return fd_against_tape(build, wrt)


def check_margin_loss(seed: int, md: int) -> float:
    rng = np.random.default_rng(seed)
    head = ClassifierHead(4, md, 0.2, 30.0, rng)
    e = _rand(rng, (3, md))
    targets = np.array([0, 2, 3])

    def build():
        return total_loss(aam_logits(e, head, targets), targets)

    return fd_against_tape(build, [e, head.weights])


def _tiny_config(encoder: bool, pool_heads: int) -> NetworkConfig:
    return NetworkConfig(
        feat_dim=5, channels=8, initial_kernel=3, block_kernels=(3, 3),
        block_dilations=(1, 2), res2_scale=2, se_bottleneck=4,
        encoder_branch=encoder, encoder_layers=1, encoder_heads=2,
        encoder_ffn_dim=8, pre_pooling_dim=8, pooling_heads=pool_heads,
        pooling_bottleneck=4, embedding_dim=6, num_speakers=3,
        diversity_margin=5.0, diversity_coeff=0.7,
    )


def _check_full_model(seed: int, md: int, encoder: bool, pool_heads: int) -> float:
    rng = np.random.default_rng(seed)
    model = SpeakerEmbeddingModel(_tiny_config(encoder, pool_heads), seed=seed)
    x = Tensor(rng.normal(0.0, 1.0, size=(2, 5, md + 1)), requires_grad=True)
    targets = np.array([0, 2])

    def build():
        return model.training_loss(x, targets)[0]

    wrt = [x] + [t for _, t in model.params()]
    return fd_against_tape(build, wrt)


def check_full_model(seed: int, md: int) -> float:
    return _check_full_model(seed, md, encoder=True, pool_heads=2)


def check_full_model_no_encoder(seed: int, md: int) -> float:
    return _check_full_model(seed, md, encoder=False, pool_heads=1)


CHECKS: list[tuple[str, Callable[[int, int], float]]] = [
    ("elementwise", check_elementwise),
    ("broadcasting", check_broadcasting),
    ("matmul", check_matmul),
    ("shape_ops", check_shape_ops),
    ("reductions", check_reductions),
    ("smooth_maps", check_smooth_maps),
    ("activations", check_activations),
    ("clamps", check_clamps),
    ("softmax", check_softmax),
    ("softmax_sum_flat", check_softmax_sum_flat),
    ("mean_sqrt_concat", check_mean_sqrt_concat),
    ("conv1d", check_conv1d),
    ("conv1d_unbatched", check_conv1d_unbatched),
    ("batch_norm", check_batch_norm),
    ("layer_norm", check_layer_norm),
    ("se_block", check_se_block),
    ("res2_conv", check_res2_conv),
    ("se_res2block", check_se_res2block),
    ("residual_aggregation", check_residual_aggregation),
    ("encoder_layer", check_encoder_layer),
    ("attention_pool", check_attention_pool),
    ("diversity_penalty", check_diversity_penalty),
    ("margin_loss", check_margin_loss),
    ("full_model", check_full_model),
    ("full_model_no_encoder", check_full_model_no_encoder),
]

CHECK_NAMES = [name for name, _ in CHECKS]


def run_check(name: str, seed: int = DEFAULT_SEED, max_dim: int = DEFAULT_MAX_DIM,
              tol: float = DEFAULT_TOL) -> CheckResult:
    table = dict(CHECKS)
    if name not in table:
        raise KeyError(f"unknown gradient check {name!r}")
    md = max(2, min(int(max_dim), 8))
    start = time.perf_counter()
    err = table[name](seed, md)
    return CheckResult(name, err, err < tol, time.perf_counter() - start)


def run_all(seed: int = DEFAULT_SEED, max_dim: int = DEFAULT_MAX_DIM,
            tol: float = DEFAULT_TOL) -> list[CheckResult]:
    return [run_check(name, seed, max_dim, tol) for name in CHECK_NAMES]
