"""Frame-level speaker embedding network.

Topology: an initial dilation-1 convolution, a stack of
squeeze-excitation Res2 blocks with dense residual inputs (each block
consumes the sum of the initial map and every earlier block output), a
transformer-style encoder branch over the summed block outputs, and a
multi-feature concatenation of all block outputs plus the encoder
output, reduced by a 1x1 convolution to the pooling width.

Feature maps are [C, T] per utterance or [B, C, T] batched; the encoder
internally works time-major as [B, T, C].
"""
from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import autograd as ag
from . import tensorio
from .autograd import Tensor
from .errors import ConfigError, DataError, DimensionError
from .losses import ClassifierHead
from .pooling import AttentionHead, attention_scores, pool

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5


@dataclass
class NetworkConfig:
    """Topology and objective hyperparameters.

    Defaults are the full-scale recipe; desk_config() shrinks the model
    for fast CPU experiments.
    """

    feat_dim: int = 80
    channels: int = 512
    initial_kernel: int = 5
    block_kernels: tuple[int, ...] = (3, 3, 3)
    block_dilations: tuple[int, ...] = (2, 3, 4)
    res2_scale: int = 8
    se_bottleneck: int = 128
    encoder_branch: bool = True
    encoder_layers: int = 1
    encoder_heads: int = 8
    encoder_ffn_dim: int = 2048
    positional_encoding: bool = False
    encoder_input: str = "block_sum"
    pre_pooling_dim: int = 1536
    pooling_heads: int = 2
    pooling_bottleneck: int = 128
    embedding_dim: int = 192
    num_speakers: int = 8
    aam_margin: float = 0.2
    aam_scale: float = 30.0
    diversity_margin: float = 1.0
    diversity_coeff: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if len(self.block_kernels) != len(self.block_dilations):
            raise ConfigError(
                f"{len(self.block_kernels)} kernels vs "
                f"{len(self.block_dilations)} dilations"
            )
        if not self.block_kernels:
            raise ConfigError("need at least one block")
        for field in ("feat_dim", "channels", "initial_kernel", "res2_scale",
                      "se_bottleneck", "encoder_layers", "encoder_heads",
                      "encoder_ffn_dim", "pre_pooling_dim", "pooling_heads",
                      "pooling_bottleneck", "embedding_dim", "num_speakers"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")
        for k in (self.initial_kernel,) + tuple(self.block_kernels):
            if k % 2 != 1:
                raise ConfigError(f"kernel widths must be odd, got {k}")
        for d in self.block_dilations:
            if d < 1:
                raise ConfigError(f"dilations must be >= 1, got {d}")
        if self.channels % self.res2_scale != 0:
            raise ConfigError(
                f"channels={self.channels} not divisible by res2_scale={self.res2_scale}"
            )
        if self.channels % self.encoder_heads != 0:
            raise ConfigError(
                f"channels={self.channels} not divisible by encoder_heads={self.encoder_heads}"
            )
        if self.encoder_input not in ("block_sum", "initial"):
            raise ConfigError(f"encoder_input must be block_sum or initial, got {self.encoder_input!r}")
        if self.aam_margin < 0 or self.aam_scale <= 0:
            raise ConfigError("aam_margin must be >= 0 and aam_scale > 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.encoder_heads

    @property
    def num_blocks(self) -> int:
        return len(self.block_kernels)

    @property
    def pooled_dim(self) -> int:
        return 2 * self.pooling_heads * self.pre_pooling_dim

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def desk_config(**overrides) -> NetworkConfig:
    """Reduced-width configuration for CPU-scale runs.

    Single precision here roughly halves step time on one core; the
    full-width default stays float64 for exact numeric checks.
    """
    base = dict(channels=128, se_bottleneck=64, encoder_ffn_dim=256,
                pre_pooling_dim=256, pooling_bottleneck=64, dtype="float32")
    base.update(overrides)
    return NetworkConfig(**base)


def format_config_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_value(typ, text: str):
    """Parse a config field from its echoed text form."""
    text = text.strip()
    origin = typing.get_origin(typ)
    if origin is tuple:
        if not text:
            return ()
        return tuple(int(part) for part in text.split(","))
    if typ is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    if typ is str:
        return text
    raise ConfigError(f"unsupported config field type {typ}")


def config_echo(cfg: NetworkConfig, prefix: str = "net.") -> dict[str, str]:
    return {prefix + f.name: format_config_value(getattr(cfg, f.name))
            for f in dataclass_fields(cfg)}


def config_from_echo(header: dict[str, str], prefix: str = "net.") -> NetworkConfig:
    hints = typing.get_type_hints(NetworkConfig)
    kwargs = {}
    for f in dataclass_fields(NetworkConfig):
        key = prefix + f.name
        if key in header:
            kwargs[f.name] = parse_config_value(hints[f.name], header[key])
    return NetworkConfig(**kwargs)


def topology_hash(cfg: NetworkConfig) -> str:
    echo = config_echo(cfg, prefix="")
    text = "\n".join(f"{k}={echo[k]}" for k in sorted(echo))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# layers

def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True, name=name)


class Conv1dLayer:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int,
                 rng, dtype, name: str):
        fan_in = in_ch * kernel
        self.w = _uniform(rng, (out_ch, in_ch, kernel), fan_in, dtype, f"{name}.w")
        self.b = _uniform(rng, (out_ch,), fan_in, dtype, f"{name}.b")
        self.dilation = dilation
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.w, self.b, dilation=self.dilation)

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Linear:
    def __init__(self, in_features: int, out_features: int, rng, dtype, name: str):
        self.w = _uniform(rng, (in_features, out_features), in_features, dtype, f"{name}.w")
        self.b = _uniform(rng, (out_features,), in_features, dtype, f"{name}.b")
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.w) + self.b

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class BatchNorm1d:
    """Per-channel normalization over batch and time.

    Training mode normalizes with current batch statistics and updates
    running buffers; eval mode applies the stored running statistics.
    """

    def __init__(self, channels: int, rng, dtype, name: str,
                 eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True,
                            name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True,
                           name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self.channels = channels
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise DimensionError(
                f"{self.name}: expected [B, {self.channels}, T], got {x.shape}"
            )
        c = self.channels
        if training:
            m = ag.mean(x, axis=(0, 2), keepdims=True)
            centered = x - m
            v = ag.mean(centered * centered, axis=(0, 2), keepdims=True)
            mom = self.momentum
            self.running_mean = (1.0 - mom) * self.running_mean + mom * m.data.reshape(c)
            self.running_var = (1.0 - mom) * self.running_var + mom * v.data.reshape(c)
            xhat = centered / ag.sqrt(v + self.eps)
        else:
            m = Tensor(self.running_mean.reshape(1, c, 1))
            v = Tensor(self.running_var.reshape(1, c, 1))
            xhat = (x - m) / ag.sqrt(v + self.eps)
        gamma = ag.reshape(self.gamma, (1, c, 1))
        beta = ag.reshape(self.beta, (1, c, 1))
        return gamma * xhat + beta

    def params(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]

    def buffers(self):
        return [(f"{self.name}.running_mean", self, "running_mean"),
                (f"{self.name}.running_var", self, "running_var")]


class LayerNorm:
    def __init__(self, dim: int, rng, dtype, name: str, eps: float = LN_EPS):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True,
                            name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True,
                           name=f"{name}.beta")
        self.eps = eps
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        m = ag.mean(x, axis=-1, keepdims=True)
        centered = x - m
        v = ag.mean(centered * centered, axis=-1, keepdims=True)
        return self.gamma * (centered / ag.sqrt(v + self.eps)) + self.beta

    def params(self):
        return [(f"{self.name}.gamma", self.gamma), (f"{self.name}.beta", self.beta)]


class SEBlock:
    """Squeeze-excitation gate: per-channel sigmoid scales from time means."""

    def __init__(self, channels: int, bottleneck: int, rng, dtype, name: str):
        self.lin1 = Linear(channels, bottleneck, rng, dtype, f"{name}.lin1")
        self.lin2 = Linear(bottleneck, channels, rng, dtype, f"{name}.lin2")
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = ag.mean_over_time(x)
        gate = ag.sigmoid(self.lin2(ag.relu(self.lin1(squeeze))))
        gate = ag.reshape(gate, gate.shape + (1,))
        return x * gate

    def params(self):
        return self.lin1.params() + self.lin2.params()


class Res2DilatedConv:
    """Hierarchical grouped dilated convolution.

    Channels split into `scale` groups of equal width. Group 1 passes
    through; every later group is convolved after adding the previous
    group's output, then all outputs are re-concatenated. scale=1
    degenerates to a single dilated convolution over all channels.
    """

    def __init__(self, channels: int, scale: int, kernel: int, dilation: int,
                 rng, dtype, name: str):
        if channels % scale != 0:
            raise ConfigError(f"{name}: channels={channels} not divisible by scale={scale}")
        self.scale = scale
        self.channels = channels
        self.width = channels // scale
        if scale == 1:
            self.convs = [Conv1dLayer(channels, channels, kernel, dilation, rng, dtype,
                                      f"{name}.convs.0")]
        else:
            self.convs = [Conv1dLayer(self.width, self.width, kernel, dilation, rng, dtype,
                                      f"{name}.convs.{i}") for i in range(scale - 1)]
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.channels:
            raise DimensionError(
                f"{self.name}: expected {self.channels} channels, got {x.shape[-2]}"
            )
        if self.scale == 1:
            return self.convs[0](x)
        w = self.width
        groups = [ag.slice_along(x, -2, i * w, (i + 1) * w) for i in range(self.scale)]
        outs = [groups[0]]
        for i in range(1, self.scale):
            outs.append(self.convs[i - 1](groups[i] + outs[i - 1]))
        return ag.concat(outs, axis=-2)

    def params(self):
        out = []
        for conv in self.convs:
            out.extend(conv.params())
        return out


class SERes2Block:
    """1x1 conv, multi-scale dilated conv, 1x1 conv, then an SE gate.

    Each stage is followed by ReLU and batch normalization. There is no
    internal skip; residual wiring happens outside via dense summation.
    """

    def __init__(self, channels: int, kernel: int, dilation: int, scale: int,
                 se_bottleneck: int, rng, dtype, name: str):
        self.conv1 = Conv1dLayer(channels, channels, 1, 1, rng, dtype, f"{name}.conv1")
        self.bn1 = BatchNorm1d(channels, rng, dtype, f"{name}.bn1")
        self.res2 = Res2DilatedConv(channels, scale, kernel, dilation, rng, dtype,
                                    f"{name}.res2")
        self.bn2 = BatchNorm1d(channels, rng, dtype, f"{name}.bn2")
        self.conv2 = Conv1dLayer(channels, channels, 1, 1, rng, dtype, f"{name}.conv2")
        self.bn3 = BatchNorm1d(channels, rng, dtype, f"{name}.bn3")
        self.se = SEBlock(channels, se_bottleneck, rng, dtype, f"{name}.se")
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.bn1(ag.relu(self.conv1(x)), training)
        h = self.bn2(ag.relu(self.res2(h)), training)
        h = self.bn3(ag.relu(self.conv2(h)), training)
        return self.se(h)

    def params(self):
        out = []
        for part in (self.conv1, self.bn1, self.res2, self.bn2, self.conv2,
                     self.bn3, self.se):
            out.extend(part.params())
        return out

    def buffers(self):
        return self.bn1.buffers() + self.bn2.buffers() + self.bn3.buffers()


def multi_head_attention(x: Tensor, qkv, out_w: Tensor, out_b: Tensor,
                         head_dim: int) -> tuple[Tensor, list[Tensor]]:
    """Scaled dot-product self attention over [B, T, C] input.

    qkv is a list of per-head (wq, bq, wk, bk, wv, bv) tuples projecting
    C to head_dim. Returns the projected concatenation and the per-head
    attention weights, each [B, T, T] with rows summing to one.
    """
    scale = 1.0 / np.sqrt(head_dim)
    outs, weights = [], []
    for wq, bq, wk, bk, wv, bv in qkv:
        q = ag.matmul(x, wq) + bq
        k = ag.matmul(x, wk) + bk
        v = ag.matmul(x, wv) + bv
        scores = ag.matmul(q, ag.swap_trailing(k)) * scale
        attn = ag.softmax(scores, axis=-1)
        weights.append(attn)
        outs.append(ag.matmul(attn, v))
    joined = outs[0] if len(outs) == 1 else ag.concat(outs, axis=-1)
    return ag.matmul(joined, out_w) + out_b, weights


class EncoderLayer:
    """Transformer encoder layer: self attention and a position-wise FFN,
    each wrapped in a residual connection and layer normalization."""

    def __init__(self, channels: int, heads: int, ffn_dim: int, rng, dtype, name: str):
        if channels % heads != 0:
            raise ConfigError(f"{name}: channels={channels} not divisible by heads={heads}")
        self.head_dim = channels // heads
        self.heads = heads
        self.qkv = []
        self._qkv_names = []
        for h in range(heads):
            group = []
            for part in ("wq", "bq", "wk", "bk", "wv", "bv"):
                shape = (channels, self.head_dim) if part.startswith("w") else (self.head_dim,)
                t = _uniform(rng, shape, channels, dtype, f"{name}.heads.{h}.{part}")
                group.append(t)
                self._qkv_names.append((f"{name}.heads.{h}.{part}", t))
            self.qkv.append(tuple(group))
        self.out_w = _uniform(rng, (channels, channels), channels, dtype, f"{name}.out_w")
        self.out_b = _uniform(rng, (channels,), channels, dtype, f"{name}.out_b")
        self.ln1 = LayerNorm(channels, rng, dtype, f"{name}.ln1")
        self.ffn1 = Linear(channels, ffn_dim, rng, dtype, f"{name}.ffn1")
        self.ffn2 = Linear(ffn_dim, channels, rng, dtype, f"{name}.ffn2")
        self.ln2 = LayerNorm(channels, rng, dtype, f"{name}.ln2")
        self.name = name

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        attn, _ = multi_head_attention(x, self.qkv, self.out_w, self.out_b, self.head_dim)
        h = self.ln1(x + attn)
        f = self.ffn2(ag.relu(self.ffn1(h)))
        return self.ln2(h + f)

    def attention_weights(self, x: Tensor) -> list[Tensor]:
        _, weights = multi_head_attention(x, self.qkv, self.out_w, self.out_b,
                                          self.head_dim)
        return weights

    def params(self):
        out = list(self._qkv_names)
        out.append((f"{self.name}.out_w", self.out_w))
        out.append((f"{self.name}.out_b", self.out_b))
        for part in (self.ln1, self.ffn1, self.ffn2, self.ln2):
            out.extend(part.params())
        return out


def sinusoidal_encoding(num_frames: int, channels: int, dtype=np.float64) -> np.ndarray:
    """Standard fixed sin/cos position table, [T, C]."""
    pos = np.arange(num_frames, dtype=np.float64)[:, None]
    idx = np.arange(channels, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(idx / 2.0)) / channels)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def dense_residual_input(outputs: list[Tensor]) -> Tensor:
    """Elementwise sum of earlier layer outputs, in fixed index order."""
    if not outputs:
        raise DimensionError("dense residual needs at least one map")
    first = outputs[0]
    for t in outputs[1:]:
        if t.shape != first.shape:
            raise DimensionError(f"residual maps disagree: {t.shape} vs {first.shape}")
    total = outputs[0]
    for t in outputs[1:]:
        total = total + t
    return total


def aggregate_branches(se_map: Tensor, encoder_map: Tensor) -> Tensor:
    """Channel concatenation of the two branch outputs, SE branch first."""
    if se_map.shape != encoder_map.shape:
        raise DimensionError(
            f"branch maps must agree in every axis: {se_map.shape} vs {encoder_map.shape}"
        )
    return ag.concat_channels(se_map, encoder_map)


class SpeakerEmbeddingModel:
    """Frame-level network, pooling heads, embedding layer and classifier."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        self.cfg = cfg
        self.init_seed = int(seed)
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        c = cfg.channels
        self.initial = Conv1dLayer(cfg.feat_dim, c, cfg.initial_kernel, 1, rng, dtype,
                                   "initial.conv")
        self.initial_bn = BatchNorm1d(c, rng, dtype, "initial.bn")
        self.blocks = [
            SERes2Block(c, k, d, cfg.res2_scale, cfg.se_bottleneck, rng, dtype,
                        f"blocks.{i}")
            for i, (k, d) in enumerate(zip(cfg.block_kernels, cfg.block_dilations))
        ]
        self.encoder = []
        if cfg.encoder_branch:
            self.encoder = [
                EncoderLayer(c, cfg.encoder_heads, cfg.encoder_ffn_dim, rng, dtype,
                             f"encoder.{i}")
                for i in range(cfg.encoder_layers)
            ]
        mfa_in = c * (cfg.num_blocks + (1 if cfg.encoder_branch else 0))
        self.mfa = Conv1dLayer(mfa_in, cfg.pre_pooling_dim, 1, 1, rng, dtype, "mfa.conv")
        self.pool_heads = [
            AttentionHead(cfg.pre_pooling_dim, cfg.pooling_bottleneck, rng, dtype,
                          f"pool.{i}")
            for i in range(cfg.pooling_heads)
        ]
        self.embed_layer = Linear(cfg.pooled_dim, cfg.embedding_dim, rng, dtype, "embed")
        self.classifier = ClassifierHead(cfg.num_speakers, cfg.embedding_dim,
                                         cfg.aam_margin, cfg.aam_scale, rng, dtype)

    # ------------------------------------------------------------------ forward

    def frame_level(self, x: Tensor, training: bool = False) -> Tensor:
        """Frame-level pooling input: [.., feat_dim, T] to [.., C', T]."""
        if x.ndim not in (2, 3):
            raise DimensionError(f"input must be [F, T] or [B, F, T], got {x.shape}")
        if x.shape[-2] != self.cfg.feat_dim:
            raise DimensionError(
                f"input feature axis is {x.shape[-2]}, model expects {self.cfg.feat_dim}"
            )
        squeeze = x.ndim == 2
        if squeeze:
            x = ag.reshape(x, (1,) + x.shape)
        h0 = self.initial_bn(ag.relu(self.initial(x)), training)
        block_outs: list[Tensor] = []
        for block in self.blocks:
            inp = h0 if not block_outs else dense_residual_input([h0] + block_outs)
            block_outs.append(block(inp, training))
        cat = list(block_outs)
        if self.encoder:
            if self.cfg.encoder_input == "block_sum":
                branch_in = dense_residual_input(block_outs)
            else:
                branch_in = h0
            enc = ag.swap_trailing(branch_in)
            if self.cfg.positional_encoding:
                enc = enc + Tensor(sinusoidal_encoding(enc.shape[-2], enc.shape[-1],
                                                       self.cfg.np_dtype))
            for layer in self.encoder:
                enc = layer(enc, training)
            cat.append(ag.swap_trailing(enc))
        joined = cat[0]
        for part in cat[1:]:
            joined = ag.concat_channels(joined, part)
        out = ag.relu(self.mfa(joined))
        return ag.reshape(out, out.shape[1:]) if squeeze else out

    def pooled_and_maps(self, feats: Tensor) -> tuple[Tensor, list[Tensor]]:
        maps = [attention_scores(feats, head) for head in self.pool_heads]
        return pool(feats, self.pool_heads, maps=maps), maps

    def embed_batch(self, x: Tensor, training: bool = False) -> Tensor:
        feats = self.frame_level(x, training)
        if feats.ndim == 2:
            feats = ag.reshape(feats, (1,) + feats.shape)
        pooled, _ = self.pooled_and_maps(feats)
        return self.embed_layer(pooled)

    def embed(self, coeffs: np.ndarray) -> np.ndarray:
        """Eval-mode embedding of one utterance, [feat_dim, T] to [E]."""
        x = Tensor(np.asarray(coeffs, dtype=self.cfg.np_dtype))
        return self.embed_batch(x, training=False).data[0].copy()

    def training_loss(self, x: Tensor, targets) -> tuple[Tensor, Tensor, Tensor]:
        """Batch objective: (total, cross entropy, mean diversity penalty)."""
        from .losses import aam_logits, cross_entropy
        from .pooling import diversity_penalty

        feats = self.frame_level(x, training=True)
        if feats.ndim == 2:
            feats = ag.reshape(feats, (1,) + feats.shape)
        pooled, maps = self.pooled_and_maps(feats)
        embedding = self.embed_layer(pooled)
        logits = aam_logits(embedding, self.classifier, targets)
        ce = cross_entropy(logits, targets)
        pen = diversity_penalty(maps, self.cfg.diversity_margin, self.cfg.diversity_coeff)
        pen_mean = ag.mean(pen) if pen.ndim > 0 else pen
        return ce + pen_mean, ce, pen_mean

    # ------------------------------------------------------------------ state

    def params(self) -> list[tuple[str, Tensor]]:
        out = self.initial.params() + self.initial_bn.params()
        for block in self.blocks:
            out.extend(block.params())
        for layer in self.encoder:
            out.extend(layer.params())
        out.extend(self.mfa.params())
        for head in self.pool_heads:
            out.extend(head.params())
        out.extend(self.embed_layer.params())
        out.extend(self.classifier.params())
        return out

    def buffers(self):
        out = self.initial_bn.buffers()
        for block in self.blocks:
            out.extend(block.buffers())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.params()}
        for name, holder, attr in self.buffers():
            state[name] = np.array(getattr(holder, attr))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        dtype = self.cfg.np_dtype
        expected = {name for name, _ in self.params()}
        expected |= {name for name, _, _ in self.buffers()}
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise DataError(
                f"state does not match topology: missing {sorted(missing)[:4]}, "
                f"unexpected {sorted(extra)[:4]}"
            )
        for name, t in self.params():
            arr = np.asarray(state[name], dtype=dtype)
            if arr.shape != t.data.shape:
                raise DataError(f"{name}: stored shape {arr.shape} != {t.data.shape}")
            t.data = arr
        for name, holder, attr in self.buffers():
            arr = np.asarray(state[name], dtype=dtype)
            setattr(holder, attr, arr)

    def header(self, iteration: int = 0, extra: dict[str, str] | None = None) -> dict[str, str]:
        head = {"topology_hash": topology_hash(self.cfg),
                "seed": str(self.init_seed),
                "iteration": str(iteration)}
        head.update(config_echo(self.cfg))
        if extra:
            head.update(extra)
        return head

    def save_checkpoint(self, path, iteration: int = 0,
                        extra: dict[str, str] | None = None) -> None:
        tensorio.save_checkpoint(path, self.state_dict(), self.header(iteration, extra))


def model_from_checkpoint(path) -> tuple[SpeakerEmbeddingModel, dict[str, str]]:
    """Rebuild a model from its own checkpoint header and stored tensors."""
    tensors, header = tensorio.load_checkpoint(path)
    cfg = config_from_echo(header)
    stored = header.get("topology_hash")
    if stored and stored != topology_hash(cfg):
        raise DataError(f"{path}: topology hash does not match its config echo")
    model = SpeakerEmbeddingModel(cfg, seed=int(header.get("seed", "0")))
    model.load_state_dict(tensors)
    return model, header
