"""Training loop, cyclical learning rate, Adam, and a synthetic corpus.

The schedule is the triangular2 cyclical policy: within each cycle the
rate rises linearly from lr_min to the cycle peak over the first half
and falls back over the second, and the peak amplitude halves every
cycle. Adam uses decoupled weight decay applied to every parameter.
"""
from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import features
from .autograd import GradTape, Tensor
from .errors import ConfigError, NumericError
from .evaluation import Trial
from .network import SpeakerEmbeddingModel, format_config_value


@dataclass
class TrainConfig:
    lr_min: float = 1e-8
    lr_max: float = 1e-3
    cycle_len_iters: int = 130_000
    cycles: int = 4
    batch_size: int = 64
    weight_decay: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    crop_frames: int = 300
    log_every: int = 10

    def __post_init__(self):
        if self.lr_min <= 0 or self.lr_max < self.lr_min:
            raise ConfigError("need 0 < lr_min <= lr_max")
        for field in ("cycle_len_iters", "cycles", "batch_size", "crop_frames",
                      "log_every"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0 or self.weight_decay < 0:
            raise ConfigError("adam_eps must be > 0 and weight_decay >= 0")

    @property
    def total_iters(self) -> int:
        return self.cycles * self.cycle_len_iters


def desk_train_config(**overrides) -> TrainConfig:
    base = dict(cycle_len_iters=500, cycles=2, batch_size=16)
    base.update(overrides)
    return TrainConfig(**base)


def train_config_echo(cfg: TrainConfig, prefix: str = "train.") -> dict[str, str]:
    return {prefix + f.name: format_config_value(getattr(cfg, f.name))
            for f in dataclass_fields(cfg)}


def triangular2_lr(iteration: int, cfg: TrainConfig) -> float:
    """Learning rate at a given 0-based iteration.

    Piecewise linear and continuous inside each cycle, equal to lr_min
    at every cycle boundary; the peak of cycle n is
    lr_min + (lr_max - lr_min) / 2**n.
    """
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    cycle, pos = divmod(iteration, cfg.cycle_len_iters)
    peak = cfg.lr_min + (cfg.lr_max - cfg.lr_min) / (2.0 ** cycle)
    half = cfg.cycle_len_iters / 2.0
    frac = pos / half if pos <= half else (cfg.cycle_len_iters - pos) / half
    return cfg.lr_min + (peak - cfg.lr_min) * frac


def adam_step(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, cfg: TrainConfig) -> np.ndarray:
    """One Adam update with decoupled weight decay, in place.

    m and v are updated in place; the returned array is the new value.
    t is the 1-based step counter.
    """
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    step = lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return value - step - lr * cfg.weight_decay * value


class AdamOptimizer:
    """Adam over named parameters, with per-parameter first/second moments."""

    def __init__(self, params: list[tuple[str, Tensor]], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for name, p in params
        }

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params:
            if p.grad is None:
                grad = np.zeros_like(p.data)
            else:
                if p.grad.shape != p.data.shape:
                    raise NumericError(f"{name}: gradient shape mismatch")
                grad = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.moments[name]
            p.data = adam_step(p.data, grad, m, v, self.t, lr, self.cfg)
            p.grad = None


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class Utterance:
    utt_id: str
    speaker: int
    coeffs: np.ndarray


@dataclass
class SyntheticCorpus:
    """Deterministic toy corpus of feature matrices.

    Speaker identity is carried by time-varying structure: each speaker
    has a per-row oscillation amplitude vector and a characteristic
    rate. Constant components (the speaker mean and the per-utterance
    offset) are deliberately uninformative, since downstream mean
    subtraction removes anything constant over time. Both noise terms
    scale with noise_scale, so zero noise makes all utterances of a
    speaker identical.
    """

    num_speakers: int
    utts_per_speaker: int
    speaker_means: np.ndarray
    speaker_amps: np.ndarray
    speaker_rates: np.ndarray
    noise_scale: float
    utterances: list[Utterance]

    def speakers(self) -> list[int]:
        return list(range(self.num_speakers))


JITTER_FRACTION = 0.1
AMPLITUDE_FLOOR = 0.5


def make_synthetic_corpus(num_speakers: int, utts_per_speaker: int,
                          num_frames: int, seed: int, feat_dim: int = 80,
                          noise_scale: float = 0.25) -> SyntheticCorpus:
    if num_speakers < 2:
        raise ConfigError(f"need at least 2 speakers, got {num_speakers}")
    if utts_per_speaker < 1 or num_frames < 1:
        raise ConfigError("utts_per_speaker and num_frames must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(num_speakers, feat_dim))
    amps = AMPLITUDE_FLOOR + np.abs(rng.normal(0.0, 1.0, size=(num_speakers, feat_dim)))
    rates = rng.uniform(0.2 * np.pi, 0.8 * np.pi, size=num_speakers)
    jitter = JITTER_FRACTION * noise_scale
    t = np.arange(num_frames, dtype=np.float64)
    utts: list[Utterance] = []
    for spk in range(num_speakers):
        # shared across the speaker's utterances; random crop starts
        # downstream expose every phase of it during training
        signature = amps[spk][:, None] * np.cos(rates[spk] * t)[None, :]
        for u in range(utts_per_speaker):
            offset = means[spk] + noise_scale * rng.normal(0.0, 1.0, size=feat_dim)
            frames = np.tile(offset[:, None], (1, num_frames)) + signature
            frames += jitter * rng.normal(0.0, 1.0, size=(feat_dim, num_frames))
            utts.append(Utterance(f"spk{spk:03d}/utt{u:03d}", spk, frames))
    return SyntheticCorpus(num_speakers, utts_per_speaker, means, amps, rates,
                           noise_scale, utts)


def split_corpus(corpus: SyntheticCorpus, holdout_per_speaker: int
                 ) -> tuple[list[Utterance], list[Utterance]]:
    """Last holdout_per_speaker utterances of each speaker become eval data."""
    if holdout_per_speaker < 0 or holdout_per_speaker >= corpus.utts_per_speaker:
        raise ConfigError(
            f"holdout must be in [0, {corpus.utts_per_speaker}), got {holdout_per_speaker}"
        )
    cut = corpus.utts_per_speaker - holdout_per_speaker
    train, held = [], []
    for utt in corpus.utterances:
        idx = int(utt.utt_id.rsplit("utt", 1)[1])
        (train if idx < cut else held).append(utt)
    return train, held


def make_trials(held: list[Utterance], num_trials: int, seed: int) -> list[Trial]:
    """Balanced ordered enroll/test pairs over held-out utterances."""
    by_speaker: dict[int, list[Utterance]] = {}
    for utt in held:
        by_speaker.setdefault(utt.speaker, []).append(utt)
    speakers = sorted(by_speaker)
    if len(speakers) < 2 or any(len(v) < 2 for v in by_speaker.values()):
        raise ConfigError("need >= 2 speakers with >= 2 held-out utterances each")
    rng = np.random.default_rng(seed)
    half = num_trials // 2
    trials: list[Trial] = []
    seen = set()
    while len(trials) < half:
        spk = speakers[rng.integers(len(speakers))]
        pair = rng.choice(len(by_speaker[spk]), size=2, replace=False)
        key = (spk, int(pair[0]), spk, int(pair[1]))
        if key in seen:
            continue
        seen.add(key)
        trials.append(Trial(by_speaker[spk][pair[0]].utt_id,
                            by_speaker[spk][pair[1]].utt_id, True))
    while len(trials) < num_trials:
        a, b = rng.choice(len(speakers), size=2, replace=False)
        ua = int(rng.integers(len(by_speaker[speakers[a]])))
        ub = int(rng.integers(len(by_speaker[speakers[b]])))
        key = (speakers[a], ua, speakers[b], ub)
        if key in seen:
            continue
        seen.add(key)
        trials.append(Trial(by_speaker[speakers[a]][ua].utt_id,
                            by_speaker[speakers[b]][ub].utt_id, False))
    return trials


# ---------------------------------------------------------------------------
# the loop

@dataclass
class TraceRow:
    iteration: int
    lr: float
    loss: float
    penalty: float

    def line(self) -> str:
        return f"{self.iteration}\t{self.lr!r}\t{self.loss!r}\t{self.penalty!r}"


@dataclass
class TrainResult:
    trace: list[TraceRow]
    checkpoints: list[Path]
    final_loss: float


def _prepare(utts: list[Utterance]) -> tuple[list[np.ndarray], np.ndarray]:
    mats = [features.cepstral_mean_subtract(u.coeffs) for u in utts]
    labels = np.array([u.speaker for u in utts], dtype=np.int64)
    return mats, labels


def train(model: SpeakerEmbeddingModel, utts: list[Utterance], cfg: TrainConfig,
          checkpoint_dir: str | Path | None = None,
          trace_path: str | Path | None = None,
          header_extra: dict[str, str] | None = None) -> TrainResult:
    """Run the full cyclical schedule over a prepared utterance list.

    Every iteration samples a batch uniformly with the seeded generator,
    crops each normalized feature matrix, and takes one Adam step on the
    combined objective. A trace row is kept every log_every iterations
    and a checkpoint is written at each cycle boundary. A non-finite
    loss aborts with the earliest offending tensor named.
    """
    if not utts:
        raise ConfigError("empty training utterance list")
    speakers = {u.speaker for u in utts}
    if max(speakers) >= model.cfg.num_speakers:
        raise ConfigError(
            f"corpus has speaker index {max(speakers)} but the model "
            f"was built for {model.cfg.num_speakers} classes"
        )
    mats, labels = _prepare(utts)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamOptimizer(model.params(), cfg)
    dtype = model.cfg.np_dtype
    trace: list[TraceRow] = []
    checkpoints: list[Path] = []
    trace_file = None
    if trace_path is not None:
        trace_path = Path(trace_path)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace_file = open(trace_path, "w", encoding="utf-8")
    last_loss = float("nan")
    try:
        for it in range(cfg.total_iters):
            lr = triangular2_lr(it, cfg)
            idx = rng.integers(0, len(mats), size=cfg.batch_size)
            batch = np.stack([
                features.crop_to_frames(mats[j], cfg.crop_frames, rng) for j in idx
            ]).astype(dtype)
            targets = labels[idx]
            with GradTape() as tape:
                total, _, penalty = model.training_loss(Tensor(batch), targets)
                loss_val = total.item()
                if not np.isfinite(loss_val):
                    where = tape.first_nonfinite() or "loss"
                    raise NumericError(
                        f"non-finite loss at iteration {it}; first bad tensor: {where}"
                    )
                tape.backward(total)
            opt.step(lr)
            last_loss = loss_val
            if it % cfg.log_every == 0:
                row = TraceRow(it, lr, loss_val, penalty.item())
                trace.append(row)
                if trace_file:
                    trace_file.write(row.line() + "\n")
            if checkpoint_dir is not None and (it + 1) % cfg.cycle_len_iters == 0:
                cycle = (it + 1) // cfg.cycle_len_iters
                path = Path(checkpoint_dir) / f"cycle{cycle:02d}.ckpt"
                path.parent.mkdir(parents=True, exist_ok=True)
                model.save_checkpoint(path, iteration=it + 1, extra=header_extra)
                checkpoints.append(path)
    finally:
        if trace_file:
            trace_file.close()
    if checkpoint_dir is not None:
        final = Path(checkpoint_dir) / "final.ckpt"
        model.save_checkpoint(final, iteration=cfg.total_iters, extra=header_extra)
        checkpoints.append(final)
    return TrainResult(trace, checkpoints, last_loss)
