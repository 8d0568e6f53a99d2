"""Schedule, optimizer, synthetic corpus, and training loop tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkfuse.errors import ConfigError, NumericError
from spkfuse.network import SpeakerEmbeddingModel
from spkfuse.training import (
    AdamOptimizer,
    TraceRow,
    TrainConfig,
    adam_step,
    desk_train_config,
    make_synthetic_corpus,
    make_trials,
    split_corpus,
    train,
    train_config_echo,
    triangular2_lr,
)
from spkfuse.autograd import Tensor
from tests.conftest import tiny_config


# ---------------------------------------------------------------------------
# cyclical schedule

def test_schedule_frozen_default_values():
    cfg = TrainConfig()
    assert triangular2_lr(0, cfg) == 1e-8
    # peak of cycle 0 is lr_max itself
    assert abs(triangular2_lr(65_000, cfg) - 1e-3) < 1e-12
    # peak of cycle 1 is lr_min + (lr_max - lr_min) / 2
    assert abs(triangular2_lr(195_000, cfg) - 5.00005e-4) < 1e-12
    # every cycle boundary returns to the floor
    for boundary in (130_000, 260_000, 390_000):
        assert triangular2_lr(boundary, cfg) == 1e-8


def test_schedule_frozen_small_cycle():
    cfg = TrainConfig(lr_min=0.1, lr_max=0.5, cycle_len_iters=4, cycles=3)
    got = [triangular2_lr(i, cfg) for i in range(9)]
    expect = [0.1, 0.3, 0.5, 0.3, 0.1, 0.2, 0.3, 0.2, 0.1]
    assert np.allclose(got, expect, atol=1e-15)


def test_schedule_rejects_negative_iteration():
    with pytest.raises(ConfigError):
        triangular2_lr(-1, TrainConfig())


def test_schedule_linear_rise():
    cfg = TrainConfig()
    half = cfg.cycle_len_iters // 2
    span = cfg.lr_max - cfg.lr_min
    for it in (1, 7, 1000):
        expect = cfg.lr_min + span * it / half
        assert abs(triangular2_lr(it, cfg) - expect) < 1e-18


lr_iters = st.integers(0, 1_000_000)


@settings(deadline=None)
@given(iteration=lr_iters)
def test_schedule_bounded_and_positive(iteration):
    cfg = TrainConfig()
    lr = triangular2_lr(iteration, cfg)
    assert cfg.lr_min <= lr <= cfg.lr_max


@settings(deadline=None, max_examples=30)
@given(pos=st.integers(0, 129_999))
def test_schedule_symmetric_within_cycle(pos):
    cfg = TrainConfig()
    mirrored = cfg.cycle_len_iters - pos
    if mirrored == cfg.cycle_len_iters:
        return
    assert np.isclose(triangular2_lr(pos, cfg), triangular2_lr(mirrored, cfg),
                      atol=1e-18)


# ---------------------------------------------------------------------------
# optimizer

def test_train_config_validation():
    for bad in (
        dict(lr_min=0.0),
        dict(lr_min=1e-3, lr_max=1e-4),
        dict(batch_size=0),
        dict(cycle_len_iters=0),
        dict(beta1=1.0),
        dict(beta2=-0.1),
        dict(adam_eps=0.0),
        dict(weight_decay=-1e-4),
    ):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_adam_three_steps_match_hand_rolled():
    cfg = TrainConfig(weight_decay=0.01, lr_min=1e-4, lr_max=1e-2)
    value = np.array([1.0, -2.0, 0.5])
    grads = [np.array([0.3, -0.1, 0.7]),
             np.array([-0.2, 0.4, 0.0]),
             np.array([0.05, 0.05, -0.9])]
    lr = 1e-2

    # independent reference: textbook bias-corrected Adam plus decoupled decay
    ref = value.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1.0 - 0.9 ** t)
        v_hat = v / (1.0 - 0.999 ** t)
        ref = ref - lr * m_hat / (np.sqrt(v_hat) + 1e-8) - lr * 0.01 * ref

    got = value.copy()
    ms = np.zeros(3)
    vs = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        got = adam_step(got, g, ms, vs, t, lr, cfg)
    assert np.allclose(got, ref, atol=1e-15)


def test_adam_optimizer_matches_adam_step():
    cfg = TrainConfig(weight_decay=2e-4)
    p = Tensor(np.array([0.5, -1.5]), requires_grad=True, name="p")
    opt = AdamOptimizer([("p", p)], cfg)

    expect = p.data.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 4):
        g = np.array([0.1 * t, -0.2])
        p.grad = g.copy()
        opt.step(lr=1e-3)
        expect = adam_step(expect, g, m, v, t, 1e-3, cfg)
        assert np.allclose(p.data, expect, atol=1e-16)
        assert p.grad is None


def test_decoupled_decay_applies_without_gradient():
    cfg = TrainConfig(weight_decay=0.1)
    p = Tensor(np.array([2.0, -4.0]), requires_grad=True, name="p")
    opt = AdamOptimizer([("p", p)], cfg)
    before = p.data.copy()
    p.grad = None
    opt.step(lr=0.5)
    # zero gradient leaves the moment update inert, decay still shrinks
    assert np.allclose(p.data, before * (1.0 - 0.5 * 0.1), atol=1e-15)


def test_optimizer_rejects_gradient_shape_mismatch():
    p = Tensor(np.zeros((2, 3)), requires_grad=True, name="p")
    opt = AdamOptimizer([("p", p)], TrainConfig())
    p.grad = np.zeros((3, 2))
    with pytest.raises(NumericError):
        opt.step(lr=1e-3)


def test_desk_train_config_total_iters():
    cfg = desk_train_config()
    assert cfg.total_iters == 1000
    assert desk_train_config(cycles=3).total_iters == 1500


def test_train_config_echo_prefixes_every_field():
    echo = train_config_echo(TrainConfig())
    assert echo["train.batch_size"] == "64"
    assert echo["train.lr_max"] == "0.001"
    assert all(key.startswith("train.") for key in echo)


# ---------------------------------------------------------------------------
# synthetic corpus

def test_corpus_shapes_and_determinism():
    a = make_synthetic_corpus(3, 4, num_frames=50, seed=9, feat_dim=6)
    b = make_synthetic_corpus(3, 4, num_frames=50, seed=9, feat_dim=6)
    assert len(a.utterances) == 12
    assert a.speaker_means.shape == (3, 6)
    for ua, ub in zip(a.utterances, b.utterances):
        assert ua.utt_id == ub.utt_id
        assert ua.speaker == ub.speaker
        assert np.array_equal(ua.coeffs, ub.coeffs)
        assert ua.coeffs.shape == (6, 50)


def test_corpus_zero_noise_collapses_speakers():
    corpus = make_synthetic_corpus(2, 3, num_frames=10, seed=1, feat_dim=4,
                                   noise_scale=0.0)
    for spk in corpus.speakers():
        utts = [u for u in corpus.utterances if u.speaker == spk]
        wave = np.cos(corpus.speaker_rates[spk] * np.arange(10))
        expect = corpus.speaker_means[spk][:, None] \
            + corpus.speaker_amps[spk][:, None] * wave[None, :]
        for u in utts:
            assert np.array_equal(u.coeffs, expect)


def test_corpus_identity_survives_mean_subtraction():
    # anything constant over time is removed downstream, so same-speaker
    # utterances must stay far closer than cross-speaker ones afterwards
    from spkfuse.features import cepstral_mean_subtract

    corpus = make_synthetic_corpus(4, 2, num_frames=200, seed=11, feat_dim=20)
    normed = [cepstral_mean_subtract(u.coeffs) for u in corpus.utterances]
    same, cross = [], []
    for i, ui in enumerate(corpus.utterances):
        for j in range(i + 1, len(corpus.utterances)):
            dist = np.linalg.norm(normed[i] - normed[j])
            (same if ui.speaker == corpus.utterances[j].speaker else cross).append(dist)
    assert max(same) < min(cross) / 5.0


def test_corpus_noise_separates_utterances():
    corpus = make_synthetic_corpus(2, 3, num_frames=10, seed=1, feat_dim=4,
                                   noise_scale=0.5)
    first, second = corpus.utterances[0], corpus.utterances[1]
    assert not np.array_equal(first.coeffs, second.coeffs)


def test_corpus_validation():
    with pytest.raises(ConfigError):
        make_synthetic_corpus(1, 4, num_frames=10, seed=0)
    with pytest.raises(ConfigError):
        make_synthetic_corpus(2, 0, num_frames=10, seed=0)


def test_split_corpus_counts_and_order():
    corpus = make_synthetic_corpus(3, 5, num_frames=8, seed=2, feat_dim=4)
    train_utts, held = split_corpus(corpus, holdout_per_speaker=2)
    assert len(train_utts) == 9
    assert len(held) == 6
    for utt in held:
        assert int(utt.utt_id.rsplit("utt", 1)[1]) >= 3
    with pytest.raises(ConfigError):
        split_corpus(corpus, holdout_per_speaker=5)
    with pytest.raises(ConfigError):
        split_corpus(corpus, holdout_per_speaker=-1)


def test_make_trials_balanced_and_unique():
    corpus = make_synthetic_corpus(4, 8, num_frames=8, seed=3, feat_dim=4)
    _, held = split_corpus(corpus, holdout_per_speaker=4)
    trials = make_trials(held, num_trials=40, seed=7)
    assert len(trials) == 40
    assert sum(t.is_target for t in trials) == 20
    assert len({(t.enroll, t.test) for t in trials}) == 40
    ids = {u.utt_id: u.speaker for u in held}
    for t in trials:
        assert t.enroll in ids and t.test in ids
        assert t.is_target == (ids[t.enroll] == ids[t.test])


def test_make_trials_needs_enough_speakers():
    corpus = make_synthetic_corpus(2, 4, num_frames=8, seed=3, feat_dim=4)
    _, held = split_corpus(corpus, holdout_per_speaker=1)
    with pytest.raises(ConfigError):
        make_trials(held, num_trials=4, seed=0)


def test_trace_row_round_trips_floats():
    row = TraceRow(17, 1.0 / 3.0, 2.718281828459045, 0.1)
    fields = row.line().split("\t")
    assert fields[0] == "17"
    assert float(fields[1]) == row.lr
    assert float(fields[2]) == row.loss
    assert float(fields[3]) == row.penalty


# ---------------------------------------------------------------------------
# training loop

def _micro_setup(num_speakers=3, seed=0):
    net = tiny_config(num_speakers=num_speakers)
    model = SpeakerEmbeddingModel(net, seed=seed)
    corpus = make_synthetic_corpus(num_speakers, 4, num_frames=30, seed=seed,
                                   feat_dim=net.feat_dim, noise_scale=0.2)
    cfg = TrainConfig(cycle_len_iters=4, cycles=2, batch_size=3,
                      crop_frames=20, log_every=2, seed=seed)
    return model, corpus.utterances, cfg


def test_micro_train_run_writes_artifacts(tmp_path):
    model, utts, cfg = _micro_setup()
    result = train(model, utts, cfg, checkpoint_dir=tmp_path / "ck",
                   trace_path=tmp_path / "trace.tsv")
    assert np.isfinite(result.final_loss)
    assert [row.iteration for row in result.trace] == [0, 2, 4, 6]
    names = [p.name for p in result.checkpoints]
    assert names == ["cycle01.ckpt", "cycle02.ckpt", "final.ckpt"]
    assert all(p.exists() for p in result.checkpoints)
    lines = (tmp_path / "trace.tsv").read_text().strip().split("\n")
    assert len(lines) == 4
    for line, row in zip(lines, result.trace):
        assert line == row.line()


def test_micro_train_deterministic():
    model_a, utts, cfg = _micro_setup()
    model_b = SpeakerEmbeddingModel(tiny_config(num_speakers=3), seed=0)
    res_a = train(model_a, utts, cfg)
    res_b = train(model_b, utts, cfg)
    assert [r.loss for r in res_a.trace] == [r.loss for r in res_b.trace]
    for (_, pa), (_, pb) in zip(model_a.params(), model_b.params()):
        assert np.array_equal(pa.data, pb.data)


def test_train_rejects_out_of_range_speaker():
    model, utts, cfg = _micro_setup(num_speakers=3)
    for u in utts:
        u.speaker += 1
    with pytest.raises(ConfigError):
        train(model, utts, cfg)


def test_train_rejects_empty_corpus():
    model, _, cfg = _micro_setup()
    with pytest.raises(ConfigError):
        train(model, [], cfg)


def test_train_names_first_non_finite_tensor():
    model, utts, cfg = _micro_setup()
    model.initial.w.data[0, 0, 0] = np.nan
    with pytest.raises(NumericError) as err:
        train(model, utts, cfg)
    assert "first bad tensor" in str(err.value)


def test_train_reduces_loss_on_easy_corpus():
    net = tiny_config(num_speakers=3)
    model = SpeakerEmbeddingModel(net, seed=1)
    corpus = make_synthetic_corpus(3, 6, num_frames=30, seed=1,
                                   feat_dim=net.feat_dim, noise_scale=0.05)
    cfg = TrainConfig(cycle_len_iters=30, cycles=1, batch_size=6,
                      crop_frames=20, log_every=1, seed=1,
                      lr_min=1e-5, lr_max=5e-3)
    result = train(model, corpus.utterances, cfg)
    first = result.trace[0].loss
    tail = np.mean([row.loss for row in result.trace[-5:]])
    assert tail < first
