import dataclasses

import numpy as np
import pytest

from wavevc import compute as C
from wavevc.features import ConditioningTrack
from wavevc.fileio import DataError, Waveform
from wavevc.synth import synthetic_utterance
from wavevc.trainer import (
    SegmentSampler,
    TrainConfig,
    Utterance,
    batch_loss,
    checkpoint_path,
    evaluate_loss,
    load_adam,
    adam_path,
    make_segment,
    prepare_utterance,
    split_validation,
    train,
    train_step,
)
from wavevc.wavenet import forward_logits, init_params, load_checkpoint

from conftest import noisy_params, toy_config


def toy_utterance(cfg, t=200, seed=0, name="u"):
    rng = np.random.default_rng(seed)
    return Utterance(name, rng.integers(0, cfg.classes, t), rng.standard_normal((cfg.cond_channels, t)))


def test_prepare_utterance_checks_dims_and_length():
    wave, track = synthetic_utterance(0.1, seed=1)
    cfg = toy_config(cond_channels=track.dim + 2, classes=256)
    u = prepare_utterance("a", wave, track, cfg)
    assert u.h.shape == (cfg.cond_channels, len(wave)) and u.classes.shape == (len(wave),)
    with pytest.raises(DataError, match="PPG"):
        prepare_utterance("a", wave, track, toy_config(cond_channels=3))
    longer = Waveform(np.concatenate([wave.samples, np.zeros(161)]))
    with pytest.raises(DataError, match="frame"):
        prepare_utterance("a", longer, track, cfg)
    short = Waveform(wave.samples[:-40])
    assert len(prepare_utterance("a", short, track, cfg).classes) == len(wave) - 40


def test_segment_loss_equals_teacher_forced_utterance_loss():
    cfg = toy_config()
    params = noisy_params(cfg, seed=3)
    utt = toy_utterance(cfg, 120)
    ref = forward_logits(params, cfg, utt.classes, utt.h)
    ref_logp = ref - np.log(np.exp(ref - ref.max(1, keepdims=True)).sum(1, keepdims=True)) - ref.max(1, keepdims=True)
    rf = 15
    for start in (0, 3, 14, 60):
        seg = make_segment(utt, start, 30, rf - 1, cfg.mulaw.center)
        assert seg.context_length == rf - 1
        loss, _, _ = batch_loss(params, cfg, [seg])
        expect = -ref_logp[np.arange(start, start + 30), utt.classes[start : start + 30]].mean()
        assert float(loss.data) == pytest.approx(expect, abs=1e-12)


def test_sampler_rejects_short_utterance_by_name():
    cfg = toy_config()
    with pytest.raises(DataError, match="tiny"):
        SegmentSampler([toy_utterance(cfg, 15, name="tiny")], cfg, TrainConfig())


def test_sampler_is_a_pure_function_of_seed_and_step():
    cfg = toy_config()
    utts = [toy_utterance(cfg, 300, i, f"u{i}") for i in range(3)]
    tc = TrainConfig(batch_samples=100, segment_length=40, seed=4)
    a = SegmentSampler(utts, cfg, tc)
    b = SegmentSampler(utts, cfg, tc)
    assert a.per_step == 3
    for step in (0, 7, 7, 1000):
        sa, sb = a.segments(step), b.segments(step)
        assert [(s.utterance, s.start) for s in sa] == [(s.utterance, s.start) for s in sb]
        for s in sa:
            assert 0 <= s.start <= 300 - 40
    assert [s.start for s in a.segments(0)] != [s.start for s in a.segments(1)]


def test_segment_length_capped_by_shortest_utterance():
    cfg = toy_config()
    s = SegmentSampler([toy_utterance(cfg, 50)], cfg, TrainConfig(segment_length=5000, batch_samples=120))
    assert s.segment_length == 50 and s.per_step == 3


def test_train_step_lowers_loss_and_reports_preupdate_loss():
    cfg = toy_config()
    params = noisy_params(cfg)
    utt = toy_utterance(cfg, 200)
    sampler = SegmentSampler([utt], cfg, TrainConfig(batch_samples=200, segment_length=100))
    adam = C.AdamState.for_params(params, lr=1e-2)
    batch = sampler.segments(0)
    first = train_step(params, batch, adam, cfg)
    for _ in range(30):
        last = train_step(params, batch, adam, cfg)
    assert first.step == 0 and last.step == 30
    assert last.loss < first.loss
    assert 0.0 <= last.accuracy <= 1.0


def test_train_step_nonfinite_names_segment():
    cfg = toy_config()
    params = noisy_params(cfg)
    params["layers.0.filter.weight"][0, 0, 0] = np.inf
    sampler = SegmentSampler([toy_utterance(cfg, 100, name="bad")], cfg, TrainConfig(batch_samples=40, segment_length=40))
    adam = C.AdamState.for_params(params)
    with pytest.raises(C.NonFiniteError, match="bad"):
        train_step(params, sampler.segments(0), adam, cfg)
    with pytest.raises(DataError):
        train_step(params, [], adam, cfg)


def test_split_validation():
    tr, va = split_validation(40, 0.05, 0)
    assert len(va) == 2 and sorted(tr + va) == list(range(40))
    assert split_validation(3, 0.05, 0) == ([0, 1, 2], [])


def small_corpus(n=2, seconds=0.2):
    items = []
    for i in range(n):
        wave, track = synthetic_utterance(seconds, seed=i)
        items.append((f"s{i}", wave, track))
    return items


def test_train_writes_checkpoints_logs_and_resumes_identically(tmp_path):
    corpus = small_corpus()
    cfg = toy_config(classes=64, cond_channels=6)
    tc = TrainConfig(steps=6, batch_samples=300, segment_length=150, lr=1e-3, checkpoint_every=3, seed=2)
    final = train(corpus, cfg, tc, tmp_path / "a")
    assert final == checkpoint_path(tmp_path / "a", 6)
    assert {p.name for p in (tmp_path / "a").glob("ckpt_*.vckp")} >= {
        "ckpt_0000000.vckp",
        "ckpt_0000003.vckp",
        "ckpt_0000006.vckp",
    }
    log_lines = (tmp_path / "a" / "train_log.tsv").read_text().splitlines()
    assert [int(l.split("\t")[0]) for l in log_lines] == list(range(6))

    half = dataclasses.replace(tc, steps=3)
    mid = train(corpus, cfg, half, tmp_path / "b")
    resumed = train(corpus, cfg, tc, tmp_path / "b", resume=mid)
    _, pa, _ = load_checkpoint(final)
    _, pb, _ = load_checkpoint(resumed)
    for k in pa:
        np.testing.assert_array_equal(pa[k], pb[k])
    assert load_adam(adam_path(final)).t == 6
    assert (tmp_path / "b" / "train_log.tsv").read_text().count("\n") == 6


def test_resume_with_other_config_fails(tmp_path):
    corpus = small_corpus(1)
    cfg = toy_config(classes=64, cond_channels=6)
    tc = TrainConfig(steps=1, batch_samples=100, segment_length=100)
    ck = train(corpus, cfg, tc, tmp_path)
    with pytest.raises(DataError):
        train(corpus, toy_config(classes=32, cond_channels=6), tc, tmp_path, resume=ck)


def test_short_clip_loss_drops_below_uniform():
    # 200 steps on a single 0.5 s clip: best-so-far loss ends below ln(Q)
    wave, track = synthetic_utterance(0.5, seed=5)
    cfg = toy_config(classes=256, cond_channels=track.dim + 2, residual_channels=16, skip_channels=16)
    utt = prepare_utterance("clip", wave, track, cfg)
    tc = TrainConfig(batch_samples=1000, segment_length=1000, lr=1e-3)
    params = init_params(cfg, 0)
    adam = C.AdamState.for_params(params, lr=tc.lr)
    sampler = SegmentSampler([utt], cfg, tc)
    losses = [train_step(params, sampler.segments(s), adam, cfg).loss for s in range(200)]
    best = np.minimum.accumulate(losses)
    assert losses[0] == pytest.approx(np.log(256), abs=0.05)
    assert best[-1] < np.log(256) - 1.0
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    loss, acc = evaluate_loss(params, cfg, [utt])
    assert loss < np.log(256)


def test_two_second_utterance_gives_three_segments():
    cfg = toy_config()
    s = SegmentSampler([toy_utterance(cfg, 32000)], cfg, TrainConfig())
    assert s.per_step == 3 and len(s.segments(0)) == 3
    assert all(len(seg.targets) == 5000 for seg in s.segments(0))


def test_zero_steps_writes_initial_checkpoint_only(tmp_path):
    corpus = small_corpus(1)
    cfg = toy_config(classes=64, cond_channels=6)
    final = train(corpus, cfg, TrainConfig(steps=0, batch_samples=100, segment_length=100), tmp_path)
    assert final == checkpoint_path(tmp_path, 0)
    assert sorted(p.name for p in tmp_path.glob("ckpt_*")) == ["ckpt_0000000.adam.vckp", "ckpt_0000000.vckp"]
    assert (tmp_path / "train_log.tsv").read_text() == ""
