import subprocess
import sys

import numpy as np
import pytest

from wavevc.cli import dispatch
from wavevc.features import F0Stats
from wavevc.fileio import read_vcf1, read_wav, write_vcf1, write_wav
from wavevc.synth import synthetic_utterance
from wavevc.wavenet import load_checkpoint, save_checkpoint

TOY = ["--blocks", "2", "--layers-per-block", "3", "--residual-channels", "8", "--skip-channels", "8", "--classes", "64"]


@pytest.fixture
def corpus(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    for i in range(2):
        wave, track = synthetic_utterance(0.3, seed=i)
        write_wav(d / f"u{i}.wav", wave)
        write_vcf1(d / f"u{i}.ppg.vcf1", track.ppg.T)
    return d


def run_train(corpus, out, *extra):
    args = ["train", "--corpus", str(corpus), "--out", str(out), "--steps", "3", "--batch-samples", "200"]
    return dispatch(args + ["--segment-length", "200", "--checkpoint-every", "2", *TOY, *extra])


def test_no_arguments_prints_usage_and_exits_1(capsys):
    assert dispatch([]) == 1
    assert "usage" in capsys.readouterr().err


def test_module_entry_point_exit_code():
    proc = subprocess.run([sys.executable, "-m", "wavevc"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr


def test_bad_flag_is_usage_error(capsys):
    assert dispatch(["evaluate", "--nope"]) == 1
    assert dispatch(["frobnicate"]) == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    code = dispatch(["features", "--wav", str(tmp_path / "no.wav"), "--out-f0", "a", "--out-vuv", "b"])
    assert code == 2 and "no.wav" in capsys.readouterr().err


def test_features_writes_tracks(tmp_path):
    wave, _ = synthetic_utterance(0.2, seed=0)
    write_wav(tmp_path / "x.wav", wave)
    assert dispatch(["features", "--wav", str(tmp_path / "x.wav"), "--out-f0", str(tmp_path / "f0.vcf1"), "--out-vuv", str(tmp_path / "v.vcf1")]) == 0
    f0, vuv = read_vcf1(tmp_path / "f0.vcf1"), read_vcf1(tmp_path / "v.vcf1")
    assert f0.shape == vuv.shape == (40, 1)
    assert np.array_equal(f0 > 0, vuv > 0)


def test_f0_stats_file(tmp_path, corpus):
    assert dispatch(["f0-stats", "--corpus", str(corpus), "--out", str(tmp_path / "s.txt")]) == 0
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert [l.split("=")[0] for l in lines] == ["mu", "sigma"]
    s = F0Stats.load(tmp_path / "s.txt")
    assert np.log(90) < s.mu < np.log(260)


def test_train_is_reproducible_with_seed(tmp_path, corpus):
    assert run_train(corpus, tmp_path / "a", "--seed", "5") == 0
    assert run_train(corpus, tmp_path / "b", "--seed", "5") == 0
    for name in ("ckpt_0000003.vckp", "ckpt_0000003.adam.vckp", "f0_stats.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    cfg, _, header = load_checkpoint(tmp_path / "a" / "ckpt_0000003.vckp")
    assert cfg.cond_channels == 6 and header["step"] == "3"


def test_convert_and_evaluate(tmp_path, corpus, capsys):
    assert run_train(corpus, tmp_path / "m") == 0
    src, track = synthetic_utterance(0.25, seed=9, f0_scale=1.3)
    write_wav(tmp_path / "src.wav", src)
    write_vcf1(tmp_path / "src.ppg.vcf1", track.ppg.T)
    (tmp_path / "conv").mkdir()
    code = dispatch([
        "convert", "--wav", str(tmp_path / "src.wav"), "--ppg", str(tmp_path / "src.ppg.vcf1"),
        "--ckpt", str(tmp_path / "m" / "ckpt_0000003.vckp"), "--target-f0-stats", str(tmp_path / "m" / "f0_stats.txt"),
        "--out", str(tmp_path / "conv" / "src.wav"), "--seed", "1",
    ])
    assert code == 0
    out = read_wav(tmp_path / "conv" / "src.wav")
    assert out.duration == track.frames * 80 / 16000
    (tmp_path / "tgt").mkdir()
    write_wav(tmp_path / "tgt" / "src.wav", src)
    capsys.readouterr()
    assert dispatch(["evaluate", "--target-dir", str(tmp_path / "tgt"), "--converted-dir", str(tmp_path / "conv"), "--report", str(tmp_path / "r.txt")]) == 0
    last = capsys.readouterr().out.splitlines()[-1].split("\t")
    assert last[0] == "CORPUS" and np.isfinite(float(last[2]))


def test_convert_rejects_ppg_dimension_mismatch(tmp_path, corpus, capsys):
    assert run_train(corpus, tmp_path / "m") == 0
    wave, _ = synthetic_utterance(0.2, seed=3)
    write_wav(tmp_path / "s.wav", wave)
    write_vcf1(tmp_path / "s.ppg.vcf1", np.full((40, 7), 1 / 7))
    capsys.readouterr()
    code = dispatch([
        "convert", "--wav", str(tmp_path / "s.wav"), "--ppg", str(tmp_path / "s.ppg.vcf1"),
        "--ckpt", str(tmp_path / "m" / "ckpt_0000003.vckp"), "--target-f0-stats", str(tmp_path / "m" / "f0_stats.txt"),
        "--out", str(tmp_path / "o.wav"),
    ])
    err = capsys.readouterr().err
    assert code == 2 and "7" in err and "4" in err


def test_evaluate_identity_corpus(tmp_path, corpus, capsys):
    assert dispatch(["evaluate", "--target-dir", str(corpus), "--converted-dir", str(corpus), "--report", str(tmp_path / "r.txt")]) == 0
    last = (tmp_path / "r.txt").read_text().splitlines()[-1].split("\t")
    assert float(last[2]) == 0.0


def test_nonfinite_checkpoint_exits_3(tmp_path, corpus):
    assert run_train(corpus, tmp_path / "m") == 0
    ck = tmp_path / "m" / "ckpt_0000003.vckp"
    cfg, params, _ = load_checkpoint(ck)
    params["head2.weight"][0, 0] = np.nan
    save_checkpoint(ck, cfg, params, {"step": 3})
    assert dispatch(["gen-bench", "--ckpt", str(ck), "--samples", "10"]) == 3
    assert run_train(corpus, tmp_path / "m", "--steps", "5", "--resume", str(ck)) == 3


def test_gen_bench_output(tmp_path, corpus, capsys):
    assert run_train(corpus, tmp_path / "m") == 0
    capsys.readouterr()
    assert dispatch(["gen-bench", "--ckpt", str(tmp_path / "m" / "ckpt_0000003.vckp"), "--samples", "100"]) == 0
    rows = [l.split("\t") for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 2 and all(float(r[1]) > 0 for r in rows)
