import struct
import wave

import numpy as np
import pytest

from wavevc.fileio import DataError, Waveform, read_vcf1, read_wav, write_vcf1, write_wav


def test_wav_roundtrip_is_exact_on_pcm_grid(tmp_path):
    pcm = np.random.default_rng(0).integers(-32768, 32768, size=1234)
    w = Waveform(pcm / 32768.0)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(back.samples, w.samples)
    assert back.sample_rate == 16000
    assert back.duration == pytest.approx(1234 / 16000)


def test_wav_write_clips(tmp_path):
    write_wav(tmp_path / "c.wav", Waveform(np.array([2.0, -2.0, 0.0])))
    back = read_wav(tmp_path / "c.wav").samples
    assert back[0] == pytest.approx(32767 / 32768)
    assert back[1] == -1.0


def _raw_wav(path, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(b"\x00" * (channels * width * 10))


@pytest.mark.parametrize("kw,match", [({"channels": 2}, "mono"), ({"width": 1}, "16-bit"), ({"rate": 44100}, "16000")])
def test_wav_rejects_unsupported(tmp_path, kw, match):
    _raw_wav(tmp_path / "x.wav", **kw)
    with pytest.raises(DataError, match=match):
        read_wav(tmp_path / "x.wav")


def test_wav_rejects_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wav")
    with pytest.raises(DataError):
        read_wav(tmp_path / "g.wav")


def test_write_rejects_other_rates(tmp_path):
    with pytest.raises(DataError):
        write_wav(tmp_path / "r.wav", Waveform(np.zeros(4), 8000))


def test_vcf1_roundtrip_and_layout(tmp_path):
    m = np.arange(12, dtype=np.float64).reshape(4, 3) / 7
    write_vcf1(tmp_path / "m.vcf1", m)
    blob = (tmp_path / "m.vcf1").read_bytes()
    assert blob[:4] == b"VCF1"
    assert struct.unpack_from("<II", blob, 4) == (4, 3)
    assert len(blob) == 12 + 4 * 12
    np.testing.assert_array_equal(read_vcf1(tmp_path / "m.vcf1"), m.astype(np.float32))


def test_vcf1_vector_stored_as_column(tmp_path):
    write_vcf1(tmp_path / "v.vcf1", np.array([1.0, 2.0]))
    assert read_vcf1(tmp_path / "v.vcf1").shape == (2, 1)


def test_vcf1_rejects_truncated_and_bad_magic(tmp_path):
    write_vcf1(tmp_path / "m.vcf1", np.ones((3, 2)))
    blob = (tmp_path / "m.vcf1").read_bytes()
    (tmp_path / "t.vcf1").write_bytes(blob[:-4])
    with pytest.raises(DataError):
        read_vcf1(tmp_path / "t.vcf1")
    (tmp_path / "b.vcf1").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError):
        read_vcf1(tmp_path / "b.vcf1")
