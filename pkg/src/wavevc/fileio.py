"""WAV and VCF1 feature-file I/O.

VCF1 layout: magic ``b"VCF1"``, little-endian u32 row count N, u32 column
count D, then N*D little-endian float32 values, row-major (one row per
frame).
"""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
VCF1_MAGIC = b"VCF1"


class DataError(ValueError):
    """Input data is malformed or inconsistent."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read a 16-bit mono 16 kHz PCM WAV file."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise DataError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: expected {SAMPLE_RATE} Hz audio, got {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path: str | os.PathLike, signal: Waveform) -> None:
    if signal.sample_rate != SAMPLE_RATE:
        raise DataError(f"only {SAMPLE_RATE} Hz output is supported, got {signal.sample_rate} Hz")
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with open(path, "wb") as f, wave.open(f, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def write_vcf1(path: str | os.PathLike, matrix) -> None:
    """Write an N x D matrix (a 1-D array is stored as N x 1)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise DataError(f"VCF1 stores 2-D matrices, got shape {m.shape}")
    n, d = m.shape
    Path(path).write_bytes(VCF1_MAGIC + struct.pack("<II", n, d) + m.astype("<f4").tobytes())


def read_vcf1(path: str | os.PathLike) -> np.ndarray:
    """Read a VCF1 file as an N x D float64 array."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != VCF1_MAGIC:
        raise DataError(f"{path}: missing VCF1 header")
    n, d = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise DataError(f"{path}: header says {n}x{d} floats ({expected} bytes), file has {len(blob)} bytes")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(n, d).astype(np.float64)
