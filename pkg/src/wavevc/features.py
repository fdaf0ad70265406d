"""Conditioning features: PPG + log-f0 + vuv at frame rate, extended to sample rate.

Also holds the f0 tools (autocorrelation estimator, per-speaker log-f0
statistics, the log-linear f0 transform) and the STFT magnitudes used by
the evaluator.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .fileio import DataError, Waveform, read_vcf1

log = logging.getLogger(__name__)

FRAME_HOP_S = 0.005
MAG_FLOOR = 1e-10
STFT_WINDOW = 400
STFT_HOP = 80
STFT_FFT = 512


@dataclass
class ConditioningTrack:
    """Frame-rate conditioning: ``ppg`` is D x N, ``f0`` in Hz (0 = unvoiced), ``vuv`` in {0, 1}."""

    ppg: np.ndarray
    f0: np.ndarray
    vuv: np.ndarray
    frame_hop_s: float = FRAME_HOP_S

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        self.vuv = np.asarray(self.vuv, dtype=np.float64).reshape(-1)
        if self.ppg.ndim != 2 or self.ppg.shape[0] < 1 or self.ppg.shape[1] < 1:
            raise DataError(f"PPG must be a non-empty D x N matrix, got shape {self.ppg.shape}")
        n = self.ppg.shape[1]
        if self.f0.shape != (n,) or self.vuv.shape != (n,):
            raise DataError(f"f0 ({self.f0.size}) and vuv ({self.vuv.size}) must have {n} frames like the PPG")
        if not np.all(np.isfinite(self.ppg)) or not np.all(np.isfinite(self.f0)):
            raise DataError("conditioning contains non-finite values")
        if not np.all((self.vuv == 0) | (self.vuv == 1)):
            raise DataError("vuv must be binary")
        if np.any((self.f0 > 0) != (self.vuv == 1)):
            raise DataError("f0 > 0 must coincide exactly with vuv == 1")

    @property
    def dim(self) -> int:
        return self.ppg.shape[0]

    @property
    def frames(self) -> int:
        return self.ppg.shape[1]

    def truncated(self, n: int) -> "ConditioningTrack":
        return ConditioningTrack(self.ppg[:, :n], self.f0[:n], self.vuv[:n], self.frame_hop_s)

    @classmethod
    def from_files(cls, ppg_path, f0_path=None, vuv_path=None) -> "ConditioningTrack":
        ppg = read_vcf1(ppg_path).T
        f0 = read_vcf1(f0_path)[:, 0] if f0_path else np.zeros(ppg.shape[1])
        vuv = read_vcf1(vuv_path)[:, 0] if vuv_path else (f0 > 0).astype(float)
        return cls(ppg, f0, vuv)


@dataclass(frozen=True)
class F0Stats:
    """Mean and standard deviation of ln(f0) over voiced frames."""

    mu: float
    sigma: float
    frame_count: int | None = None

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(f"mu={self.mu!r}\nsigma={self.sigma!r}\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "F0Stats":
        values = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise DataError(f"{path}: malformed line {line!r}")
            values[key.strip()] = float(val)
        try:
            return cls(values["mu"], values["sigma"])
        except KeyError as exc:
            raise DataError(f"{path}: missing {exc.args[0]!r}") from exc


def frame_ratio(sample_rate: int, frame_hop_s: float) -> int:
    ratio = sample_rate * frame_hop_s
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-9:
        raise DataError(f"frame hop {frame_hop_s} s is not a whole number of samples at {sample_rate} Hz")
    return r


def log_f0_channel(f0: np.ndarray) -> np.ndarray:
    """ln(f0) with interior unvoiced gaps linearly interpolated and zeros at the edges."""
    f0 = np.asarray(f0, dtype=np.float64)
    out = np.zeros_like(f0)
    voiced = np.flatnonzero(f0 > 0)
    if voiced.size == 0:
        return out
    lo, hi = voiced[0], voiced[-1]
    idx = np.arange(lo, hi + 1)
    out[lo : hi + 1] = np.interp(idx, voiced, np.log(f0[voiced]))
    return out


def frame_matrix(track: ConditioningTrack) -> np.ndarray:
    """Stack ``[PPG; log-f0; vuv]`` as a (D + 2) x N frame-rate matrix."""
    return np.vstack([track.ppg, log_f0_channel(track.f0)[None, :], track.vuv[None, :]])


def upsample_conditioning(track: ConditioningTrack, sample_rate: int, mode: str = "hold") -> np.ndarray:
    """Extend frame-rate conditioning to one column per waveform sample.

    ``mode="hold"`` repeats each frame ``ratio`` times. ``mode="linear"``
    interpolates between frame centers (vuv is still held so it stays binary).
    Returns a (D + 2) x (N * ratio) matrix.
    """
    if track.frames < 1:
        raise DataError("empty conditioning track")
    r = frame_ratio(sample_rate, track.frame_hop_s)
    frames = frame_matrix(track)
    held = np.repeat(frames, r, axis=1)
    if mode == "hold":
        return held
    if mode != "linear":
        raise ValueError(f"unknown upsampling mode {mode!r}")
    pos = (np.arange(frames.shape[1] * r) + 0.5) / r - 0.5
    grid = np.arange(frames.shape[1])
    out = np.vstack([np.interp(pos, grid, row) for row in frames[:-1]])
    return np.vstack([out, held[-1:]])


def f0_statistics(tracks: Iterable) -> F0Stats:
    """Pool ln(f0) over the voiced frames of every track (or raw f0 array)."""
    logs = []
    for t in tracks:
        f0 = np.asarray(getattr(t, "f0", t), dtype=np.float64).reshape(-1)
        logs.append(np.log(f0[f0 > 0]))
    pooled = np.concatenate(logs) if logs else np.zeros(0)
    if pooled.size == 0:
        raise DataError("f0 statistics need at least one voiced frame")
    return F0Stats(float(pooled.mean()), float(pooled.std()), int(pooled.size))


def transform_f0(f0_source, source: F0Stats, target: F0Stats) -> np.ndarray:
    """Map voiced f0 values by matching log-domain mean and deviation.

    ``f0_y = exp((ln f0_x - mu_x) * sigma_y / sigma_x + mu_y)``; unvoiced
    frames (f0 = 0) stay 0.
    """
    f0 = np.asarray(f0_source, dtype=np.float64)
    for name, s in (("source", source), ("target", target)):
        if s.frame_count is not None and s.frame_count < 2:
            raise DataError(f"{name} f0 statistics come from {s.frame_count} frame(s); need at least 2")
    voiced = f0 > 0
    if not voiced.any():
        log.warning("transform_f0: input has no voiced frames; returning it unchanged")
        return f0.copy()
    if source.sigma == 0:
        if target.sigma != 0:
            raise DataError("source log-f0 deviation is 0, cannot scale to a nonzero target deviation")
        scale = 1.0
    else:
        scale = target.sigma / source.sigma
    out = np.zeros_like(f0)
    out[voiced] = np.exp((np.log(f0[voiced]) - source.mu) * scale + target.mu)
    return out


def estimate_f0_vuv(
    x: Waveform,
    hop_s: float = FRAME_HOP_S,
    f0_range: tuple[float, float] = (50.0, 500.0),
    voicing_threshold: float = 0.5,
    energy_threshold: float = 1e-3,
    window_s: float = 0.04,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame f0 (Hz) and vuv from the normalized autocorrelation peak.

    One frame per ``hop_s`` (``len(x) // hop`` frames), each analysed around
    its center. A frame is voiced when the peak correlation within the lag
    range of ``f0_range`` reaches ``voicing_threshold`` and its RMS reaches
    ``energy_threshold``.
    """
    sr = x.sample_rate
    if len(x) == 0:
        raise DataError("cannot estimate f0 of an empty signal")
    fmin, fmax = f0_range
    if sr < 2 * fmax:
        raise DataError(f"sample rate {sr} Hz is below twice the f0 ceiling {fmax} Hz")
    hop = frame_ratio(sr, hop_s)
    win = int(round(window_s * sr))
    lag_min = int(np.floor(sr / fmax))
    lag_max = int(np.ceil(sr / fmin))
    n_frames = len(x) // hop
    f0 = np.zeros(n_frames)
    vuv = np.zeros(n_frames)
    if n_frames == 0:
        return f0, vuv

    span = win + lag_max
    pad = span
    sig = np.concatenate([np.zeros(pad), x.samples, np.zeros(pad)])
    lags = np.arange(lag_min, lag_max + 1)
    for n in range(n_frames):
        center = pad + n * hop + hop // 2
        start = center - span // 2
        seg = sig[start : start + span]
        ref = seg[:win]
        e0 = ref @ ref
        if e0 <= 0 or np.sqrt(e0 / win) < energy_threshold:
            continue
        # cross terms for every lag in one C-level pass
        cross = np.correlate(seg[lag_min : lag_max + win], ref, mode="valid")
        sq = np.concatenate([[0.0], np.cumsum(seg * seg)])
        e_lag = sq[lags + win] - sq[lags]
        nccf = cross / np.sqrt(np.maximum(e0 * e_lag, 1e-300))
        best = nccf.max()
        if best < voicing_threshold:
            continue
        # prefer the shortest-lag strong peak to avoid octave drops
        interior = np.flatnonzero((nccf[1:-1] >= nccf[:-2]) & (nccf[1:-1] >= nccf[2:])) + 1
        strong = interior[nccf[interior] >= 0.95 * best]
        i = int(strong[0]) if strong.size else int(np.argmax(nccf))
        lag = float(lags[i])
        if 0 < i < len(nccf) - 1:
            a, b, c = nccf[i - 1], nccf[i], nccf[i + 1]
            denom = a - 2 * b + c
            if denom < 0:
                lag += 0.5 * (a - c) / denom
        f0[n] = np.clip(sr / lag, fmin, fmax)
        vuv[n] = 1.0
    return f0, vuv


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_log_magnitude(
    x: Waveform,
    window: int = STFT_WINDOW,
    hop: int = STFT_HOP,
    n_fft: int = STFT_FFT,
    floor: float = MAG_FLOOR,
) -> np.ndarray:
    """Linear STFT magnitudes, F x M, floored at ``floor`` so a later log is safe.

    Defaults give 25 ms Hann windows every 5 ms at 16 kHz with a 512-point
    FFT (F = 257). Frames start at multiples of ``hop``; no padding.
    """
    s = x.samples
    if len(s) < window:
        raise DataError(f"signal has {len(s)} samples, shorter than one {window}-sample window")
    m = (len(s) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(m)[:, None]
    frames = s[idx] * hann_window(window)[None, :]
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)).T
    return np.maximum(mag, floor)
