"""Synthetic utterances with matching conditioning, for tests and demos.

An utterance is a sequence of held "phones". Each phone has its own
harmonic timbre and a one-hot-ish PPG row; each segment gets an f0 whose
period is a whole number of samples at 16 kHz, so the waveform is exactly
periodic within a segment.
"""

from __future__ import annotations

import numpy as np

from .features import FRAME_HOP_S, ConditioningTrack
from .fileio import SAMPLE_RATE, Waveform

F0_CHOICES = (100.0, 125.0, 160.0, 200.0, 250.0)


def phone_timbres(ppg_dim: int, harmonics: int = 6, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    amps = rng.uniform(0.2, 1.0, size=(ppg_dim, harmonics)) / np.arange(1, harmonics + 1)
    return amps / amps.sum(axis=1, keepdims=True)


def synthetic_utterance(
    duration_s: float,
    seed: int = 0,
    ppg_dim: int = 4,
    segment_s: float = 0.5,
    amplitude: float = 0.5,
    f0_choices=F0_CHOICES,
    timbre_seed: int = 0,
    f0_scale: float = 1.0,
) -> tuple[Waveform, ConditioningTrack]:
    """A voiced utterance of whole 5 ms frames plus its conditioning track.

    ``f0_scale`` multiplies every f0 (use it to make a "different speaker"
    with the same content).
    """
    rng = np.random.default_rng(seed)
    hop = int(round(SAMPLE_RATE * FRAME_HOP_S))
    n_frames = int(round(duration_s / FRAME_HOP_S))
    seg_frames = max(1, int(round(segment_s / FRAME_HOP_S)))
    timbres = phone_timbres(ppg_dim, seed=timbre_seed)

    samples = np.zeros(n_frames * hop)
    ppg = np.zeros((ppg_dim, n_frames))
    f0 = np.zeros(n_frames)
    for first in range(0, n_frames, seg_frames):
        last = min(first + seg_frames, n_frames)
        phone = int(rng.integers(ppg_dim))
        freq = float(rng.choice(f0_choices)) * f0_scale
        t = np.arange((last - first) * hop) / SAMPLE_RATE
        k = np.arange(1, timbres.shape[1] + 1)[:, None]
        wave = (timbres[phone][:, None] * np.sin(2 * np.pi * freq * k * t[None, :])).sum(axis=0)
        samples[first * hop : last * hop] = amplitude * wave / np.abs(wave).max()
        row = np.full(ppg_dim, 0.1 / max(ppg_dim - 1, 1))
        row[phone] = 0.9 if ppg_dim > 1 else 1.0
        ppg[:, first:last] = row[:, None]
        f0[first:last] = freq
    return Waveform(samples, SAMPLE_RATE), ConditioningTrack(ppg, f0, np.ones(n_frames))
