"""Corpus discovery and the conversion pipeline.

A corpus directory holds ``<name>.wav`` with ``<name>.ppg.vcf1`` (N x D
posteriors). Optional ``<name>.f0.vcf1`` / ``<name>.vuv.vcf1`` sidecars
(N x 1) replace the built-in f0 estimator for that utterance.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import (
    FRAME_HOP_S,
    ConditioningTrack,
    F0Stats,
    estimate_f0_vuv,
    f0_statistics,
    frame_ratio,
    transform_f0,
    upsample_conditioning,
)
from .fileio import DataError, Waveform, read_vcf1, read_wav, write_wav
from .generator import classes_to_waveform, generate_fast
from .wavenet import ModelConfig

log = logging.getLogger(__name__)

PPG_SUFFIX = ".ppg.vcf1"
F0_SUFFIX = ".f0.vcf1"
VUV_SUFFIX = ".vuv.vcf1"


@dataclass(frozen=True)
class F0Options:
    f0_min: float = 50.0
    f0_max: float = 500.0
    voicing_threshold: float = 0.5


def discover_pairs(corpus_dir) -> list[tuple[str, Path, Path]]:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"{corpus_dir}: not a directory")
    wavs = {p.stem: p for p in corpus_dir.glob("*.wav")}
    ppgs = {p.name[: -len(PPG_SUFFIX)]: p for p in corpus_dir.glob("*" + PPG_SUFFIX)}
    for name in sorted(set(wavs) ^ set(ppgs)):
        log.warning("skipping %s: %s has no partner", name, "audio" if name in wavs else "PPG")
    pairs = [(n, wavs[n], ppgs[n]) for n in sorted(set(wavs) & set(ppgs))]
    if not pairs:
        raise DataError(f"{corpus_dir}: no <name>.wav + <name>{PPG_SUFFIX} pairs found")
    return pairs


def source_f0(wave: Waveform, opts: F0Options = F0Options(), f0_path=None, vuv_path=None):
    if f0_path is not None and Path(f0_path).exists():
        f0 = read_vcf1(f0_path)[:, 0]
        if vuv_path is not None and Path(vuv_path).exists():
            vuv = read_vcf1(vuv_path)[:, 0]
        else:
            vuv = (f0 > 0).astype(np.float64)
        return f0, vuv
    return estimate_f0_vuv(wave, f0_range=(opts.f0_min, opts.f0_max), voicing_threshold=opts.voicing_threshold)


def align_track(name: str, wave: Waveform, ppg: np.ndarray, f0: np.ndarray, vuv: np.ndarray) -> tuple[Waveform, ConditioningTrack]:
    """Cut audio, PPG (D x N) and f0/vuv to a common whole number of frames.

    PPG and audio may disagree by at most one frame.
    """
    hop = frame_ratio(wave.sample_rate, FRAME_HOP_S)
    audio_frames = len(wave) // hop
    if abs(ppg.shape[1] - audio_frames) > 1:
        raise DataError(
            f"{name}: PPG has {ppg.shape[1]} frames but the audio spans {audio_frames} "
            f"(more than one frame apart)"
        )
    n = min(ppg.shape[1], audio_frames, len(f0), len(vuv))
    if n < 1:
        raise DataError(f"{name}: shorter than one frame")
    f0 = np.where(vuv[:n] > 0.5, f0[:n], 0.0)
    track = ConditioningTrack(ppg[:, :n], f0, (f0 > 0).astype(np.float64))
    return Waveform(wave.samples[: n * hop], wave.sample_rate), track


def load_utterance(name: str, wav_path, ppg_path, opts: F0Options = F0Options()):
    wave = read_wav(wav_path)
    ppg = read_vcf1(ppg_path).T
    folder = Path(ppg_path).parent
    f0, vuv = source_f0(wave, opts, folder / (name + F0_SUFFIX), folder / (name + VUV_SUFFIX))
    return align_track(name, wave, ppg, f0, vuv)


def load_corpus(corpus_dir, opts: F0Options = F0Options(), threads: int | None = None):
    """``[(name, Waveform, ConditioningTrack)]`` for every paired utterance."""
    pairs = discover_pairs(corpus_dir)

    def one(pair):
        name, wav, ppg = pair
        return (name, *load_utterance(name, wav, ppg, opts))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, pairs))


def corpus_f0_stats(corpus_dir, opts: F0Options = F0Options(), threads: int | None = None) -> F0Stats:
    return f0_statistics(track for _, _, track in load_corpus(corpus_dir, opts, threads))


@dataclass
class Conversion:
    waveform: Waveform
    track: ConditioningTrack  # f0 already mapped to the target speaker
    h: np.ndarray
    source_stats: F0Stats | None


def conversion_conditioning(
    name: str,
    wave: Waveform,
    ppg: np.ndarray,
    config: ModelConfig,
    target_stats: F0Stats,
    source_stats: F0Stats | None = None,
    opts: F0Options = F0Options(),
    upsample_mode: str = "hold",
) -> tuple[ConditioningTrack, np.ndarray, F0Stats | None]:
    """Source f0 mapped to the target speaker, assembled and upsampled.

    ``source_stats=None`` measures them on this utterance.
    """
    if ppg.shape[0] + 2 != config.cond_channels:
        raise DataError(
            f"{name}: PPG dimension is {ppg.shape[0]} but the checkpoint expects "
            f"{config.cond_channels - 2} (conditioning channels {config.cond_channels} = PPG + 2)"
        )
    f0, vuv = source_f0(wave, opts)
    _, track = align_track(name, wave, ppg, f0, vuv)
    voiced = int(np.count_nonzero(track.f0))
    if source_stats is None and voiced:
        source_stats = f0_statistics([track.f0])
    if voiced:
        mapped = transform_f0(track.f0, source_stats, target_stats)
    else:
        log.warning("%s: no voiced frames detected; f0 left at 0", name)
        mapped = track.f0
    track = ConditioningTrack(track.ppg, mapped, track.vuv)
    return track, upsample_conditioning(track, wave.sample_rate, upsample_mode), source_stats


def convert(
    wave: Waveform,
    ppg: np.ndarray,
    config: ModelConfig,
    params: dict[str, np.ndarray],
    target_stats: F0Stats,
    seed: int = 0,
    mode: str = "categorical",
    temperature: float = 1.0,
    source_stats: F0Stats | None = None,
    opts: F0Options = F0Options(),
    upsample_mode: str = "hold",
    name: str = "input",
) -> Conversion:
    """Generate target-speaker speech for one source utterance (PPG is D x N)."""
    track, h, stats = conversion_conditioning(
        name, wave, ppg, config, target_stats, source_stats, opts, upsample_mode
    )
    classes = generate_fast(params, h, h.shape[1], seed=seed, mode=mode, config=config, temperature=temperature)
    return Conversion(classes_to_waveform(classes, config, wave.sample_rate), track, h, stats)


def convert_files(wav_path, ppg_path, config, params, target_stats, out_path, **kwargs) -> Conversion:
    result = convert(read_wav(wav_path), read_vcf1(ppg_path).T, config, params, target_stats, name=Path(wav_path).stem, **kwargs)
    write_wav(out_path, result.waveform)
    return result
