"""Log-spectral RMSE between target and converted speech.

Per frame: ``sqrt(mean_f (20 * log10(|Y_f| / |Y_f^conv|))^2)`` in dB over
the STFT bins. Utterances are compared over their common leading frames;
the corpus figure is the frame-weighted mean.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import MAG_FLOOR, stft_log_magnitude
from .fileio import DataError, Waveform, read_wav

log = logging.getLogger(__name__)


def rmse_frame(target_mag, conv_mag, floor: float = MAG_FLOOR) -> float:
    t = np.maximum(np.asarray(target_mag, dtype=np.float64), floor)
    c = np.maximum(np.asarray(conv_mag, dtype=np.float64), floor)
    if t.shape != c.shape:
        raise DataError(f"frame lengths differ: {t.shape} vs {c.shape}")
    d = 20.0 * np.log10(t / c)
    return float(np.sqrt(np.mean(d * d)))


def rmse_frames(target_mags: np.ndarray, conv_mags: np.ndarray, floor: float = MAG_FLOOR) -> np.ndarray:
    """Per-frame RMSE for F x M magnitude matrices of equal shape."""
    t = np.maximum(target_mags, floor)
    c = np.maximum(conv_mags, floor)
    d = 20.0 * np.log10(t / c)
    return np.sqrt(np.mean(d * d, axis=0))


@dataclass
class UtteranceRmse:
    mean_db: float
    frames: int
    target_frames: int
    converted_frames: int
    frame_db: np.ndarray = field(repr=False)


def rmse_utterance(target: Waveform, converted: Waveform) -> UtteranceRmse:
    for name, w in (("target", target), ("converted", converted)):
        if w.sample_rate != 16000:
            raise DataError(f"{name} audio is {w.sample_rate} Hz; evaluation expects 16000 Hz")
    tm = stft_log_magnitude(target)
    cm = stft_log_magnitude(converted)
    m = min(tm.shape[1], cm.shape[1])
    per_frame = rmse_frames(tm[:, :m], cm[:, :m])
    return UtteranceRmse(float(per_frame.mean()), m, tm.shape[1], cm.shape[1], per_frame)


@dataclass
class RmseReport:
    utterances: list[dict]
    corpus_db: float  # frame-weighted
    utterance_mean_db: float
    frames: int

    def to_text(self) -> str:
        lines = [f"{u['name']}\t{u['frames']}\t{u['rmse_db']:.6f}" for u in self.utterances]
        lines.append(f"CORPUS\t{self.frames}\t{self.corpus_db:.6f}\tutterance_mean={self.utterance_mean_db:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        path.with_name(path.name + ".json").write_text(self.to_json(), encoding="utf-8")


def corpus_report(results: dict[str, UtteranceRmse]) -> RmseReport:
    if not results:
        raise DataError("no utterance pairs to evaluate")
    rows = []
    total = 0.0
    frames = 0
    for name in sorted(results):
        r = results[name]
        rows.append(
            {
                "name": name,
                "frames": r.frames,
                "target_frames": r.target_frames,
                "converted_frames": r.converted_frames,
                "rmse_db": r.mean_db,
            }
        )
        total += float(r.frame_db.sum())
        frames += r.frames
    return RmseReport(rows, total / frames, float(np.mean([r["rmse_db"] for r in rows])), frames)


def evaluate_dirs(target_dir, converted_dir, threads: int | None = None) -> RmseReport:
    """Pair ``*.wav`` files by name across two directories and report RMSE."""
    target_dir, converted_dir = Path(target_dir), Path(converted_dir)
    targets = {p.stem: p for p in sorted(target_dir.glob("*.wav"))}
    converted = {p.stem: p for p in sorted(converted_dir.glob("*.wav"))}
    for stem in sorted(set(targets) ^ set(converted)):
        log.warning("skipping %s: no partner file in the other directory", stem)
    names = sorted(set(targets) & set(converted))

    def one(name):
        return name, rmse_utterance(read_wav(targets[name]), read_wav(converted[name]))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = dict(pool.map(one, names))
    return corpus_report(results)
