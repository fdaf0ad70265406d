"""Training on (waveform, conditioning) pairs of one target speaker.

Each optimization step draws fixed-length segments until the requested
number of target samples is reached. A segment carries ``RF - 1`` positions
of context before its targets so the first target sees a full receptive
field; context that would reach before the utterance start is masked so
it behaves exactly like the convolutions' zero padding and never enters
the loss.

The segment schedule of step k depends only on ``(seed, k)``, which is
what makes an interrupted run resume to the same result.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import compute as C
from .codec import mulaw_encode
from .features import ConditioningTrack, frame_ratio, upsample_conditioning
from .fileio import DataError, Waveform
from .wavenet import (
    ModelConfig,
    as_tensors,
    forward,
    forward_logits,
    header_values,
    init_params,
    load_checkpoint,
    read_vckp,
    receptive_field,
    save_checkpoint,
    write_vckp,
)

log = logging.getLogger(__name__)

LOG_NAME = "train_log.tsv"
VALID_LOG_NAME = "valid_log.tsv"


@dataclass
class TrainConfig:
    steps: int = 200_000
    batch_samples: int = 15_000
    segment_length: int = 5_000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 10_000
    seed: int = 0
    validation_fraction: float = 0.05
    upsample_mode: str = "hold"


@dataclass
class Utterance:
    name: str
    classes: np.ndarray  # T
    h: np.ndarray  # C_h x T


@dataclass
class TrainSegment:
    utterance: str
    start: int  # first target position in the utterance
    inputs: np.ndarray  # model inputs (shifted classes) for context + targets
    targets: np.ndarray  # S target classes
    conditioning: np.ndarray  # C_h x (context + S)
    valid: np.ndarray  # False where the context reaches before the utterance

    @property
    def context_length(self) -> int:
        return len(self.inputs) - len(self.targets)


@dataclass
class TrainReport:
    step: int
    loss: float
    accuracy: float
    seconds: float

    def line(self) -> str:
        return f"{self.step}\t{self.loss:.6f}\t{self.accuracy:.6f}\t{self.seconds:.3f}"


def prepare_utterance(
    name: str, wave: Waveform, track: ConditioningTrack, config: ModelConfig, upsample_mode: str = "hold"
) -> Utterance:
    """Quantize the waveform and extend its conditioning to sample rate.

    Both are cut to the shorter of the two; a difference of more than one
    frame is an error.
    """
    if track.dim + 2 != config.cond_channels:
        raise DataError(
            f"{name}: conditioning has {track.dim} PPG dims (+2 = {track.dim + 2}), "
            f"model expects {config.cond_channels} channels"
        )
    classes = mulaw_encode(wave.samples, config.mulaw)
    h = upsample_conditioning(track, wave.sample_rate, upsample_mode)
    ratio = frame_ratio(wave.sample_rate, track.frame_hop_s)
    if abs(len(classes) - h.shape[1]) > ratio:
        raise DataError(
            f"{name}: audio has {len(classes)} samples but conditioning covers {h.shape[1]} "
            f"(more than one {ratio}-sample frame apart)"
        )
    n = min(len(classes), h.shape[1])
    return Utterance(name, classes[:n], np.ascontiguousarray(h[:, :n]))


def make_segment(utt: Utterance, start: int, length: int, context: int, center: int) -> TrainSegment:
    lo = start - context
    positions = np.arange(lo, start + length)
    valid = positions >= 0
    inputs = np.full(len(positions), center, dtype=np.int64)
    src = positions - 1
    has_prev = src >= 0
    inputs[has_prev] = utt.classes[src[has_prev]]
    cond = np.zeros((utt.h.shape[0], len(positions)))
    cond[:, valid] = utt.h[:, positions[valid]]
    return TrainSegment(utt.name, start, inputs, utt.classes[start : start + length].copy(), cond, valid)


class SegmentSampler:
    """Draws each step's segments uniformly over all valid start positions."""

    def __init__(self, utterances: Sequence[Utterance], model_config: ModelConfig, train_config: TrainConfig):
        if not utterances:
            raise DataError("empty training corpus")
        self.rf = receptive_field(model_config)
        for u in utterances:
            if len(u.classes) <= self.rf:
                raise DataError(
                    f"utterance {u.name!r} has {len(u.classes)} samples, not longer than the receptive field {self.rf}"
                )
        self.utterances = list(utterances)
        self.center = model_config.mulaw.center
        shortest = min(len(u.classes) for u in self.utterances)
        self.segment_length = min(train_config.segment_length, shortest)
        if self.segment_length < train_config.segment_length:
            log.info("segment length capped at %d by the shortest utterance", self.segment_length)
        self.per_step = math.ceil(train_config.batch_samples / self.segment_length)
        self.seed = train_config.seed
        counts = np.array([len(u.classes) - self.segment_length + 1 for u in self.utterances])
        self._offsets = np.concatenate([[0], np.cumsum(counts)])

    def segments(self, step: int) -> list[TrainSegment]:
        rng = np.random.default_rng([self.seed, step])
        picks = rng.integers(0, self._offsets[-1], size=self.per_step)
        out = []
        for p in picks:
            i = int(np.searchsorted(self._offsets, p, side="right") - 1)
            start = int(p - self._offsets[i])
            out.append(make_segment(self.utterances[i], start, self.segment_length, self.rf - 1, self.center))
        return out


def make_batches(
    utterances: Sequence[Utterance], model_config: ModelConfig, train_config: TrainConfig, start_step: int = 0
) -> Iterator[list[TrainSegment]]:
    sampler = SegmentSampler(utterances, model_config, train_config)
    step = start_step
    while True:
        yield sampler.segments(step)
        step += 1


def _stack(batch: Sequence[TrainSegment]):
    inputs = np.stack([s.inputs for s in batch])
    h = np.ascontiguousarray(np.stack([s.conditioning for s in batch], axis=1))
    valid = np.stack([s.valid for s in batch])
    ctx = batch[0].context_length
    targets = np.zeros_like(inputs)
    weights = np.zeros(inputs.shape)
    targets[:, ctx:] = np.stack([s.targets for s in batch])
    weights[:, ctx:] = 1.0
    return inputs, h, valid, targets, weights


def batch_loss(params, config: ModelConfig, batch: Sequence[TrainSegment], tape: C.GradTape | None = None):
    """Forward a batch; returns (loss tensor, tensors dict, accuracy)."""
    inputs, h, valid, targets, weights = _stack(batch)
    tensors = as_tensors(params, requires_grad=tape is not None)
    logits = forward(tensors, config, inputs, h, tape, None if valid.all() else valid)
    loss, _ = C.cross_entropy(logits, targets, weights, tape)
    pred = logits.data.argmax(axis=0)
    hit = (pred == targets) & (weights > 0)
    return loss, tensors, float(hit.sum() / weights.sum())


def _locate_nonfinite(params, config, batch) -> str:
    for seg in batch:
        try:
            loss, _, _ = batch_loss(params, config, [seg])
            if not np.isfinite(loss.data):
                raise C.NonFiniteError
        except C.NonFiniteError:
            return f"utterance {seg.utterance!r} at sample {seg.start}"
    return "an unidentified segment"


def train_step(
    params: dict[str, np.ndarray], batch: Sequence[TrainSegment], adam: C.AdamState, config: ModelConfig
) -> TrainReport:
    """Forward, backward and one Adam update. Loss and accuracy are pre-update."""
    if not batch:
        raise DataError("empty batch")
    t0 = time.perf_counter()
    tape = C.GradTape()
    try:
        loss, tensors, acc = batch_loss(params, config, batch, tape)
        if not np.isfinite(loss.data):
            raise C.NonFiniteError("loss")
    except C.NonFiniteError as exc:
        where = _locate_nonfinite(params, config, batch)
        raise C.NonFiniteError(f"non-finite values ({exc}) at step {adam.t}, segment from {where}") from exc
    step = adam.t
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    C.adam_step(params, grads, adam)
    return TrainReport(step, float(loss.data), acc, time.perf_counter() - t0)


def evaluate_loss(params, config: ModelConfig, utterances: Sequence[Utterance]) -> tuple[float, float]:
    """Teacher-forced loss and accuracy over whole utterances (frame-weighted)."""
    total_loss = total_hit = total = 0.0
    for u in utterances:
        logits = forward_logits(params, config, u.classes, u.h)
        loss, _ = C.softmax_cross_entropy(logits, u.classes)
        n = len(u.classes)
        total_loss += loss * n
        total_hit += float((logits.argmax(axis=1) == u.classes).sum())
        total += n
    return total_loss / total, total_hit / total


# ---------------------------------------------------------------------------
# Checkpointed training loop
# ---------------------------------------------------------------------------


def checkpoint_path(out_dir: Path, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step:07d}.vckp"


def adam_path(ckpt: Path) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name.replace(".vckp", ".adam.vckp"))


def save_adam(path: Path, adam: C.AdamState) -> None:
    header = (
        f"adam_t={adam.t}\nlr={adam.lr!r}\nbeta1={adam.beta1!r}\nbeta2={adam.beta2!r}\neps={adam.eps!r}\n"
    )
    tensors = {f"m.{k}": v for k, v in adam.m.items()}
    tensors.update({f"v.{k}": v for k, v in adam.v.items()})
    write_vckp(path, header, tensors)


def load_adam(path: Path) -> C.AdamState:
    header, tensors = read_vckp(path)
    h = header_values(header)
    state = C.AdamState(
        lr=float(h["lr"]), beta1=float(h["beta1"]), beta2=float(h["beta2"]), eps=float(h["eps"]), t=int(h["adam_t"])
    )
    for k, v in tensors.items():
        kind, _, name = k.partition(".")
        (state.m if kind == "m" else state.v)[name] = v
    return state


def save_training_state(out_dir: Path, step: int, config: ModelConfig, params, adam: C.AdamState) -> Path:
    path = checkpoint_path(out_dir, step)
    # optimizer first: a checkpoint that exists always has its optimizer state
    save_adam(adam_path(path), adam)
    save_checkpoint(path, config, params, {"step": step})
    return path


def split_validation(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    n_val = int(math.floor(n * fraction))
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    val = sorted(order[:n_val].tolist())
    train = sorted(order[n_val:].tolist())
    return train, val


def _trim_log(path: Path, upto_step: int) -> None:
    if not path.exists():
        return
    keep = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and int(ln.split("\t")[0]) < upto_step]
    path.write_text("".join(ln + "\n" for ln in keep), encoding="utf-8")


def train(
    corpus: Sequence[tuple[str, Waveform, ConditioningTrack]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir,
    resume=None,
    on_report=None,
) -> Path:
    """Train and return the path of the final checkpoint.

    Writes ``ckpt_<step>.vckp`` (+ ``.adam.vckp``) every
    ``checkpoint_every`` steps and at the end, and one ``train_log.tsv``
    line per step. ``resume`` continues from a checkpoint of this run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    utterances = [prepare_utterance(n, w, t, model_config, train_config.upsample_mode) for n, w, t in corpus]
    if not utterances:
        raise DataError("empty training corpus")
    train_idx, val_idx = split_validation(len(utterances), train_config.validation_fraction, train_config.seed)
    train_utts = [utterances[i] for i in train_idx]
    val_utts = [utterances[i] for i in val_idx]
    sampler = SegmentSampler(train_utts, model_config, train_config)

    if resume is not None:
        cfg, params, header = load_checkpoint(resume)
        if cfg != model_config:
            raise DataError(f"checkpoint {resume} was trained with {cfg}, not {model_config}")
        adam = load_adam(adam_path(Path(resume)))
        step = int(header.get("step", adam.t))
        if adam.t != step:
            raise DataError(f"{resume}: optimizer state is at step {adam.t}, checkpoint at step {step}")
        _trim_log(out_dir / LOG_NAME, step)
        last = Path(resume)
    else:
        params = init_params(model_config, train_config.seed)
        adam = C.AdamState.for_params(
            params, lr=train_config.lr, beta1=train_config.beta1, beta2=train_config.beta2, eps=train_config.eps
        )
        step = 0
        (out_dir / LOG_NAME).write_text("", encoding="utf-8")
        last = save_training_state(out_dir, 0, model_config, params, adam)

    with open(out_dir / LOG_NAME, "a", encoding="utf-8") as logf:
        while step < train_config.steps:
            report = train_step(params, sampler.segments(step), adam, model_config)
            logf.write(report.line() + "\n")
            logf.flush()
            if on_report is not None:
                on_report(report)
            step += 1
            if step % train_config.checkpoint_every == 0 or step == train_config.steps:
                last = save_training_state(out_dir, step, model_config, params, adam)
                if val_utts:
                    vloss, vacc = evaluate_loss(params, model_config, val_utts)
                    with open(out_dir / VALID_LOG_NAME, "a", encoding="utf-8") as vf:
                        vf.write(f"{step}\t{vloss:.6f}\t{vacc:.6f}\t0.000\n")
    return last
