"""Conditional WaveNet: class embedding, gated dilated residual layers with
per-layer local conditioning, skip aggregation and a Q-way output head.

Parameter names (all float64 arrays in a flat dict):

    embedding                      Q x R
    layers.{i}.filter.weight       R x R x K    dilated causal, filter path
    layers.{i}.filter.bias         R
    layers.{i}.gate.weight         R x R x K    dilated causal, gate path
    layers.{i}.gate.bias           R
    layers.{i}.cond_filter.weight  R x C_h      1x1 on the conditioning
    layers.{i}.cond_gate.weight    R x C_h
    layers.{i}.residual.weight     R x R
    layers.{i}.residual.bias       R
    layers.{i}.skip.weight         S x R
    layers.{i}.skip.bias           S
    head1.weight / head1.bias      S x S / S
    head2.weight / head2.bias      Q x S / Q
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import compute as C
from .codec import MuLawConfig
from .fileio import DataError

CKPT_MAGIC = b"VCKP"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 3
    layers_per_block: int = 10
    kernel_size: int = 2
    residual_channels: int = 512
    skip_channels: int = 256
    classes: int = 256
    cond_channels: int = 44

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1, got {getattr(self, f.name)}")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def n_layers(self) -> int:
        return self.blocks * self.layers_per_block

    @property
    def dilations(self) -> list[int]:
        return [2**l for _ in range(self.blocks) for l in range(self.layers_per_block)]

    @property
    def mulaw(self) -> MuLawConfig:
        return MuLawConfig(self.classes)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(asdict(self).items()))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line:
                continue
            key, _, val = line.partition("=")
            if key in known:
                values[key] = int(val)
        return cls(**values)


def receptive_field(config: ModelConfig) -> int:
    return 1 + config.blocks * sum((config.kernel_size - 1) * 2**l for l in range(config.layers_per_block))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    r, s, q, k, ch = (
        config.residual_channels,
        config.skip_channels,
        config.classes,
        config.kernel_size,
        config.cond_channels,
    )
    shapes: dict[str, tuple[int, ...]] = {"embedding": (q, r)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes[p + "filter.weight"] = (r, r, k)
        shapes[p + "filter.bias"] = (r,)
        shapes[p + "gate.weight"] = (r, r, k)
        shapes[p + "gate.bias"] = (r,)
        shapes[p + "cond_filter.weight"] = (r, ch)
        shapes[p + "cond_gate.weight"] = (r, ch)
        shapes[p + "residual.weight"] = (r, r)
        shapes[p + "residual.bias"] = (r,)
        shapes[p + "skip.weight"] = (s, r)
        shapes[p + "skip.bias"] = (s,)
    shapes["head1.weight"] = (s, s)
    shapes["head1.bias"] = (s,)
    shapes["head2.weight"] = (q, s)
    shapes["head2.bias"] = (q,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name == "embedding":
        # a lookup is a 1x1 conv on a one-hot of width Q
        return shape[0]
    return int(np.prod(shape[1:]))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Weights ~ U(-a, a) with a = sqrt(1 / fan_in); biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            a = np.sqrt(1.0 / _fan_in(name, shape))
            params[name] = rng.uniform(-a, a, size=shape)
    return params


def validate_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise DataError(f"parameter set does not match config (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DataError(f"{name}: shape {params[name].shape}, config expects {shape}")


def shift_inputs(classes: np.ndarray, center: int) -> np.ndarray:
    """Teacher-forcing input: position t carries classes[t-1]; position 0 the center class."""
    classes = np.asarray(classes)
    out = np.empty_like(classes)
    out[..., 0] = center
    out[..., 1:] = classes[..., :-1]
    return out


def forward(
    params: dict[str, C.Tensor],
    config: ModelConfig,
    inputs: np.ndarray,
    h: np.ndarray,
    tape: C.GradTape | None = None,
    valid: np.ndarray | None = None,
) -> C.Tensor:
    """Logits ``(Q, *inputs.shape)`` for model inputs already shifted for teacher forcing.

    ``inputs`` is ``(T,)`` or ``(B, T)``; ``h`` is ``(C_h, *inputs.shape)``.
    Where ``valid`` is False the layer inputs are zeroed, which makes those
    positions behave exactly like the convolutions' implicit left padding.
    """
    if h.shape != (config.cond_channels,) + inputs.shape:
        raise DataError(f"conditioning has shape {h.shape}, expected {(config.cond_channels,) + inputs.shape}")
    last = config.n_layers - 1
    keep = None if valid is None else np.asarray(valid, dtype=bool)

    hten = C.Tensor(h)
    x = C.embedding(params["embedding"], inputs, tape)
    if keep is not None:
        x = C.mask_time(x, keep, tape)
    skip = None
    for i, d in enumerate(config.dilations):
        p = f"layers.{i}."
        w = C.concat([params[p + "filter.weight"], params[p + "gate.weight"]], tape)
        b = C.concat([params[p + "filter.bias"], params[p + "gate.bias"]], tape)
        v = C.concat([params[p + "cond_filter.weight"], params[p + "cond_gate.weight"]], tape)
        pre = C.add(C.conv1d_causal(x, w, b, d, tape), C.pointwise(hten, v, None, tape), tape)
        z = C.gated_activation(pre, tape)
        sk = C.pointwise(z, params[p + "skip.weight"], params[p + "skip.bias"], tape)
        skip = sk if skip is None else C.add(skip, sk, tape)
        if i == last:
            # the final residual output feeds nothing
            break
        res = C.pointwise(z, params[p + "residual.weight"], params[p + "residual.bias"], tape)
        x = C.add(x, res, tape)
        if keep is not None:
            x = C.mask_time(x, keep, tape)
    out = C.relu(skip, tape)
    out = C.relu(C.pointwise(out, params["head1.weight"], params["head1.bias"], tape), tape)
    logits = C.pointwise(out, params["head2.weight"], params["head2.bias"], tape)
    C.check_finite(logits.data, "network logits")
    return logits


def as_tensors(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, C.Tensor]:
    return {k: C.Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def forward_logits(params: dict[str, np.ndarray], config: ModelConfig, classes, h) -> np.ndarray:
    """Teacher-forced logits, T x Q: row t conditions on classes[:t] and h[:, t]."""
    classes = np.asarray(classes, dtype=np.int64)
    h = np.asarray(h, dtype=np.float64)
    t = classes.shape[-1]
    if h.ndim != 2 or h.shape[1] < t:
        raise DataError(f"conditioning has shape {h.shape}; need {config.cond_channels} x >= {t}")
    if classes.size and (classes.min() < 0 or classes.max() >= config.classes):
        raise DataError(f"class index out of range [0, {config.classes - 1}]")
    inputs = shift_inputs(classes, config.mulaw.center)
    logits = forward(as_tensors(params), config, inputs, h[:, :t])
    return logits.data.T


def loss_and_grads(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    inputs: np.ndarray,
    h: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    valid: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy over weighted positions, its parameter gradients, and the logits."""
    tensors = as_tensors(params, requires_grad=True)
    tape = C.GradTape()
    logits = forward(tensors, config, inputs, h, tape, valid)
    loss, _ = C.cross_entropy(logits, targets, weights, tape)
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    return float(loss.data), grads, logits.data


# ---------------------------------------------------------------------------
# VCKP checkpoints
# ---------------------------------------------------------------------------


def write_vckp(path: str | os.PathLike, header: str, tensors: dict[str, np.ndarray]) -> None:
    """Write a VCKP file atomically (temp file, then rename).

    Layout: magic, u32 version, u32 header length + UTF-8 key=value text,
    then per tensor: u32 name length, name, u32 rank, u32 dims, float64 data.
    All integers and floats little-endian.
    """
    buf = io.BytesIO()
    head = header.encode("utf-8")
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(head)) + head)
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def read_vckp(path: str | os.PathLike) -> tuple[str, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a VCKP checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    header = blob[pos : pos + hlen].decode("utf-8")
    pos += hlen
    tensors = {}
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims))
            if pos + 8 * count > len(blob):
                raise DataError(f"{path}: tensor {name!r} is truncated")
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    return header, tensors


def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray], extra: dict | None = None) -> None:
    header = config.to_text() + "".join(f"{k}={v}\n" for k, v in sorted((extra or {}).items()))
    write_vckp(path, header, params)


def header_values(header: str) -> dict[str, str]:
    out = {}
    for line in header.splitlines():
        key, sep, val = line.partition("=")
        if sep:
            out[key] = val
    return out


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict[str, str]]:
    header, tensors = read_vckp(path)
    try:
        config = ModelConfig.from_text(header)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad model config block ({exc})") from exc
    validate_params(tensors, config)
    return config, tensors, header_values(header)
