"""Numeric kernels with a small reverse-mode tape, plus Adam.

Arrays use a channels-first layout: ``(C, T)`` for a single sequence or
``(C, B, T)`` for a batch of equal-length sequences. Time is always the
last axis; convolutions only look backwards along it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


class Tensor:
    """An ndarray with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # never in place: ``g`` may be shared with another tensor's grad
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


class GradTape:
    """Ordered record of primitive ops; ``backward`` replays it in reverse."""

    def __init__(self):
        self._ops: list[tuple[str, Callable[[], None]]] = []

    def __len__(self) -> int:
        return len(self._ops)

    @property
    def op_names(self) -> list[str]:
        return [name for name, _ in self._ops]

    def record(self, name: str, backward: Callable[[], None]) -> None:
        self._ops.append((name, backward))

    def backward(
        self, loss: Tensor, visit: Callable[[str], None] | None = None, seed: np.ndarray | None = None
    ) -> None:
        """Propagate from ``loss``; a non-scalar output needs an explicit ``seed`` gradient."""
        if seed is None:
            if loss.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        elif np.shape(seed) != loss.shape:
            raise ValueError(f"seed shape {np.shape(seed)} does not match output {loss.shape}")
        loss.grad = np.asarray(seed, dtype=np.float64)
        for name, fn in reversed(self._ops):
            if visit is not None:
                visit(name)
            fn()
        self._ops.clear()


def _needs_tape(tape: GradTape | None, *inputs: Tensor | None) -> bool:
    return tape is not None and any(t is not None and t.requires_grad for t in inputs)


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def conv1d_causal(
    x: Tensor,
    w: Tensor,
    b: Tensor | None,
    dilation: int = 1,
    tape: GradTape | None = None,
) -> Tensor:
    """Dilated causal convolution.

    ``w[:, :, k]`` multiplies the input delayed by ``(K - 1 - k) * dilation``
    steps, so the last tap sees the current sample. The input is implicitly
    left-padded with zeros and the output has the input's length.
    """
    xd, wd = x.data, w.data
    if wd.ndim != 3:
        raise ValueError(f"weights must be C_out x C_in x K, got shape {wd.shape}")
    c_out, c_in, k = wd.shape
    if k < 1 or dilation < 1:
        raise ValueError(f"need K >= 1 and dilation >= 1, got K={k}, dilation={dilation}")
    if xd.ndim < 2 or xd.shape[0] != c_in:
        raise ValueError(f"input has shape {xd.shape}, weights expect {c_in} input channels")
    if b is not None and b.data.shape != (c_out,):
        raise ValueError(f"bias shape {b.data.shape} does not match {c_out} output channels")
    check_finite(xd, "conv1d_causal input")
    check_finite(wd, "conv1d_causal weights")

    rest = xd.shape[1:]
    n = xd.shape[-1]
    shifts = [(k - 1 - j) * dilation for j in range(k)]
    if k == 1:
        stacked = xd.reshape(c_in, -1)
    else:
        buf = np.zeros((k * c_in,) + rest)
        for j, s in enumerate(shifts):
            if s < n:
                buf[j * c_in : (j + 1) * c_in, ..., s:] = xd[..., : n - s]
        stacked = buf.reshape(k * c_in, -1)
    # (C_out, K*C_in) with tap-major columns to match ``stacked``
    wflat = wd.transpose(0, 2, 1).reshape(c_out, k * c_in)
    out = wflat @ stacked
    if b is not None:
        out += b.data[:, None]
    result = Tensor(out.reshape((c_out,) + rest), requires_grad=_needs_tape(tape, x, w, b))

    if result.requires_grad:

        def backward():
            g = result.grad.reshape(c_out, -1)
            if w.requires_grad:
                gw = (g @ stacked.T).reshape(c_out, k, c_in).transpose(0, 2, 1)
                _accumulate(w, gw)
            if b is not None and b.requires_grad:
                _accumulate(b, g.sum(axis=1))
            if x.requires_grad:
                gs = (wflat.T @ g).reshape((k, c_in) + rest)
                gx = gs[k - 1].copy()
                for j, s in enumerate(shifts[:-1]):
                    if s < n:
                        gx[..., : n - s] += gs[j][..., s:]
                _accumulate(x, gx)

        tape.record("conv1d_causal", backward)
    return result


def pointwise(x: Tensor, w: Tensor, b: Tensor | None = None, tape: GradTape | None = None) -> Tensor:
    """1x1 convolution: ``w @ x`` over the channel axis, with optional bias."""
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.shape[0] != wd.shape[1]:
        raise ValueError(f"cannot apply weights {wd.shape} to input {xd.shape}")
    c_out = wd.shape[0]
    rest = xd.shape[1:]
    flat = xd.reshape(xd.shape[0], -1)
    out = wd @ flat
    if b is not None:
        out += b.data[:, None]
    result = Tensor(out.reshape((c_out,) + rest), requires_grad=_needs_tape(tape, x, w, b))

    if result.requires_grad:

        def backward():
            g = result.grad.reshape(c_out, -1)
            if w.requires_grad:
                _accumulate(w, g @ flat.T)
            if b is not None and b.requires_grad:
                _accumulate(b, g.sum(axis=1))
            if x.requires_grad:
                _accumulate(x, (wd.T @ g).reshape(xd.shape))

        tape.record("pointwise", backward)
    return result


def embedding(table: Tensor, index: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Look up rows of ``table`` (Q x C); returns channels-first ``(C, *index.shape)``."""
    index = np.asarray(index)
    q = table.data.shape[0]
    if index.size and (index.min() < 0 or index.max() >= q):
        raise ValueError(f"class index out of range [0, {q - 1}]")
    flat = index.reshape(-1)
    out = np.ascontiguousarray(table.data[flat].T).reshape((table.data.shape[1],) + index.shape)
    result = Tensor(out, requires_grad=_needs_tape(tape, table))

    if result.requires_grad:

        def backward():
            g = result.grad.reshape(table.data.shape[1], -1)
            gt = np.zeros_like(table.data)
            np.add.at(gt, flat, g.T)
            _accumulate(table, gt)

        tape.record("embedding", backward)
    return result


def add(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    result = Tensor(a.data + b.data, requires_grad=_needs_tape(tape, a, b))
    if result.requires_grad:

        def backward():
            _accumulate(a, result.grad)
            _accumulate(b, result.grad)

        tape.record("add", backward)
    return result


def mul(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in mul: {a.shape} vs {b.shape}")
    result = Tensor(a.data * b.data, requires_grad=_needs_tape(tape, a, b))
    if result.requires_grad:

        def backward():
            if a.requires_grad:
                _accumulate(a, result.grad * b.data)
            if b.requires_grad:
                _accumulate(b, result.grad * a.data)

        tape.record("mul", backward)
    return result


def mask_time(x: Tensor, keep: np.ndarray, tape: GradTape | None = None) -> Tensor:
    """Zero the positions where ``keep`` is False (broadcast over channels)."""
    m = np.asarray(keep, dtype=x.data.dtype)
    result = Tensor(x.data * m, requires_grad=_needs_tape(tape, x))
    if result.requires_grad:

        def backward():
            _accumulate(x, result.grad * m)

        tape.record("mask_time", backward)
    return result


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: one transcendental pass and no overflow
    out = np.tanh(0.5 * x)
    out *= 0.5
    out += 0.5
    return out


def tanh(x: Tensor, tape: GradTape | None = None) -> Tensor:
    y = np.tanh(x.data)
    result = Tensor(y, requires_grad=_needs_tape(tape, x))
    if result.requires_grad:

        def backward():
            _accumulate(x, result.grad * (1.0 - y * y))

        tape.record("tanh", backward)
    return result


def sigmoid_op(x: Tensor, tape: GradTape | None = None) -> Tensor:
    y = sigmoid(x.data)
    result = Tensor(y, requires_grad=_needs_tape(tape, x))
    if result.requires_grad:

        def backward():
            _accumulate(x, result.grad * y * (1.0 - y))

        tape.record("sigmoid", backward)
    return result


def relu(x: Tensor, tape: GradTape | None = None) -> Tensor:
    pos = x.data > 0
    result = Tensor(np.where(pos, x.data, 0.0), requires_grad=_needs_tape(tape, x))
    if result.requires_grad:

        def backward():
            _accumulate(x, np.where(pos, result.grad, 0.0))

        tape.record("relu", backward)
    return result


def gated_activation(pre: Tensor, tape: GradTape | None = None) -> Tensor:
    """``tanh(pre[:C]) * sigmoid(pre[C:])`` for a pre-activation with 2C channels."""
    c2 = pre.data.shape[0]
    if c2 % 2:
        raise ValueError(f"gated activation needs an even channel count, got {c2}")
    c = c2 // 2
    f = np.tanh(pre.data[:c])
    g = sigmoid(pre.data[c:])
    result = Tensor(f * g, requires_grad=_needs_tape(tape, pre))
    if result.requires_grad:

        def backward():
            go = result.grad
            gp = np.empty_like(pre.data)
            top, bot = gp[:c], gp[c:]
            np.multiply(f, f, out=top)
            np.subtract(1.0, top, out=top)
            top *= g
            top *= go
            np.subtract(1.0, g, out=bot)
            bot *= result.data
            bot *= go
            _accumulate(pre, gp)

        tape.record("gated_activation", backward)
    return result


def concat(parts: list[Tensor], tape: GradTape | None = None) -> Tensor:
    """Concatenate along axis 0."""
    sizes = [p.data.shape[0] for p in parts]
    result = Tensor(np.concatenate([p.data for p in parts], axis=0), requires_grad=_needs_tape(tape, *parts))
    if result.requires_grad:

        def backward():
            start = 0
            for p, n in zip(parts, sizes):
                _accumulate(p, result.grad[start : start + n])
                start += n

        tape.record("concat", backward)
    return result


def split(x: Tensor, sizes: list[int], tape: GradTape | None = None) -> list[Tensor]:
    """Split along axis 0 into consecutive chunks of the given sizes."""
    if sum(sizes) != x.data.shape[0]:
        raise ValueError(f"split sizes {sizes} do not cover {x.data.shape[0]} channels")
    outs, start = [], 0
    for n in sizes:
        outs.append(Tensor(x.data[start : start + n], requires_grad=_needs_tape(tape, x)))
        start += n
    if _needs_tape(tape, x):

        def backward():
            parts = [o.grad if o.grad is not None else np.zeros_like(o.data) for o in outs]
            _accumulate(x, np.concatenate(parts, axis=0))

        tape.record("split", backward)
    return outs


def _xent_columns(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Weighted softmax cross-entropy with classes on axis 0.

    Returns ``(loss, dlogits, probs)`` where the loss is the weighted mean
    over columns.
    """
    shifted = logits - logits.max(axis=0, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=0, keepdims=True)
    probs = expd / denom
    cols = np.arange(logits.shape[1])
    logp_target = shifted[targets, cols] - np.log(denom[0])
    total = weights.sum()
    loss = -(weights * logp_target).sum() / total
    grad = probs.copy()
    grad[targets, cols] -= 1.0
    grad *= weights / total
    return loss, grad, probs


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is ``T x Q``. Returns the loss and its gradient with respect
    to ``logits`` (rows are ``softmax - onehot``, scaled by ``1/T``).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} disagree")
    q = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= q):
        raise ValueError(f"target class out of range [0, {q - 1}]")
    loss, grad, _ = _xent_columns(logits.T, targets, np.ones(len(targets)))
    return float(loss), grad.T


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    tape: GradTape | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Tape version for channels-first logits ``(Q, *positions)``.

    ``weights`` (same shape as ``targets``) selects which positions count;
    zero-weight positions contribute neither loss nor gradient. Returns the
    scalar loss tensor and the softmax probabilities.
    """
    q = logits.data.shape[0]
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[1:]:
        raise ValueError(f"targets {targets.shape} do not match logits {logits.data.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= q):
        raise ValueError(f"target class out of range [0, {q - 1}]")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        raise ValueError("cross_entropy needs at least one weighted position")
    flat = logits.data.reshape(q, -1)
    loss, grad, probs = _xent_columns(flat, targets.reshape(-1), w.reshape(-1))
    result = Tensor(np.array(loss), requires_grad=_needs_tape(tape, logits))
    if result.requires_grad:

        def backward():
            _accumulate(logits, (grad * result.grad).reshape(logits.data.shape))

        tape.record("cross_entropy", backward)
    return result, probs.reshape(logits.data.shape)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place.

    Every gradient is validated before anything is touched, so a bad
    gradient leaves params and state exactly as they were.
    """
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    probes: int = 50,
    delta: float = 1e-5,
    seed: int = 0,
    coords: Iterable[tuple[str, int]] | None = None,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)``. Coordinates are drawn
    uniformly over all parameter entries unless ``coords`` lists them as
    ``(name, flat_index)``. Relative error is ``|analytic - numeric| /
    max(|numeric|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    _, grads = loss_fn(params)
    if coords is None:
        names = list(params)
        sizes = np.array([params[n].size for n in names])
        rng = np.random.default_rng(seed)
        flat = rng.choice(sizes.sum(), size=min(probes, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        coords = []
        for f in flat:
            i = int(np.searchsorted(offsets, f, side="right") - 1)
            coords.append((names[i], int(f - offsets[i])))

    worst = 0.0
    for name, idx in coords:
        p = params[name].reshape(-1)
        orig = p[idx]
        p[idx] = orig + delta
        up, _ = loss_fn(params)
        p[idx] = orig - delta
        down, _ = loss_fn(params)
        p[idx] = orig
        numeric = (up - down) / (2.0 * delta)
        analytic = grads[name].reshape(-1)[idx]
        err = abs(analytic - numeric) / max(abs(numeric), floor)
        worst = max(worst, float(err))
    return worst
