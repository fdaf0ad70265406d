"""Autoregressive sampling from a trained model.

Two paths produce the same class sequence bit for bit:

* ``generate_naive`` recomputes every layer over the trailing receptive
  field for each new sample.
* ``generate_fast`` keeps, per layer, a ring buffer of the last
  ``(K - 1) * dilation`` layer inputs, so each sample costs one column per
  layer regardless of position.

Both call the same compiled column kernel, which accumulates every dot
product in a fixed order; the speedup comes from caching only.

Random numbers come from numpy's PCG64 (``default_rng(seed)``), one uniform
double per generated sample, drawn in order, also in argmax mode.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .codec import mulaw_decode
from .compute import check_finite
from .fileio import DataError, Waveform
from .wavenet import ModelConfig, receptive_field, validate_params

log = logging.getLogger(__name__)

MODES = {"categorical": 0, "argmax": 1, "temperature": 2}


@dataclass
class InferenceNet:
    """Model parameters packed into stacked arrays for the compiled kernels."""

    config: ModelConfig
    emb: np.ndarray  # Q x R
    wx: np.ndarray  # L x 2R x K*R, tap-major columns, filter rows then gate rows
    wh: np.ndarray  # L x 2R x C_h
    b: np.ndarray  # L x 2R
    wrs: np.ndarray  # L x (R+S) x R, residual rows then skip rows
    brs: np.ndarray  # L x (R+S)
    dil: np.ndarray  # L
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray], config: ModelConfig, dtype=np.float64) -> "InferenceNet":
        validate_params(params, config)
        for name, value in params.items():
            check_finite(value, f"parameter {name!r}")
        L, k = config.n_layers, config.kernel_size
        wx, wh, b, wrs, brs = [], [], [], [], []
        for i in range(L):
            p = f"layers.{i}."
            w = np.concatenate([params[p + "filter.weight"], params[p + "gate.weight"]], axis=0)
            wx.append(w.transpose(0, 2, 1).reshape(w.shape[0], k * w.shape[1]))
            wh.append(np.concatenate([params[p + "cond_filter.weight"], params[p + "cond_gate.weight"]], axis=0))
            b.append(np.concatenate([params[p + "filter.bias"], params[p + "gate.bias"]]))
            wrs.append(np.concatenate([params[p + "residual.weight"], params[p + "skip.weight"]], axis=0))
            brs.append(np.concatenate([params[p + "residual.bias"], params[p + "skip.bias"]]))

        def pack(a):
            return np.ascontiguousarray(a, dtype=dtype)

        return cls(
            config,
            pack(params["embedding"]),
            pack(np.stack(wx)),
            pack(np.stack(wh)),
            pack(np.stack(b)),
            pack(np.stack(wrs)),
            pack(np.stack(brs)),
            np.asarray(config.dilations, dtype=np.int64),
            pack(params["head1.weight"]),
            pack(params["head1.bias"]),
            pack(params["head2.weight"]),
            pack(params["head2.bias"]),
        )

    @property
    def dtype(self):
        return self.emb.dtype

    def kernel_args(self):
        return (self.emb, self.wx, self.wh, self.b, self.wrs, self.brs, self.dil, self.w1, self.b1, self.w2, self.b2)


# ---------------------------------------------------------------------------
# Compiled kernels. Every reduction runs j = 0, 1, ... starting from the bias.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + np.exp(-v))
    e = np.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def _column(wx, wh, b, wrs, brs, taps, hcol, xout, skip, pre, z, is_last):
    """One layer at one time step. ``taps[k]`` is the input delayed by (K-1-k)*d."""
    two_r = wx.shape[0]
    r = two_r // 2
    kk = taps.shape[0]
    ch = hcol.shape[0]
    for o in range(two_r):
        acc = b[o]
        for k in range(kk):
            for j in range(r):
                acc += wx[o, k * r + j] * taps[k, j]
        for j in range(ch):
            acc += wh[o, j] * hcol[j]
        pre[o] = acc
    for o in range(r):
        z[o] = np.tanh(pre[o]) * _sigmoid(pre[r + o])
    n_out = wrs.shape[0]
    for o in range(n_out):
        if o < r and is_last:
            continue
        acc = brs[o]
        for j in range(r):
            acc += wrs[o, j] * z[j]
        if o < r:
            xout[o] = taps[kk - 1, o] + acc
        else:
            skip[o - r] += acc


@njit(cache=True)
def _head(w1, b1, w2, b2, skip, logits):
    s = skip.shape[0]
    a1 = np.empty(s, dtype=skip.dtype)
    for o in range(s):
        acc = b1[o]
        for j in range(s):
            v = skip[j]
            if v > 0:
                acc += w1[o, j] * v
        a1[o] = acc if acc > 0 else 0.0
    for o in range(w2.shape[0]):
        acc = b2[o]
        for j in range(s):
            acc += w2[o, j] * a1[j]
        logits[o] = acc


@njit(cache=True)
def _sample(logits, mode, tau, u):
    q = logits.shape[0]
    best = 0
    for i in range(1, q):
        if logits[i] > logits[best]:
            best = i
    if mode == 1:
        return best
    m = logits[best]
    total = 0.0
    cdf = np.empty(q)
    for i in range(q):
        total += np.exp((logits[i] - m) / tau)
        cdf[i] = total
    target = u * total
    for i in range(q):
        if cdf[i] > target:
            return i
    return q - 1


@njit(cache=True)
def _fast_steps(emb, wx, wh, b, wrs, brs, dil, w1, b1, w2, b2, h, u, mode, tau, bufs, t0, prev, out):
    """Advance the cached generator by ``out.shape[0]`` samples from time ``t0``."""
    n_layers = wx.shape[0]
    r = emb.shape[1]
    kk = wx.shape[2] // r
    s = w1.shape[0]
    dt = emb.dtype
    x = np.empty(r, dtype=dt)
    xn = np.empty(r, dtype=dt)
    taps = np.empty((kk, r), dtype=dt)
    skip = np.empty(s, dtype=dt)
    pre = np.empty(2 * r, dtype=dt)
    z = np.empty(r, dtype=dt)
    logits = np.empty(w2.shape[0], dtype=dt)
    for n in range(out.shape[0]):
        t = t0 + n
        for j in range(r):
            x[j] = emb[prev, j]
        skip[:] = 0.0
        for l in range(n_layers):
            d = dil[l]
            span = (kk - 1) * d
            for k in range(kk - 1):
                lag = (kk - 1 - k) * d
                slot = (t - lag) % span
                for j in range(r):
                    taps[k, j] = bufs[l, slot, j]
            for j in range(r):
                taps[kk - 1, j] = x[j]
            if span > 0:
                slot = t % span
                for j in range(r):
                    bufs[l, slot, j] = x[j]
            _column(wx[l], wh[l], b[l], wrs[l], brs[l], taps, h[:, n], xn, skip, pre, z, l == n_layers - 1)
            for j in range(r):
                x[j] = xn[j]
        _head(w1, b1, w2, b2, skip, logits)
        prev = _sample(logits, mode, tau, u[n])
        out[n] = prev
    return prev


@njit(cache=True)
def _stack_forward(emb, wx, wh, b, wrs, brs, dil, inputs, h, skip_out, record):
    """Run every layer over all positions of ``inputs`` (already shifted classes).

    Positions before the first one are treated as zeros at every layer. The
    skip sum of the final position goes to ``skip_out``. If ``record`` has
    rows, ``record[l]`` receives the input of layer l at every position.
    """
    n_layers = wx.shape[0]
    r = emb.shape[1]
    kk = wx.shape[2] // r
    dt = emb.dtype
    T = inputs.shape[0]
    cur = np.empty((T, r), dtype=dt)
    nxt = np.empty((T, r), dtype=dt)
    for i in range(T):
        for j in range(r):
            cur[i, j] = emb[inputs[i], j]
    taps = np.empty((kk, r), dtype=dt)
    pre = np.empty(2 * r, dtype=dt)
    z = np.empty(r, dtype=dt)
    dummy = np.zeros(skip_out.shape[0], dtype=dt)
    skip_out[:] = 0.0
    for l in range(n_layers):
        if record.shape[0] > 0:
            record[l] = cur
        d = dil[l]
        is_last = l == n_layers - 1
        for i in range(T):
            for k in range(kk):
                src = i - (kk - 1 - k) * d
                for j in range(r):
                    taps[k, j] = cur[src, j] if src >= 0 else 0.0
            sk = skip_out if i == T - 1 else dummy
            _column(wx[l], wh[l], b[l], wrs[l], brs[l], taps, h[:, i], nxt[i], sk, pre, z, is_last)
        cur, nxt = nxt, cur


@njit(cache=True)
def _naive_steps(emb, wx, wh, b, wrs, brs, dil, w1, b1, w2, b2, h, u, mode, tau, rf, center, t0, out):
    """Fill ``out[t0:]``; ``out[:t0]`` holds a fixed history."""
    n = out.shape[0]
    s = w1.shape[0]
    dt = emb.dtype
    skip = np.empty(s, dtype=dt)
    logits = np.empty(w2.shape[0], dtype=dt)
    no_record = np.empty((0, 1, emb.shape[1]), dtype=dt)
    for t in range(t0, n):
        start = t - rf + 1
        if start < 0:
            start = 0
        w = t - start + 1
        inputs = np.empty(w, dtype=np.int64)
        for i in range(w):
            p = start + i
            inputs[i] = center if p == 0 else out[p - 1]
        _stack_forward(emb, wx, wh, b, wrs, brs, dil, inputs, h[:, start : t + 1], skip, no_record)
        _head(w1, b1, w2, b2, skip, logits)
        out[t] = _sample(logits, mode, tau, u[t - t0])


# ---------------------------------------------------------------------------
# Python-facing API
# ---------------------------------------------------------------------------


def _check_request(net: InferenceNet, h: np.ndarray, n_samples: int, mode: str) -> None:
    if n_samples < 0:
        raise ValueError(f"n_samples must be >= 0, got {n_samples}")
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}; choose from {sorted(MODES)}")
    if h.ndim != 2 or h.shape[0] != net.config.cond_channels:
        raise DataError(f"conditioning has shape {h.shape}; model expects {net.config.cond_channels} channels")
    if h.shape[1] < n_samples:
        raise DataError(f"conditioning has {h.shape[1]} columns, fewer than the {n_samples} requested samples")


def _as_net(model, config: ModelConfig | None, dtype) -> InferenceNet:
    if isinstance(model, InferenceNet):
        return model
    if config is None:
        raise TypeError("config is required when passing a parameter dict")
    return InferenceNet.from_params(model, config, dtype)


def _tau(mode: str, temperature: float) -> float:
    if mode == "temperature":
        if not temperature > 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        return float(temperature)
    return 1.0


@dataclass
class GenState:
    """Cached incremental generator for one utterance."""

    net: InferenceNet
    seed: int = 0
    mode: str = "categorical"
    temperature: float = 1.0
    position: int = 0
    prev: int = -1
    bufs: np.ndarray = field(default=None, repr=False)
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        cfg = self.net.config
        if self.mode not in MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}; choose from {sorted(MODES)}")
        span = max((cfg.kernel_size - 1) * d for d in cfg.dilations)
        if self.bufs is None:
            self.bufs = np.zeros((cfg.n_layers, max(span, 1), cfg.residual_channels), dtype=self.net.dtype)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        if self.prev < 0:
            self.prev = cfg.mulaw.center

    def ring(self, layer: int) -> np.ndarray:
        """Buffered inputs of ``layer`` for times ``position - span .. position - 1``, oldest first."""
        cfg = self.net.config
        span = (cfg.kernel_size - 1) * cfg.dilations[layer]
        times = np.arange(self.position - span, self.position)
        times = times[times >= 0]
        return self.bufs[layer, times % span] if span else self.bufs[layer, :0]

    def advance(self, h: np.ndarray, n: int) -> np.ndarray:
        """Generate ``n`` samples using conditioning columns ``h[:, :n]`` for positions ``position ..``."""
        _check_request(self.net, h, n, self.mode)
        out = np.empty(n, dtype=np.int64)
        if n == 0:
            return out
        u = self.rng.random(n)
        hh = np.ascontiguousarray(h[:, :n], dtype=self.net.dtype)
        tau = _tau(self.mode, self.temperature)
        self.prev = int(
            _fast_steps(*self.net.kernel_args(), hh, u, MODES[self.mode], tau, self.bufs, self.position, self.prev, out)
        )
        self.position += n
        return out


def generate_fast(
    model,
    h: np.ndarray,
    n_samples: int,
    seed: int = 0,
    mode: str = "categorical",
    config: ModelConfig | None = None,
    temperature: float = 1.0,
    dtype=np.float64,
) -> np.ndarray:
    """Sample ``n_samples`` classes with per-layer ring-buffer caches."""
    net = _as_net(model, config, dtype)
    h = np.asarray(h)
    _check_request(net, h, n_samples, mode)
    state = GenState(net, seed=seed, mode=mode, temperature=temperature)
    return state.advance(h, n_samples)


def generate_naive(
    model,
    h: np.ndarray,
    n_samples: int,
    seed: int = 0,
    mode: str = "categorical",
    config: ModelConfig | None = None,
    temperature: float = 1.0,
    dtype=np.float64,
    prefix: np.ndarray | None = None,
) -> np.ndarray:
    """Sample ``n_samples`` classes, recomputing the trailing receptive field each step.

    ``prefix`` is an optional fixed history of classes that precedes the
    generated ones; ``h`` then covers prefix and new samples together.
    """
    net = _as_net(model, config, dtype)
    h = np.asarray(h)
    t0 = 0 if prefix is None else len(prefix)
    _check_request(net, h, t0 + n_samples, mode)
    out = np.empty(t0 + n_samples, dtype=np.int64)
    if t0:
        out[:t0] = prefix
    if n_samples == 0:
        return out[t0:]
    u = np.random.default_rng(seed).random(n_samples)
    hh = np.ascontiguousarray(h[:, : t0 + n_samples], dtype=net.dtype)
    rf = receptive_field(net.config)
    _naive_steps(
        *net.kernel_args(), hh, u, MODES[mode], _tau(mode, temperature), rf, net.config.mulaw.center, t0, out
    )
    return out[t0:]


def naive_layer_inputs(net: InferenceNet, classes: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Every layer's input at every position, recomputed from scratch (L x T x R)."""
    classes = np.asarray(classes, dtype=np.int64)
    inputs = np.empty_like(classes)
    if classes.size:
        inputs[0] = net.config.mulaw.center
        inputs[1:] = classes[:-1]
    skip = np.zeros(net.config.skip_channels, dtype=net.dtype)
    hh = np.ascontiguousarray(h[:, : len(classes)], dtype=net.dtype)
    record = np.zeros((net.config.n_layers, len(classes), net.config.residual_channels), dtype=net.dtype)
    _stack_forward(*net.kernel_args()[:7], inputs, hh, skip, record)
    return record


def step_logits_naive(net: InferenceNet, classes: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Logits at the last position of ``classes`` computed with the generation kernels."""
    classes = np.asarray(classes, dtype=np.int64)
    inputs = np.empty_like(classes)
    inputs[0] = net.config.mulaw.center
    inputs[1:] = classes[:-1]
    skip = np.zeros(net.config.skip_channels, dtype=net.dtype)
    hh = np.ascontiguousarray(h[:, : len(classes)], dtype=net.dtype)
    no_record = np.zeros((0, 1, net.config.residual_channels), dtype=net.dtype)
    _stack_forward(*net.kernel_args()[:7], inputs, hh, skip, no_record)
    logits = np.empty(net.config.classes, dtype=net.dtype)
    _head(net.w1, net.b1, net.w2, net.b2, skip, logits)
    return logits


def benchmark(net: InferenceNet, n_samples: int, seed: int = 0, naive_samples: int | None = None) -> dict[str, float]:
    """Samples per second for both paths on random conditioning.

    The naive path is timed in steady state: it starts after a random
    history one receptive field long, so every step recomputes a full window.
    """
    rng = np.random.default_rng(seed)
    m = n_samples if naive_samples is None else min(naive_samples, n_samples)
    rf = receptive_field(net.config)
    h = rng.standard_normal((net.config.cond_channels, rf + n_samples))
    history = rng.integers(0, net.config.classes, rf)
    # warm the compiled kernels outside the timed region
    generate_fast(net, h, 2, seed)
    generate_naive(net, h[:, :4], 2, seed, prefix=history[:2])
    rates = {}
    t0 = time.perf_counter()
    generate_fast(net, h, n_samples, seed)
    rates["fast"] = n_samples / (time.perf_counter() - t0)
    t0 = time.perf_counter()
    generate_naive(net, h, m, seed, prefix=history)
    rates["naive"] = m / (time.perf_counter() - t0)
    return rates


def classes_to_waveform(classes: np.ndarray, config: ModelConfig, sample_rate: int = 16000) -> Waveform:
    return Waveform(mulaw_decode(classes, config.mulaw), sample_rate)
