import numpy as np
import pytest

from wavevc.fileio import DataError
from wavevc.generator import (
    GenState,
    InferenceNet,
    benchmark,
    classes_to_waveform,
    generate_fast,
    generate_naive,
    naive_layer_inputs,
    step_logits_naive,
)
from wavevc.wavenet import forward_logits, init_params

from conftest import noisy_params, toy_config


def setup(seed=0, t=300, **cfg_overrides):
    cfg = toy_config(**cfg_overrides)
    params = noisy_params(cfg, seed=seed, bias_scale=0.5)
    h = np.random.default_rng(seed).standard_normal((cfg.cond_channels, t))
    return cfg, params, h


@pytest.mark.parametrize("seed", range(8))
def test_fast_equals_naive(seed):
    rng = np.random.default_rng(seed)
    cfg, params, h = setup(
        seed, t=400, kernel_size=int(rng.integers(2, 4)), layers_per_block=int(rng.integers(2, 5)), residual_channels=6
    )
    mode = ["categorical", "argmax", "temperature"][seed % 3]
    a = generate_fast(params, h, 400, seed=seed, mode=mode, config=cfg, temperature=0.7)
    b = generate_naive(params, h, 400, seed=seed, mode=mode, config=cfg, temperature=0.7)
    np.testing.assert_array_equal(a, b)


def test_fast_equals_naive_float32():
    cfg, params, h = setup(3)
    a = generate_fast(params, h, 200, seed=1, config=cfg, dtype=np.float32)
    b = generate_naive(params, h, 200, seed=1, config=cfg, dtype=np.float32)
    np.testing.assert_array_equal(a, b)


def test_naive_logits_agree_with_training_forward():
    cfg, params, h = setup(1, t=60)
    classes = np.random.default_rng(2).integers(0, cfg.classes, 60)
    ref = forward_logits(params, cfg, classes, h)
    net = InferenceNet.from_params(params, cfg)
    for t in (0, 1, 14, 15, 40, 59):
        np.testing.assert_allclose(step_logits_naive(net, classes[: t + 1], h), ref[t], atol=1e-12)


def test_ring_buffers_match_recomputed_layer_inputs():
    cfg, params, h = setup(2, t=120)
    net = InferenceNet.from_params(params, cfg)
    state = GenState(net, seed=5)
    out = np.concatenate([state.advance(h, 37), state.advance(h[:, 37:], 20)])
    record = naive_layer_inputs(net, out, h)
    for layer, d in enumerate(cfg.dilations):
        ring = state.ring(layer)
        assert ring.shape[0] == min(d * (cfg.kernel_size - 1), 57)
        np.testing.assert_array_equal(ring, record[layer, 57 - ring.shape[0] :])


def test_chunked_generation_equals_single_call():
    cfg, params, h = setup(4)
    net = InferenceNet.from_params(params, cfg)
    whole = generate_fast(net, h, 300, seed=9)
    state = GenState(net, seed=9)
    parts = [state.advance(h[:, a:b], b - a) for a, b in [(0, 1), (1, 100), (100, 250), (250, 300)]]
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_zero_length_and_bad_requests():
    cfg, params, h = setup(0, t=10)
    assert generate_fast(params, h, 0, config=cfg).size == 0
    assert generate_naive(params, h, 0, config=cfg).size == 0
    with pytest.raises(ValueError):
        generate_fast(params, h, -1, config=cfg)
    with pytest.raises(DataError):
        generate_fast(params, h, 11, config=cfg)
    with pytest.raises(ValueError):
        generate_fast(params, h, 5, config=cfg, mode="beam")
    with pytest.raises(ValueError):
        generate_fast(params, h, 5, config=cfg, mode="temperature", temperature=0.0)
    with pytest.raises(TypeError):
        generate_fast(params, h, 5)


def test_argmax_ignores_seed():
    cfg, params, h = setup(6)
    a = generate_fast(params, h, 200, seed=1, mode="argmax", config=cfg)
    b = generate_fast(params, h, 200, seed=2, mode="argmax", config=cfg)
    np.testing.assert_array_equal(a, b)


def test_seed_fixes_categorical_output_and_seeds_differ():
    cfg, params, h = setup(7)
    a = generate_fast(params, h, 200, seed=1, config=cfg)
    np.testing.assert_array_equal(a, generate_fast(params, h, 200, seed=1, config=cfg))
    assert not np.array_equal(a, generate_fast(params, h, 200, seed=2, config=cfg))


def test_low_temperature_approaches_argmax():
    cfg, params, h = setup(8)
    cold = generate_fast(params, h, 200, seed=3, mode="temperature", temperature=1e-6, config=cfg)
    np.testing.assert_array_equal(cold, generate_fast(params, h, 200, mode="argmax", config=cfg))


def test_zero_network_emits_head_bias_class():
    cfg = toy_config(classes=64)
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    params["head2.bias"][37] = 50.0
    h = np.zeros((cfg.cond_channels, 50))
    for gen in (generate_fast, generate_naive):
        assert np.all(gen(params, h, 50, seed=0, config=cfg) == 37)


def test_categorical_sampling_follows_softmax():
    cfg = toy_config(classes=4)
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    logp = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
    params["head2.bias"][:] = logp
    out = generate_fast(params, np.zeros((cfg.cond_channels, 20000)), 20000, seed=0, config=cfg)
    freq = np.bincount(out, minlength=4) / 20000
    np.testing.assert_allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.015)


def test_benchmark_and_waveform():
    cfg, params, _ = setup(0)
    rates = benchmark(InferenceNet.from_params(params, cfg), 200, naive_samples=50)
    assert rates["fast"] > 0 and rates["naive"] > 0
    w = classes_to_waveform(np.array([0, 8, 15]), cfg)
    assert len(w) == 3 and w.samples[0] < 0 < w.samples[2]


def test_naive_prefix_continues_a_run():
    cfg, params, h = setup(5)
    net = InferenceNet.from_params(params, cfg)
    # argmax ignores the uniform stream, so a resumed run must reproduce the tail
    whole = generate_fast(net, h, 300, mode="argmax")
    tail = generate_naive(net, h, 180, mode="argmax", prefix=whole[:120])
    np.testing.assert_array_equal(tail, whole[120:])
    np.testing.assert_array_equal(
        generate_naive(net, h, 50, seed=2, prefix=np.zeros(0, dtype=np.int64)), generate_naive(net, h, 50, seed=2)
    )
