import numpy as np
import pytest

from wavevc.wavenet import ModelConfig, init_params


def toy_config(**overrides):
    base = dict(blocks=2, layers_per_block=3, kernel_size=2, residual_channels=8, skip_channels=8, classes=16, cond_channels=5)
    base.update(overrides)
    return ModelConfig(**base)


def noisy_params(config, seed=0, bias_scale=0.1):
    """Initialized weights plus nonzero biases, so every parameter carries gradient."""
    params = init_params(config, seed)
    rng = np.random.default_rng([seed, 1])
    for name, value in params.items():
        if name.endswith(".bias"):
            params[name] = rng.uniform(-bias_scale, bias_scale, size=value.shape)
    return params


@pytest.fixture
def toy():
    return toy_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.report_lines():
            terminalreporter.write_line(line)
