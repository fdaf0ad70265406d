"""Mu-law companding and quantization to Q classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MuLawConfig:
    classes: int = 256

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")

    @property
    def mu(self) -> int:
        return self.classes - 1

    @property
    def center(self) -> int:
        """Class of a zero-valued sample."""
        return int(mulaw_encode(np.zeros(1), self)[0])


DEFAULT = MuLawConfig()


def mulaw_encode(x, config: MuLawConfig = DEFAULT) -> np.ndarray:
    """Map samples in [-1, 1] to integer classes in [0, Q-1]. Out-of-range input is clipped."""
    q, mu = config.classes, config.mu
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    y = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    c = np.floor((y + 1.0) / 2.0 * q)
    return np.clip(c, 0, q - 1).astype(np.int64)


def mulaw_decode(c, config: MuLawConfig = DEFAULT) -> np.ndarray:
    """Inverse companding at bin centers."""
    q, mu = config.classes, config.mu
    c = np.asarray(c)
    if c.size and (c.min() < 0 or c.max() >= q):
        raise ValueError(f"class out of range [0, {q - 1}]")
    y = 2.0 * (c + 0.5) / q - 1.0
    return np.sign(y) * ((1.0 + mu) ** np.abs(y) - 1.0) / mu
