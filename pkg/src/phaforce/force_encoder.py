"""Shared TCN wrench-history encoder.

One encoder instance is shared by the phase predictor, the slow planner and
the fast corrector. It exposes two heads over the same dilated-causal-conv
trunk:

* `encode_tokens`: a causal token per history position (slow planner),
* `encode_pooled`: mean-pool over positions + projection (CAP / fast).
"""

from __future__ import annotations

import numpy as np

from . import nn

DEFAULT_WINDOW = 36          # ~1.5 s of wrench history at 24 Hz
WRENCH_DIM = 6


class WrenchWindow:
    """H_w x 6 wrench history [Fx,Fy,Fz,tx,ty,tz], TCP frame, oldest first."""

    def __init__(self, samples: np.ndarray, window: int = DEFAULT_WINDOW):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape != (window, WRENCH_DIM):
            raise ValueError(
                f"expected ({window}, {WRENCH_DIM}) wrench window, "
                f"got {samples.shape}")
        if not np.isfinite(samples).all():
            raise ValueError("non-finite wrench samples")
        self.samples = samples
        self.window = window

    @staticmethod
    def zeros(window: int = DEFAULT_WINDOW) -> "WrenchWindow":
        return WrenchWindow(np.zeros((window, WRENCH_DIM)), window)

    def latest(self) -> np.ndarray:
        return self.samples[-1]


class ForceEncoder(nn.Module):
    """4 residual TCN blocks (kernel 2, dilations 1/2/4/8, width 32).

    Normalization is a per-channel affine fixed from training statistics and
    stored alongside the checkpoint; it defaults to identity until
    `set_normalization` is called.
    """

    def __init__(self, rng: np.random.Generator, token_dim: int = 96,
                 pooled_dim: int = 32, hidden: int = 32,
                 window: int = DEFAULT_WINDOW, name: str = "force"):
        self.window = window
        self.token_dim = token_dim
        self.pooled_dim = pooled_dim
        self.hidden = hidden
        dil = [1, 2, 4, 8]
        self.blocks = [
            nn.TCNBlock(WRENCH_DIM if i == 0 else hidden, hidden, 2, d, rng,
                        f"{name}.block{i}") for i, d in enumerate(dil)]
        self.token_head = nn.Linear(hidden, token_dim, rng, f"{name}.tokens")
        self.pool_head = nn.Linear(hidden, pooled_dim, rng, f"{name}.pooled")
        self.norm_mean = np.zeros(WRENCH_DIM)
        self.norm_std = np.ones(WRENCH_DIM)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray):
        self.norm_mean = np.asarray(mean, dtype=np.float64).reshape(WRENCH_DIM)
        std = np.asarray(std, dtype=np.float64).reshape(WRENCH_DIM)
        self.norm_std = np.where(std < 1e-8, 1.0, std)

    def normalization_arrays(self) -> dict[str, np.ndarray]:
        return {"wrench_mean": self.norm_mean, "wrench_std": self.norm_std}

    def trunk(self, samples: nn.Tensor) -> nn.Tensor:
        """Normalized samples [..., H_w, 6] -> hidden sequence [..., H_w, h]."""
        x = (samples - nn.Tensor(self.norm_mean)) * \
            nn.Tensor(1.0 / self.norm_std)
        for block in self.blocks:
            x = block(x)
        return x

    def encode_tokens(self, w: WrenchWindow) -> nn.Tensor:
        """Force token sequence, shape (H_w, token_dim); row i is causal in i."""
        return self.token_head(self.trunk(nn.Tensor(w.samples)))

    def encode_pooled(self, w: WrenchWindow) -> nn.Tensor:
        """Mean-pool trunk outputs over time, then project to pooled_dim."""
        h = self.trunk(nn.Tensor(w.samples))
        return self.pool_head(h.mean(axis=-2))

    # Batched variants used by the training loops; samples [B, H_w, 6].
    def tokens_batch(self, samples: np.ndarray) -> nn.Tensor:
        return self.token_head(self.trunk(nn.Tensor(samples)))

    def pooled_batch(self, samples: np.ndarray) -> nn.Tensor:
        return self.pool_head(self.trunk(nn.Tensor(samples)).mean(axis=-2))
