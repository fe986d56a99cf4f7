"""Small per-view CNN encoder over 32x32 grayscale rasters."""

from __future__ import annotations

import numpy as np

from . import nn

IMAGE_SIZE = 32


class ViewCNN(nn.Module):
    """3 stride-2 valid convs (8/16/32 channels) + linear embedding."""

    def __init__(self, rng: np.random.Generator, embed_dim: int,
                 name: str, channels: tuple[int, int, int] = (8, 16, 32)):
        c1, c2, c3 = channels
        self.w1 = nn.Parameter(
            rng.uniform(-1, 1, (3, 3, 1, c1)) / 3.0, f"{name}.w1")
        self.w2 = nn.Parameter(
            rng.uniform(-1, 1, (3, 3, c1, c2)) / np.sqrt(9 * c1), f"{name}.w2")
        self.w3 = nn.Parameter(
            rng.uniform(-1, 1, (3, 3, c2, c3)) / np.sqrt(9 * c2), f"{name}.w3")
        # 32 -> 15 -> 7 -> 3 spatial after three stride-2 valid convs.
        self.out = nn.Linear(3 * 3 * c3, embed_dim, rng, f"{name}.out")
        self.embed_dim = embed_dim

    def __call__(self, images: np.ndarray | nn.Tensor) -> nn.Tensor:
        """images [B, 32, 32] -> embeddings [B, embed_dim]."""
        x = images if isinstance(images, nn.Tensor) else nn.Tensor(images)
        B = x.shape[0]
        x = x.reshape(B, IMAGE_SIZE, IMAGE_SIZE, 1)
        x = nn.relu(nn.conv2d(x, self.w1, stride=2))
        x = nn.relu(nn.conv2d(x, self.w2, stride=2))
        x = nn.relu(nn.conv2d(x, self.w3, stride=2))
        return self.out(x.reshape(B, -1))
