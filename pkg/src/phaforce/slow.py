"""Slow diffusion planner.

Vision-force fusion: the visual token queries the force-token sequence via
multi-head cross attention; per-head outputs are reweighted by a
phase-belief gate, the projected result is orthogonalized against the visual
token and injected as a bounded residual gated by the contact probability.
The fused token conditions a DDIM action-chunk head (epsilon prediction,
100 train timesteps, 10 deterministic inference steps).
"""

from __future__ import annotations

import numpy as np

from . import nn
from .cap import PhaseSchedule
from .force_encoder import ForceEncoder
from .geometry import rot6d_decode, rot6d_encode
from .vision import ViewCNN

TRAIN_TIMESTEPS = 100
INFERENCE_TIMESTEPS = 10
ACTION_DIM = 8            # wire: position 3 + quaternion 4 + gripper 1
TRAIN_ACTION_DIM = 10     # training: position 3 + 6DRot + gripper 1
DEFAULT_HORIZON = 16
ORI_EPS = 1e-12
ALPHA_CLIP = (0.0, 2.0)
TIMESTEP_EMBED = 32


class UntrainedModel(RuntimeError):
    pass


def ddim_schedule(n: int = TRAIN_TIMESTEPS):
    betas = np.linspace(1e-4, 0.02, n)
    alphas_bar = np.cumprod(1.0 - betas)
    return betas, alphas_bar


def timestep_embedding(t: int, dim: int = TIMESTEP_EMBED) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def chunk_to_train(actions: np.ndarray) -> np.ndarray:
    """Wire chunk [H_a, 8] -> training representation [H_a, 10]."""
    out = np.zeros((actions.shape[0], TRAIN_ACTION_DIM))
    for i, a in enumerate(actions):
        out[i, :3] = a[:3]
        out[i, 3:9] = rot6d_encode(a[3:7])
        out[i, 9] = a[7]
    return out


def chunk_from_train(rep: np.ndarray) -> np.ndarray:
    """Training representation [H_a, 10] -> wire chunk [H_a, 8]."""
    out = np.zeros((rep.shape[0], ACTION_DIM))
    for i, r in enumerate(rep):
        out[i, :3] = r[:3]
        out[i, 3:7] = rot6d_decode(r[3:9])
        out[i, 7] = r[9]
    return out


class ActionNormalizer:
    """Per-dimension min-max scaling of flattened chunks to [-1, 1]."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        span = self.hi - self.lo
        degenerate = span < 1e-9
        # Constant dimensions decode back to the constant exactly instead
        # of scaling denoiser error by a fictitious unit span.
        self.span = np.where(degenerate, 0.0, span)
        self._enc_span = np.where(degenerate, 1.0, span)

    @staticmethod
    def fit(flat_chunks: np.ndarray) -> "ActionNormalizer":
        return ActionNormalizer(flat_chunks.min(axis=0),
                                flat_chunks.max(axis=0))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.lo) / self._enc_span - 1.0

    def decode(self, x: np.ndarray) -> np.ndarray:
        return (x + 1.0) * 0.5 * self.span + self.lo


class SlowModel(nn.Module):
    """Fusion encoders + denoiser MLP for chunked action diffusion."""

    def __init__(self, rng: np.random.Generator, encoder: ForceEncoder,
                 K: int, n_views: int = 3, view_dim: int = 32,
                 n_heads: int = 8, horizon: int = DEFAULT_HORIZON,
                 cond_dim: int = 64, denoiser_hidden: int = 256,
                 proprio_dim: int = 8, gate_hidden: int = 32,
                 relative_positions: bool = True):
        d = n_views * view_dim
        if d % n_heads != 0:
            raise ValueError(f"token dim {d} not divisible by {n_heads} heads")
        if encoder.token_dim != d:
            raise ValueError("force token dim must match visual token dim")
        self.encoder = encoder
        self.d = d
        self.n_heads = n_heads
        self.dk = d // n_heads
        self.horizon = horizon
        self.K = K
        self.views = [ViewCNN(rng, view_dim, f"slow.view{i}",
                              channels=(8, 16, 32)) for i in range(n_views)]
        self.Wq = nn.Linear(d, d, rng, "slow.Wq")
        self.Wk = nn.Linear(d, d, rng, "slow.Wk")
        self.Wv = nn.Linear(d, d, rng, "slow.Wv")
        self.Wo = nn.Linear(d, d, rng, "slow.Wo")
        self.gate_mlp = nn.MLP([K, gate_hidden, n_heads], rng, "slow.gate")
        self.alpha = nn.Parameter(np.array(0.5), "slow.alpha")
        self.cond = nn.Linear(d + proprio_dim, cond_dim, rng, "slow.cond")
        flat = horizon * TRAIN_ACTION_DIM
        self.denoiser = nn.MLP(
            [flat + TIMESTEP_EMBED + cond_dim,
             denoiser_hidden, denoiser_hidden, flat], rng, "slow.denoiser")
        self.betas, self.alphas_bar = ddim_schedule()
        self.normalizer: ActionNormalizer | None = None
        # When set, chunk positions are learned as offsets from the current
        # TCP position (proprio[:3]) and shifted back at planning time.
        self.relative_positions = relative_positions
        self.prop_mean = np.zeros(proprio_dim)
        self.prop_std = np.ones(proprio_dim)

    def set_proprio_normalization(self, mean: np.ndarray, std: np.ndarray):
        """Per-dim affine from training statistics (raw poses are in meters,
        so without this the proprio signal is numerically negligible)."""
        self.prop_mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.asarray(std, dtype=np.float64)
        self.prop_std = np.where(std < 1e-8, 1.0, std)

    # -- fusion ----------------------------------------------------------
    def visual_token(self, images: np.ndarray) -> nn.Tensor:
        """images [B, V, 32, 32] -> concatenated per-view embeddings [B, d]."""
        return nn.concat([cnn(images[:, i])
                          for i, cnn in enumerate(self.views)], axis=-1)

    def head_gate(self, belief: np.ndarray) -> nn.Tensor:
        """Phase-dependent head gate in (0,1)^H, batched [B, H]."""
        return nn.sigmoid(self.gate_mlp(nn.Tensor(np.atleast_2d(belief))))

    def clamp_alpha(self):
        self.alpha.data = np.clip(self.alpha.data, *ALPHA_CLIP)

    def fuse(self, v: nn.Tensor, force_tokens: nn.Tensor, pc: np.ndarray,
             belief: np.ndarray, return_delta: bool = False):
        """Dual-gated cross-attention fusion with orthogonal residual injection.

        v [B, d], force_tokens [B, Hw, d]; returns the fused token [B, d]
        (or the projected cross-attention output when `return_delta`).
        """
        B = v.shape[0]
        H, dk = self.n_heads, self.dk
        q = self.Wq(v).reshape(B, H, 1, dk)
        k = self.Wk(force_tokens).reshape(
            B, force_tokens.shape[1], H, dk).swapaxes(1, 2)
        val = self.Wv(force_tokens).reshape(
            B, force_tokens.shape[1], H, dk).swapaxes(1, 2)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dk))
        attn = nn.softmax(scores, axis=-1) @ val          # [B, H, 1, dk]
        gate = self.head_gate(belief).reshape(B, H, 1, 1)
        delta = self.Wo((attn * gate).reshape(B, self.d))
        if return_delta:
            return delta
        # Orthogonalize against the visual token, then bounded injection.
        dot = (delta * v).sum(axis=-1, keepdims=True)
        vv = (v * v).sum(axis=-1, keepdims=True) + ORI_EPS
        delta_perp = delta - v * (dot / vv)
        gain = self.alpha * nn.Tensor(
            np.asarray(pc, dtype=np.float64).reshape(-1, 1))
        return v + delta_perp * gain

    def conditioning(self, images: np.ndarray, wrench_samples: np.ndarray,
                     proprio: np.ndarray, pc: np.ndarray, belief: np.ndarray,
                     no_ori: bool = False) -> nn.Tensor:
        v = self.visual_token(images)
        tokens = self.encoder.tokens_batch(wrench_samples)
        fused = self.fuse(v, tokens, pc, belief, return_delta=no_ori)
        prop = (proprio - self.prop_mean) / self.prop_std
        return self.cond(nn.concat([fused, nn.Tensor(prop)], axis=-1))

    # -- diffusion ---------------------------------------------------------
    def eps_predict(self, noisy_flat: nn.Tensor, t: np.ndarray,
                    cond: nn.Tensor) -> nn.Tensor:
        temb = np.stack([timestep_embedding(int(ti)) for ti in np.atleast_1d(t)])
        return self.denoiser(
            nn.concat([noisy_flat, nn.Tensor(temb), cond], axis=-1))

    def train_loss(self, chunks_norm: np.ndarray, cond: nn.Tensor,
                   rng: np.random.Generator) -> nn.Tensor:
        """Epsilon-prediction MSE at uniformly sampled training timesteps.

        Per-sample losses are weighted by 1 - alpha_bar(t): at small t the
        added noise is nearly unrecoverable yet physically irrelevant, and
        unweighted it dominates the gradient at the expense of the
        high-noise steps where the conditioning determines the sample.
        """
        B = chunks_norm.shape[0]
        t = rng.integers(0, TRAIN_TIMESTEPS, size=B)
        eps = rng.standard_normal(chunks_norm.shape)
        ab = self.alphas_bar[t][:, None]
        noisy = np.sqrt(ab) * chunks_norm + np.sqrt(1.0 - ab) * eps
        pred = self.eps_predict(nn.Tensor(noisy), t, cond)
        w = 1.0 - ab
        w = w / w.mean()
        per = (pred - nn.Tensor(eps)).square().mean(axis=-1)
        return (per * nn.Tensor(w[:, 0])).mean()

    def ddim_sample(self, cond: nn.Tensor, seed: int,
                    eps_fn=None) -> np.ndarray:
        """Deterministic 10-step DDIM; returns a wire chunk [H_a, 8].

        `eps_fn(x_flat, t)` overrides the learned denoiser (oracle testing).
        """
        if self.normalizer is None and eps_fn is None:
            raise UntrainedModel("sampling requires trained normalization")
        x = self._sample_flat(cond, seed, eps_fn)
        if eps_fn is not None and self.normalizer is None:
            return x.reshape(self.horizon, TRAIN_ACTION_DIM)
        rep = self.normalizer.decode(x).reshape(self.horizon, TRAIN_ACTION_DIM)
        return chunk_from_train(rep)

    def _sample_flat(self, cond, seed: int, eps_fn=None) -> np.ndarray:
        """One DDIM trajectory in the normalized chunk space."""
        flat = self.horizon * TRAIN_ACTION_DIM
        x = np.random.default_rng(seed).standard_normal(flat)
        steps = self._inference_steps()
        with nn.no_grad():
            for i, t in enumerate(steps):
                ab_t = self.alphas_bar[t]
                if eps_fn is not None:
                    eps = eps_fn(x, t)
                else:
                    eps = self.eps_predict(nn.Tensor(x[None]), np.array([t]),
                                           cond).numpy()[0]
                x0 = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
                if i + 1 < len(steps):
                    ab_prev = self.alphas_bar[steps[i + 1]]
                    x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
                else:
                    x = x0
        return x

    @staticmethod
    def _inference_steps(n_train: int = TRAIN_TIMESTEPS,
                         n_infer: int = INFERENCE_TIMESTEPS) -> list[int]:
        stride = n_train // n_infer
        return list(range(n_train - 1, -1, -stride))

    def plan(self, images: np.ndarray, wrench_samples: np.ndarray,
             proprio: np.ndarray, sched: PhaseSchedule, seed: int,
             no_ori: bool = False, n_samples: int = 1) -> np.ndarray:
        """Full inference: observation -> wire action chunk [H_a, 8].

        `n_samples > 1` averages independent DDIM trajectories (in the
        normalized chunk space, where decoding is affine) before decoding;
        sub-seeds derive from `seed`, so the result stays deterministic.
        """
        if self.normalizer is None:
            raise UntrainedModel("model has no fitted action normalizer")
        with nn.no_grad():
            cond = self.conditioning(
                images[None], wrench_samples[None], proprio[None],
                np.array([sched.contact_prob]), sched.phase_belief[None],
                no_ori=no_ori)
        x = np.mean([self._sample_flat(cond, seed + 7919 * j)
                     for j in range(n_samples)], axis=0)
        rep = self.normalizer.decode(x).reshape(self.horizon,
                                                TRAIN_ACTION_DIM)
        chunk = chunk_from_train(rep)
        if self.relative_positions:
            chunk = chunk.copy()
            chunk[:, :3] += proprio[:3]
        return chunk
