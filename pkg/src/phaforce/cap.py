"""Contact-aware phase predictor.

Predicts an anticipatory contact probability and a soft phase belief from the
planner observation. Labels come from simulator ground truth: the contact
label at step t is the OR of contact flags over the next K_f steps, the phase
label is the phase index delta steps ahead (both clamped at trajectory end).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, tasks
from .force_encoder import ForceEncoder, WrenchWindow
from .vision import ViewCNN

DEFAULT_KF = 8
DEFAULT_DELTA = 3
DEFAULT_LAMBDA_PHI = 2.0


class EmptyTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class PhaseSchedule:
    """Contact probability in [0,1] plus a phase belief on the K-simplex."""

    contact_prob: float
    phase_belief: np.ndarray

    def __post_init__(self):
        belief = np.asarray(self.phase_belief, dtype=np.float64)
        if not (0.0 <= self.contact_prob <= 1.0):
            raise ValueError(f"contact_prob {self.contact_prob} out of [0,1]")
        if belief.ndim != 1 or (belief < 0).any() or \
                abs(belief.sum() - 1.0) > 1e-6:
            raise ValueError("phase belief must lie on the simplex")
        object.__setattr__(self, "phase_belief", belief)

    @property
    def K(self) -> int:
        return self.phase_belief.shape[0]

    @staticmethod
    def uniform(K: int, contact_prob: float = 1.0) -> "PhaseSchedule":
        return PhaseSchedule(contact_prob, np.full(K, 1.0 / K))

    @staticmethod
    def one_hot(K: int, phase: int,
                contact_prob: float = 1.0) -> "PhaseSchedule":
        b = np.zeros(K)
        b[phase] = 1.0
        return PhaseSchedule(contact_prob, b)


@dataclass(frozen=True)
class PlannerObservation:
    """Multi-view rasters + wrench history + proprioception."""

    images: np.ndarray          # [n_views, 32, 32], values in [0, 1]
    wrench: WrenchWindow
    proprio: np.ndarray         # [8]: pose (7) + gripper width


def make_labels(contact_flags: np.ndarray, phase_indices: np.ndarray,
                K_f: int = DEFAULT_KF, delta: int = DEFAULT_DELTA,
                K: int | None = None):
    """Anticipatory labels: (future_contact [T] u8, future_phase [T] u8)."""
    contact = np.asarray(contact_flags).astype(np.uint8)
    phases = np.asarray(phase_indices).astype(np.int64)
    T = contact.shape[0]
    if T == 0:
        raise EmptyTrajectory("cannot label an empty trajectory")
    if K is not None and phases.size and phases.max() >= K:
        raise ValueError("phase index out of range")
    future_contact = np.zeros(T, dtype=np.uint8)
    for t in range(T):
        hi = min(t + K_f, T - 1)
        if hi > t:
            future_contact[t] = contact[t + 1:hi + 1].any()
    future_phase = phases[np.minimum(np.arange(T) + delta, T - 1)]
    return future_contact, future_phase.astype(np.uint8)


class CapModel(nn.Module):
    """Per-view CNNs (no weight sharing) + pooled force + proprio -> 2 heads."""

    def __init__(self, rng: np.random.Generator, encoder: ForceEncoder,
                 K: int, n_views: int = 3, view_dim: int = 64,
                 fusion_hidden: int = 128, proprio_dim: int = 8):
        self.encoder = encoder
        self.K = K
        self.n_views = n_views
        self.views = [ViewCNN(rng, view_dim, f"cap.view{i}")
                      for i in range(n_views)]
        fused_in = n_views * view_dim + encoder.pooled_dim + proprio_dim
        self.fusion = nn.MLP([fused_in, fusion_hidden, fusion_hidden], rng,
                             "cap.fusion")
        self.heads = nn.Linear(fusion_hidden, 1 + K, rng, "cap.heads")
        self.prop_mean = np.zeros(proprio_dim)
        self.prop_std = np.ones(proprio_dim)

    def set_proprio_normalization(self, mean: np.ndarray, std: np.ndarray):
        """Per-dim affine from training statistics (raw poses are in meters,
        so without this the proprio signal is numerically negligible)."""
        self.prop_mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.asarray(std, dtype=np.float64)
        self.prop_std = np.where(std < 1e-8, 1.0, std)

    def logits(self, images: np.ndarray, wrench_samples: np.ndarray,
               proprio: np.ndarray):
        """Batched logits: images [B,V,32,32] -> (contact [B,1], phase [B,K])."""
        feats = [cnn(images[:, i]) for i, cnn in enumerate(self.views)]
        feats.append(self.encoder.pooled_batch(wrench_samples))
        feats.append(nn.Tensor((proprio - self.prop_mean) / self.prop_std))
        h = nn.relu(self.fusion(nn.concat(feats, axis=-1)))
        out = self.heads(h)
        return out[:, :1], out[:, 1:]

    def predict(self, obs: PlannerObservation) -> PhaseSchedule:
        with nn.no_grad():
            lc, lphi = self.logits(obs.images[None], obs.wrench.samples[None],
                                   obs.proprio[None])
            pc = nn.sigmoid(lc).numpy()[0, 0]
            belief = nn.softmax(lphi, axis=-1).numpy()[0]
        # Clamp float round-off so the simplex invariant holds exactly enough.
        belief = np.clip(belief, 0.0, None)
        belief = belief / belief.sum()
        return PhaseSchedule(float(np.clip(pc, 0.0, 1.0)), belief)


def bce_with_logits(logits: nn.Tensor, targets: np.ndarray) -> nn.Tensor:
    """Stable elementwise binary cross-entropy with logits (mean not applied)."""
    y = nn.Tensor(np.asarray(targets, dtype=np.float64))
    sign = nn.Tensor(np.sign(logits.data))
    absl = logits * sign
    return logits.relu() - logits * y + ((-absl).exp() + 1.0).log()


def cross_entropy(logits: nn.Tensor, targets: np.ndarray) -> nn.Tensor:
    """Per-sample categorical cross-entropy from logits (mean not applied)."""
    m = nn.Tensor(logits.data.max(axis=-1, keepdims=True))
    z = logits - m
    lse = z.exp().sum(axis=-1, keepdims=True).log()
    logp = z - lse
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), np.asarray(targets, dtype=int)] = 1.0
    return -(logp * nn.Tensor(onehot)).sum(axis=-1)


def cap_loss(logits_c: nn.Tensor, logits_phi: nn.Tensor,
             contact_labels: np.ndarray, phase_labels: np.ndarray,
             lambda_phi: float = DEFAULT_LAMBDA_PHI) -> nn.Tensor:
    """BCE(contact) + lambda_phi * CE(phase), each averaged over the batch."""
    bce = bce_with_logits(logits_c.reshape(-1),
                          np.asarray(contact_labels, dtype=np.float64)).mean()
    ce = cross_entropy(logits_phi, phase_labels).mean()
    return bce + ce * lambda_phi


def schedule_for_task(task: str, contact_prob: float,
                      belief: np.ndarray) -> PhaseSchedule:
    if belief.shape[0] != tasks.phase_count(task):
        raise ValueError("belief length does not match task phase count")
    return PhaseSchedule(contact_prob, belief)
