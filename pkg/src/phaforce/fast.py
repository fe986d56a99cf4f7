"""Control-rate residual corrector.

The corrector predicts a raw channel residual over the 6 pose channels,
which is softly routed through phase-specific binary subspace masks and gated
by the contact probability. Supervision comes from physical-prior teachers
constructed from the instantaneous wrench.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, tasks
from .cap import PhaseSchedule
from .force_encoder import ForceEncoder
from .geometry import Twist

# Per-channel output caps for the raw residual: 2 mm linear, 1 deg angular.
DEFAULT_CHANNEL_CAP = np.array(
    [2e-3, 2e-3, 2e-3, np.pi / 180, np.pi / 180, np.pi / 180])
DEFAULT_SLOW_HISTORY = 4


class UnregisteredPhase(KeyError):
    pass


@dataclass(frozen=True)
class TeacherGains:
    """Admittance-style gains for the physical-prior teachers."""

    alpha_lin: np.ndarray = field(
        default_factory=lambda: np.full(3, 5e-5))       # m/N
    alpha_ang: np.ndarray = field(
        default_factory=lambda: np.full(3, 3e-2))       # rad/(N*m)
    target_Fz: float = -12.0                            # wiping normal target
    insert_Fz: float = -8.0                             # insertion drive force

    def __post_init__(self):
        lin = np.asarray(self.alpha_lin, dtype=np.float64).reshape(3)
        ang = np.asarray(self.alpha_ang, dtype=np.float64).reshape(3)
        if (lin < 0).any() or (ang < 0).any():
            raise ValueError("teacher gains must be non-negative")
        object.__setattr__(self, "alpha_lin", lin)
        object.__setattr__(self, "alpha_ang", ang)


def route(c: np.ndarray, sched: PhaseSchedule, masks: np.ndarray) -> Twist:
    """Soft routing: delta_xi = p_c * (sum_k p^(k) B_k) c, componentwise."""
    c = np.asarray(c, dtype=np.float64).reshape(6)
    if masks.shape != (sched.K, 6):
        raise ValueError(f"expected ({sched.K}, 6) masks, got {masks.shape}")
    weights = sched.phase_belief @ masks
    return Twist.from_array(sched.contact_prob * weights * c)


def teacher_for_phase(phase: str, wrench: np.ndarray,
                      gains: TeacherGains) -> np.ndarray:
    """Per-phase residual prior from the instantaneous wrench (6-vector)."""
    F = np.asarray(wrench, dtype=np.float64).reshape(6)
    al, aa = gains.alpha_lin, gains.alpha_ang
    if phase == "search":
        return np.array([-al[0] * F[0], -al[1] * F[1], 0.0,
                         0.0, 0.0, -aa[2] * F[5]])
    if phase == "wiping":
        return np.array([0.0, 0.0, al[2] * (gains.target_Fz - F[2]),
                         0.0, 0.0, 0.0])
    if phase == "insert":
        return np.array([0.0, 0.0, al[2] * (gains.insert_Fz - F[2]),
                         0.0, 0.0, -aa[2] * F[5]])
    if phase == "unlock":
        return np.array([-al[0] * F[0], -al[1] * F[1], 0.0, 0.0, 0.0, 0.0])
    if phase == "pull":
        return np.array([-al[0] * F[0], -al[1] * F[1], 0.0,
                         -aa[0] * F[3], -aa[1] * F[4], 0.0])
    if phase in ("approach", "pick", "done", "recovery"):
        return np.zeros(6)
    raise UnregisteredPhase(phase)


def teacher_target(wrench: np.ndarray, sched: PhaseSchedule,
                   phase_names: tuple[str, ...],
                   gains: TeacherGains) -> Twist:
    """Belief-mixed teacher: delta_xi* = p_c * sum_k p^(k) delta_xi*_k."""
    if len(phase_names) != sched.K:
        raise ValueError("phase name count does not match belief length")
    target = np.zeros(6)
    for k, name in enumerate(phase_names):
        w = sched.phase_belief[k]
        if w != 0.0:
            target += w * teacher_for_phase(name, wrench, gains)
    return Twist.from_array(sched.contact_prob * target)


def fast_loss(predicted: np.ndarray, teacher: np.ndarray) -> float:
    """Mean absolute error over the 6 channels, averaged over the batch."""
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher, dtype=np.float64))
    if p.shape != t.shape or p.shape[-1] != 6:
        raise ValueError(f"twist batches must match: {p.shape} vs {t.shape}")
    return float(np.abs(p - t).mean())


class FastModel(nn.Module):
    """MLP over (pooled force, proprio, slow history, schedule) -> residual.

    Output channels are tanh-bounded by the per-channel cap before routing.
    """

    def __init__(self, rng: np.random.Generator, encoder: ForceEncoder,
                 task: str, n_history: int = DEFAULT_SLOW_HISTORY,
                 hidden: int = 64, proprio_dim: int = 8, action_dim: int = 8,
                 channel_cap: np.ndarray = DEFAULT_CHANNEL_CAP):
        self.encoder = encoder
        self.task = task
        self.n_history = n_history
        self.masks = tasks.task_masks(task)
        self.phase_names = tasks.phase_names(task)
        K = len(self.phase_names)
        din = encoder.pooled_dim + proprio_dim + n_history * action_dim + 1 + K
        self.net = nn.MLP([din, hidden, hidden, 6], rng, "fast.net")
        # Near-zero output head: untrained corrections stay tiny.
        self.net.layers[-1].W.data *= 1e-3
        self.net.layers[-1].b.data *= 0.0
        self.channel_cap = np.asarray(channel_cap, dtype=np.float64).reshape(6)
        self.prop_mean = np.zeros(proprio_dim)
        self.prop_std = np.ones(proprio_dim)

    def set_proprio_normalization(self, mean: np.ndarray, std: np.ndarray):
        """Per-dim affine shared with the planner; also applied to the slow
        command history, which lives in the same pose coordinates."""
        self.prop_mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.asarray(std, dtype=np.float64)
        self.prop_std = np.where(std < 1e-8, 1.0, std)

    def features(self, wrench_samples: np.ndarray, proprio: np.ndarray,
                 slow_history: np.ndarray, pc: np.ndarray,
                 belief: np.ndarray) -> nn.Tensor:
        """Batched corrector input; wrench goes through the frozen encoder."""
        B = proprio.shape[0]
        pooled = self.encoder.pooled_batch(wrench_samples).detach()
        prop = (proprio - self.prop_mean) / self.prop_std
        hist = (slow_history.reshape(B, -1, 8) - self.prop_mean) / \
            self.prop_std
        return nn.concat([
            pooled,
            nn.Tensor(prop.reshape(B, -1)),
            nn.Tensor(hist.reshape(B, -1)),
            nn.Tensor(np.asarray(pc, dtype=np.float64).reshape(B, 1)),
            nn.Tensor(np.asarray(belief, dtype=np.float64).reshape(B, -1)),
        ], axis=-1)

    def raw_residual(self, feats: nn.Tensor) -> nn.Tensor:
        """Channel residual c in R^6, tanh-bounded to the channel caps."""
        return self.net(feats).tanh() * nn.Tensor(self.channel_cap)

    def routed(self, feats: nn.Tensor, pc: np.ndarray,
               belief: np.ndarray) -> nn.Tensor:
        """Differentiable soft routing of the raw residual (training path)."""
        c = self.raw_residual(feats)
        weights = np.atleast_2d(belief) @ self.masks
        gate = np.asarray(pc, dtype=np.float64).reshape(-1, 1) * weights
        return c * nn.Tensor(gate)

    def predict(self, wrench_samples: np.ndarray, proprio: np.ndarray,
                slow_history: np.ndarray, sched: PhaseSchedule) -> Twist:
        """Single-step inference: routed residual twist for one observation."""
        with nn.no_grad():
            feats = self.features(wrench_samples[None], proprio[None],
                                  slow_history[None],
                                  np.array([sched.contact_prob]),
                                  sched.phase_belief[None])
            c = self.raw_residual(feats).numpy()[0]
        return route(c, sched, self.masks)
