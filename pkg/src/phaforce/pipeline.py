"""Staged training pipeline and the deployable policy.

Training order: (1) the phase predictor together with the wrench encoder,
(2) the slow planner with the encoder trunk frozen (only its token head keeps
training), (3) the fast corrector against the physical-prior teachers, with
phase schedules supplied by the frozen predictor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import fast as fast_mod
from . import nn, slow as slow_mod, tasks
from .cap import CapModel, PhaseSchedule, PlannerObservation, cap_loss, \
    make_labels
from .executor import RateConfig
from .force_encoder import DEFAULT_WINDOW, ForceEncoder, WrenchWindow
from .geometry import Twist
from .sim.dataset import load_dataset
from .sim.expert import Episode

_ZERO_TWIST = Twist.from_array(np.zeros(6))


@dataclass(frozen=True)
class PipelineConfig:
    task: str
    seed: int = 0
    n_demos: int = 80
    holdout: int = 8
    window: int = DEFAULT_WINDOW
    horizon: int = 16
    cap_epochs: int = 12
    cap_batch: int = 64
    cap_lr: float = 1e-3
    slow_epochs: int = 30
    slow_batch: int = 64
    slow_lr: float = 1e-3
    fast_epochs: int = 80
    fast_batch: int = 128
    fast_lr: float = 1e-3
    no_pb: bool = False       # ablation: uniform phase belief throughout
    no_ori: bool = False      # ablation: inject raw fusion output instead

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        return PipelineConfig(**d)


# --------------------------------------------------------------------------
# Featurization
# --------------------------------------------------------------------------

def episode_windows(wrenches: np.ndarray, window: int) -> np.ndarray:
    """Per-step causal wrench windows [T, window, 6], zero-padded at start."""
    T = wrenches.shape[0]
    out = np.zeros((T, window, 6))
    for t in range(T):
        lo = max(0, t - window + 1)
        out[t, window - (t - lo + 1):] = wrenches[lo:t + 1]
    return out


def episode_chunks(actions: np.ndarray, horizon: int) -> np.ndarray:
    """Future action chunks [T, horizon, 8], end-padded with the last row."""
    T = actions.shape[0]
    padded = np.concatenate([actions,
                             np.repeat(actions[-1:], horizon, axis=0)])
    return np.stack([padded[t:t + horizon] for t in range(T)])


def episode_history(actions: np.ndarray, n: int = 4) -> np.ndarray:
    """Previous n commanded actions [T, n, 8], front-padded with row 0."""
    T = actions.shape[0]
    padded = np.concatenate([np.repeat(actions[:1], n, axis=0), actions])
    return np.stack([padded[t:t + n] for t in range(T)])


def build_samples(episodes: list[Episode], task: str, window: int,
                  horizon: int) -> dict[str, np.ndarray]:
    K = tasks.phase_count(task)
    cols = {k: [] for k in ("images", "windows", "proprio", "wrench",
                            "contact", "phase", "chunks", "history")}
    for ep in episodes:
        fc, fp = make_labels(ep.contact, ep.phase, K=K)
        cols["images"].append(ep.images.astype(np.float64))
        cols["windows"].append(episode_windows(ep.wrenches, window))
        cols["proprio"].append(ep.proprio)
        cols["wrench"].append(ep.wrenches)
        cols["contact"].append(fc)
        cols["phase"].append(fp)
        cols["chunks"].append(episode_chunks(ep.actions, horizon))
        cols["history"].append(episode_history(ep.actions))
    return {k: np.concatenate(v) for k, v in cols.items()}


# --------------------------------------------------------------------------
# Stage 1: phase predictor + encoder
# --------------------------------------------------------------------------

def _proprio_stats(data: dict) -> tuple[np.ndarray, np.ndarray]:
    return data["proprio"].mean(axis=0), data["proprio"].std(axis=0)


def _batches(n: int, batch: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    for i in range(0, n, batch):
        yield idx[i:i + batch]


def train_cap(cfg: PipelineConfig, data: dict, val: dict,
              rng: np.random.Generator):
    K = tasks.phase_count(cfg.task)
    encoder = ForceEncoder(rng)
    encoder.set_normalization(data["wrench"].mean(axis=0),
                              data["wrench"].std(axis=0))
    cap = CapModel(rng, encoder, K)
    cap.set_proprio_normalization(*_proprio_stats(data))
    trainable = [p for n, p in cap.named_parameters().items()
                 if not n.startswith("force.tokens")]
    opt = nn.Adam(trainable, lr=cfg.cap_lr)
    history = []
    N = data["images"].shape[0]
    for epoch in range(cfg.cap_epochs):
        for bidx in _batches(N, cfg.cap_batch, rng):
            lc, lphi = cap.logits(data["images"][bidx],
                                  data["windows"][bidx],
                                  data["proprio"][bidx])
            loss = cap_loss(lc, lphi, data["contact"][bidx],
                            data["phase"][bidx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(_cap_eval(cap, val))
    return encoder, cap, history


def _cap_eval(cap: CapModel, val: dict) -> dict:
    with nn.no_grad():
        lc, lphi = cap.logits(val["images"], val["windows"], val["proprio"])
        pc = nn.sigmoid(lc).numpy()[:, 0]
        phase_pred = lphi.numpy().argmax(axis=-1)
    return {
        "contact_acc": float(((pc > 0.5) == (val["contact"] > 0)).mean()),
        "phase_acc": float((phase_pred == val["phase"]).mean()),
    }


def cap_outputs(cap: CapModel, data: dict, no_pb: bool = False,
                batch: int = 256):
    """Frozen predictor outputs over a sample table -> (pc [N], belief [N,K])."""
    N = data["images"].shape[0]
    pcs, beliefs = [], []
    with nn.no_grad():
        for i in range(0, N, batch):
            s = slice(i, i + batch)
            lc, lphi = cap.logits(data["images"][s], data["windows"][s],
                                  data["proprio"][s])
            pcs.append(nn.sigmoid(lc).numpy()[:, 0])
            beliefs.append(nn.softmax(lphi, axis=-1).numpy())
    pc = np.concatenate(pcs)
    belief = np.concatenate(beliefs)
    if no_pb:
        belief = np.full_like(belief, 1.0 / belief.shape[1])
    return pc, belief


# --------------------------------------------------------------------------
# Stage 2: slow planner
# --------------------------------------------------------------------------

def train_slow(cfg: PipelineConfig, data: dict, val: dict,
               encoder: ForceEncoder, pc: np.ndarray, belief: np.ndarray,
               val_pc: np.ndarray, val_belief: np.ndarray,
               rng: np.random.Generator):
    K = tasks.phase_count(cfg.task)
    model = slow_mod.SlowModel(rng, encoder, K, horizon=cfg.horizon)
    aug_rng = np.random.default_rng(cfg.seed + 41)
    model.set_proprio_normalization(*_proprio_stats(data))
    N = data["images"].shape[0]
    train_rep = _chunk_rep(model, data)
    model.normalizer = slow_mod.ActionNormalizer.fit(train_rep)
    chunks_norm = model.normalizer.encode(train_rep)

    # The encoder trunk is frozen after stage 1; cache its activations and
    # only train the token projection on top of them.
    trunk_train = _trunk_cache(encoder, data["windows"])
    trunk_val = _trunk_cache(encoder, val["windows"])

    trainable = [p for n, p in model.named_parameters().items()
                 if not n.startswith("force.") or n.startswith("force.tokens")]
    opt = nn.Adam(trainable, lr=cfg.slow_lr)
    noise_rng = np.random.default_rng(cfg.seed + 17)
    history = []
    for epoch in range(cfg.slow_epochs):
        # Step the learning rate down once fitting slows.
        opt.lr = cfg.slow_lr * (0.3 if epoch >= 2 * cfg.slow_epochs // 3
                                else 1.0)
        for bidx in _batches(N, cfg.slow_batch, rng):
            # Smooth the belief toward uniform by a random per-sample
            # amount: the predictor's beliefs are near-one-hot on
            # demonstration states but flicker on closed-loop states, and a
            # planner trained only on sharp beliefs leans on them and
            # degrades at execution.
            lam = aug_rng.uniform(0.0, 1.0, (len(bidx), 1))
            b_aug = (1.0 - lam) * belief[bidx] + lam / K
            cond = _conditioning_cached(model, encoder, data["images"][bidx],
                                        trunk_train[bidx],
                                        data["proprio"][bidx], pc[bidx],
                                        b_aug, cfg.no_ori)
            loss = model.train_loss(chunks_norm[bidx], cond, noise_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.clamp_alpha()
        history.append(_slow_eval(cfg, model, encoder, val, trunk_val,
                                  val_pc, val_belief))
    return model, history


_REL_CLIP = 12e-3   # per-row clip on relative chunk positions (meters)


def _chunk_rep(model, tbl: dict) -> np.ndarray:
    """Flattened training representation of action chunks [N, H*10].

    Relative positions are clipped per row: the executor caps slow motion at
    5 mm per control step, so far-away targets are direction-only anyway,
    and the clip keeps the normalization span tight enough for mm-scale
    regression near contact.
    """
    chunks = tbl["chunks"]
    if model.relative_positions:
        chunks = chunks.copy()
        chunks[:, :, :3] -= tbl["proprio"][:, None, :3]
        chunks[:, :, :3] = np.clip(chunks[:, :, :3], -_REL_CLIP, _REL_CLIP)
    N = chunks.shape[0]
    return np.stack([slow_mod.chunk_to_train(c)
                     for c in chunks]).reshape(N, -1)


def _trunk_cache(encoder: ForceEncoder, windows: np.ndarray,
                 batch: int = 256) -> np.ndarray:
    outs = []
    with nn.no_grad():
        for i in range(0, windows.shape[0], batch):
            outs.append(encoder.trunk(
                nn.Tensor(windows[i:i + batch])).numpy())
    return np.concatenate(outs)


def _conditioning_cached(model, encoder, images, trunk_hidden, proprio, pc,
                         belief, no_ori: bool) -> nn.Tensor:
    v = model.visual_token(images)
    force_tokens = encoder.token_head(nn.Tensor(trunk_hidden))
    fused = model.fuse(v, force_tokens, pc, belief, return_delta=no_ori)
    prop = (proprio - model.prop_mean) / model.prop_std
    return model.cond(nn.concat([fused, nn.Tensor(prop)], axis=-1))


def _slow_eval(cfg, model, encoder, val, trunk_val, val_pc,
               val_belief) -> dict:
    rng = np.random.default_rng(1234)
    rep = _chunk_rep(model, val)
    with nn.no_grad():
        cond = _conditioning_cached(model, encoder, val["images"], trunk_val,
                                    val["proprio"], val_pc, val_belief,
                                    cfg.no_ori)
        loss = model.train_loss(model.normalizer.encode(rep), cond, rng)
    return {"eps_mse": float(loss.numpy())}


# --------------------------------------------------------------------------
# Stage 3: fast corrector
# --------------------------------------------------------------------------

def train_fast(cfg: PipelineConfig, data: dict, val: dict,
               encoder: ForceEncoder, pc: np.ndarray, belief: np.ndarray,
               val_pc: np.ndarray, val_belief: np.ndarray,
               rng: np.random.Generator):
    model = fast_mod.FastModel(rng, encoder, cfg.task)
    model.set_proprio_normalization(*_proprio_stats(data))
    gains = fast_mod.TeacherGains()
    names = tasks.phase_names(cfg.task)

    def targets(tbl, tpc, tbelief):
        return np.stack([
            fast_mod.teacher_target(tbl["wrench"][i],
                                    PhaseSchedule(float(np.clip(tpc[i], 0, 1)),
                                                  tbelief[i]),
                                    names, gains).to_array()
            for i in range(tbl["wrench"].shape[0])])

    y = targets(data, pc, belief)
    y_val = targets(val, val_pc, val_belief)
    opt = nn.Adam(model.net.parameters(), lr=cfg.fast_lr)
    N = data["wrench"].shape[0]
    history = []
    for epoch in range(cfg.fast_epochs):
        for bidx in _batches(N, cfg.fast_batch, rng):
            feats = model.features(data["windows"][bidx],
                                   data["proprio"][bidx],
                                   data["history"][bidx], pc[bidx],
                                   belief[bidx])
            pred = model.routed(feats, pc[bidx], belief[bidx])
            diff = pred - nn.Tensor(y[bidx])
            loss = (diff.relu() + (-diff).relu()).mean(axis=-1).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        with nn.no_grad():
            feats = model.features(val["windows"], val["proprio"],
                                   val["history"], val_pc, val_belief)
            pred = model.routed(feats, val_pc, val_belief).numpy()
        history.append({"l1": fast_mod.fast_loss(pred, y_val)})
    return model, history


# --------------------------------------------------------------------------
# Pipeline container, policy, checkpointing
# --------------------------------------------------------------------------

class PhaForcePipeline(nn.Module):
    """Trained component bundle for one task."""

    def __init__(self, config: PipelineConfig, encoder: ForceEncoder,
                 cap: CapModel, slow: slow_mod.SlowModel,
                 fast: fast_mod.FastModel):
        self.config = config
        self.encoder = encoder
        self.cap = cap
        self.slow = slow
        self.fast = fast


class PhaForcePolicy:
    """Executor-facing policy over a trained pipeline.

    Ablations: `no_fast` zeroes the corrector at evaluation time; the
    `no_pb` / `no_ori` flags baked into the pipeline config carry over from
    training so train and test are consistent.
    """

    def __init__(self, pipeline: PhaForcePipeline, no_fast: bool = False):
        self.p = pipeline
        self.no_fast = no_fast
        self.K = tasks.phase_count(pipeline.config.task)

    def reset(self, result):
        pass

    def _schedule(self, obs: dict) -> PhaseSchedule:
        sched = self.p.cap.predict(PlannerObservation(
            obs["images"].astype(np.float64),
            WrenchWindow(obs["wrenches"]), obs["proprio"]))
        if self.p.config.no_pb:
            return PhaseSchedule(sched.contact_prob,
                                 np.full(self.K, 1.0 / self.K))
        return sched

    def plan(self, obs: dict, seed: int) -> np.ndarray:
        sched = self._schedule(obs)
        return self.p.slow.plan(obs["images"].astype(np.float64),
                                obs["wrenches"], obs["proprio"], sched,
                                seed=seed, no_ori=self.p.config.no_ori,
                                n_samples=4)

    def correct(self, obs: dict) -> Twist:
        if self.no_fast:
            return _ZERO_TWIST
        sched = self._schedule(obs)
        return self.p.fast.predict(obs["wrenches"], obs["proprio"],
                                   obs["slow_history"], sched)


def train_pipeline(cfg: PipelineConfig, dataset_root: Path,
                   log=None) -> tuple[PhaForcePipeline, dict]:
    """Train all stages from a demo dataset directory."""
    episodes = load_dataset(dataset_root)[:cfg.n_demos]
    if len(episodes) < cfg.n_demos:
        raise ValueError(f"dataset has {len(episodes)} episodes, "
                         f"need {cfg.n_demos}")
    n_train = cfg.n_demos - cfg.holdout
    data = build_samples(episodes[:n_train], cfg.task, cfg.window,
                         cfg.horizon)
    val = build_samples(episodes[n_train:], cfg.task, cfg.window,
                        cfg.horizon)
    rng = np.random.default_rng(cfg.seed)

    t0 = time.time()
    encoder, cap, cap_hist = train_cap(cfg, data, val, rng)
    cap_seconds = time.time() - t0
    if log:
        log(f"stage cap: {cap_hist[-1]}")
    for p in encoder.parameters():       # trunk + pooled head frozen below
        p.requires_grad = False
    for p in encoder.token_head.parameters():
        p.requires_grad = True
    cap.freeze()
    pc, belief = cap_outputs(cap, data, cfg.no_pb)
    val_pc, val_belief = cap_outputs(cap, val, cfg.no_pb)

    slow, slow_hist = train_slow(cfg, data, val, encoder, pc, belief,
                                 val_pc, val_belief, rng)
    if log:
        log(f"stage slow: {slow_hist[-1]}")
    slow.freeze()

    fast, fast_hist = train_fast(cfg, data, val, encoder, pc, belief,
                                 val_pc, val_belief, rng)
    if log:
        log(f"stage fast: {fast_hist[-1]}")

    report = {"cap": cap_hist, "slow": slow_hist, "fast": fast_hist,
              "cap_seconds": cap_seconds}
    return PhaForcePipeline(cfg, encoder, cap, slow, fast), report


def save_pipeline(path: Path, pipeline: PhaForcePipeline):
    extras = dict(pipeline.encoder.normalization_arrays())
    extras["proprio_mean"] = pipeline.slow.prop_mean
    extras["proprio_std"] = pipeline.slow.prop_std
    norm = pipeline.slow.normalizer
    if norm is not None:
        extras["action_lo"] = norm.lo
        extras["action_hi"] = norm.hi
    nn.save_checkpoint(path, pipeline.named_parameters(),
                       hyperparameters=pipeline.config.to_dict(),
                       seed=pipeline.config.seed, extra_arrays=extras)


def load_pipeline(path: Path) -> PhaForcePipeline:
    arrays, extras, hp, _seed = nn.load_checkpoint(path)
    cfg = PipelineConfig.from_dict(hp)
    rng = np.random.default_rng(0)
    K = tasks.phase_count(cfg.task)
    encoder = ForceEncoder(rng)
    cap = CapModel(rng, encoder, K)
    slow = slow_mod.SlowModel(rng, encoder, K, horizon=cfg.horizon)
    fast = fast_mod.FastModel(rng, encoder, cfg.task)
    pipeline = PhaForcePipeline(cfg, encoder, cap, slow, fast)
    nn.load_into(pipeline, arrays)
    encoder.set_normalization(extras["wrench_mean"], extras["wrench_std"])
    if "proprio_mean" in extras:
        for m in (cap, slow, fast):
            m.set_proprio_normalization(extras["proprio_mean"],
                                        extras["proprio_std"])
    if "action_lo" in extras:
        slow.normalizer = slow_mod.ActionNormalizer(extras["action_lo"],
                                                    extras["action_hi"])
    return pipeline
