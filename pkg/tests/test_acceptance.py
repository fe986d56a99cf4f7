"""Acceptance gate.

Eleven criteria covering the fusion/routing identities, teacher formulas,
gradient correctness, the diffusion sampler, phase-predictor quality,
closed-loop teacher stability, the directional ablation structure, executor
bookkeeping, and determinism. Each criterion prints one PASS/FAIL line.

The ablation criteria train real pipelines; run time is dominated by three
staged trainings plus seeded batch evaluations (several minutes on CPU).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from phaforce import nn, tasks
from phaforce.cap import PhaseSchedule
from phaforce.executor import (RateConfig, batch_eval, run_episode)
from phaforce.fast import FastModel, TeacherGains, route, teacher_for_phase
from phaforce.force_encoder import ForceEncoder
from phaforce.geometry import Pose, Twist
from phaforce.pipeline import (PhaForcePolicy, PipelineConfig, load_pipeline,
                               save_pipeline, train_pipeline)
from phaforce.sim.dataset import generate_dataset
from phaforce.sim.env import make_env
from phaforce.slow import (TRAIN_ACTION_DIM, SlowModel, ddim_schedule)
from phaforce.vision import ViewCNN

SEED_DATA = 42
SEED_TRAIN = 0
SEED_EVAL = 500
N_TRIALS = 20


def _announce(capsys, num: int, desc: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, etype, *a):
            status = "PASS" if etype is None else "FAIL"
            with capsys.disabled():
                print(f"[{status}] criterion {num:2d}: {desc}")
            return False
    return _Ctx()


def _small_slow(rng=None, horizon=4):
    rng = rng or np.random.default_rng(0)
    enc = ForceEncoder(rng, hidden=8, token_dim=12, pooled_dim=4)
    return SlowModel(rng, enc, K=5, n_views=3, view_dim=4, n_heads=4,
                     horizon=horizon, cond_dim=8, denoiser_hidden=16)


# --------------------------------------------------------------------------
# Shared trained artifacts (criteria 7 and 9)
# --------------------------------------------------------------------------

@pytest.fixture(scope="session")
def workroot(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def budget():
    """Wall-clock ledger for the end-to-end pipeline budget (criterion 9)."""
    return {"seconds": 0.0}


def _timed(budget, fn):
    t0 = time.time()
    out = fn()
    budget["seconds"] += time.time() - t0
    return out


@pytest.fixture(scope="session")
def charger_dataset(workroot, budget):
    path = workroot / "ds_charger"
    _timed(budget, lambda: generate_dataset(path, "charger", 80,
                                            seed=SEED_DATA))
    return path


@pytest.fixture(scope="session")
def wiping_dataset(workroot, budget):
    path = workroot / "ds_wiping"
    _timed(budget, lambda: generate_dataset(path, "wiping", 80,
                                            seed=SEED_DATA))
    return path


def _train(dataset, task, budget, **kw):
    cfg = PipelineConfig(task=task, seed=SEED_TRAIN, slow_epochs=90, **kw)
    return _timed(budget, lambda: train_pipeline(cfg, dataset))


@pytest.fixture(scope="session")
def charger_full(charger_dataset, budget):
    return _train(charger_dataset, "charger", budget)


@pytest.fixture(scope="session")
def charger_nopb(charger_dataset, budget):
    return _train(charger_dataset, "charger", budget, no_pb=True)


@pytest.fixture(scope="session")
def wiping_full(wiping_dataset, budget):
    return _train(wiping_dataset, "wiping", budget)


def _eval(pipeline, task, budget, ood=False, no_fast=False):
    policy = PhaForcePolicy(pipeline, no_fast=no_fast)
    return _timed(budget, lambda: batch_eval(
        lambda: make_env(task, ood=ood), policy, n_trials=N_TRIALS,
        base_seed=SEED_EVAL, task=task))


# --------------------------------------------------------------------------
# 1. Orthogonality of the injected residual
# --------------------------------------------------------------------------

def test_criterion_1_orthogonality(capsys):
    with _announce(capsys, 1, "orthogonal residual injection"):
        model = _small_slow()
        rng = np.random.default_rng(1)
        B = 1000
        v = rng.standard_normal((B, model.d)) * rng.uniform(0.1, 3.0, (B, 1))
        tokens = nn.Tensor(rng.standard_normal((B, 12, model.d)))
        pc = rng.uniform(0, 1, B)
        belief = rng.dirichlet(np.ones(5), size=B)
        t0 = time.time()
        fused = model.fuse(nn.Tensor(v), tokens, pc, belief).numpy()
        inj = fused - v                 # p_c-scaled orthogonal injection
        dots = np.abs((inj * v).sum(axis=1))
        bound = 1e-6 * np.linalg.norm(inj, axis=1) * \
            np.linalg.norm(v, axis=1) + 1e-9
        assert (dots <= bound).all()
        assert time.time() - t0 < 1.0


# --------------------------------------------------------------------------
# 2. Gating identities
# --------------------------------------------------------------------------

def test_criterion_2_gating_identities(capsys):
    with _announce(capsys, 2, "contact gate and one-hot routing identities"):
        model = _small_slow()
        rng = np.random.default_rng(2)
        v = nn.Tensor(rng.standard_normal((8, model.d)))
        tokens = nn.Tensor(rng.standard_normal((8, 12, model.d)))
        belief = rng.dirichlet(np.ones(5), size=8)
        fused = model.fuse(v, tokens, np.zeros(8), belief)
        np.testing.assert_array_equal(fused.numpy(), v.numpy())

        masks = tasks.task_masks("charger")
        c = rng.standard_normal(6)
        zero = route(c, PhaseSchedule(0.0, np.full(5, 0.2)), masks)
        np.testing.assert_array_equal(zero.to_array(), np.zeros(6))

        k = tasks.phase_index("charger", "search")
        hard = route(c, PhaseSchedule.one_hot(5, k), masks).to_array()
        np.testing.assert_array_equal(hard, c * np.array([1, 1, 0, 0, 0, 1]))


# --------------------------------------------------------------------------
# 3. Soft-routing linearity
# --------------------------------------------------------------------------

def test_criterion_3_routing_linearity(capsys):
    with _announce(capsys, 3, "soft routing linear in the phase belief"):
        masks = tasks.task_masks("charger")
        rng = np.random.default_rng(3)
        for _ in range(1000):
            c = rng.standard_normal(6)
            pc = rng.uniform(0, 1)
            belief = rng.dirichlet(np.ones(5))
            soft = route(c, PhaseSchedule(pc, belief), masks).to_array()
            mix = sum(belief[k] * route(c, PhaseSchedule.one_hot(5, k, pc),
                                        masks).to_array() for k in range(5))
            np.testing.assert_allclose(soft, mix, atol=1e-12)


# --------------------------------------------------------------------------
# 4. Teacher formulas
# --------------------------------------------------------------------------

def test_criterion_4_teacher_values(capsys):
    with _announce(capsys, 4, "physical-prior teacher formulas"):
        gains = TeacherGains()
        search = teacher_for_phase(
            "search", np.array([10.0, 0, 0, 0, 0, 0.5]), gains)
        np.testing.assert_allclose(
            search, [-5e-4, 0, 0, 0, 0, -1.5e-2], atol=1e-12)
        wiping = teacher_for_phase(
            "wiping", np.array([0, 0, -20.0, 0, 0, 0]), gains)
        np.testing.assert_allclose(wiping[2], 4e-4, atol=1e-12)
        np.testing.assert_allclose(np.delete(wiping, 2), 0.0, atol=1e-12)


# --------------------------------------------------------------------------
# 5. Gradient correctness of every trainable block
# --------------------------------------------------------------------------

def test_criterion_5_gradients(capsys):
    with _announce(capsys, 5, "finite-difference gradients, every block"):
        t0 = time.time()
        rng = np.random.default_rng(5)
        errs = {}

        cnn = ViewCNN(rng, 6, "a.cnn", channels=(2, 3, 4))
        img = rng.uniform(0, 1, (2, 32, 32))
        errs["cnn"] = nn.grad_check(
            lambda: cnn(img).square().mean(), cnn.parameters(),
            max_entries_per_param=6)

        enc = ForceEncoder(rng, hidden=8, token_dim=12, pooled_dim=4)
        wr = rng.standard_normal((2, 36, 6))
        errs["tcn"] = nn.grad_check(
            lambda: enc.pooled_batch(wr).square().mean(), enc.parameters(),
            max_entries_per_param=6)

        model = _small_slow(rng)
        v = rng.standard_normal((2, model.d))
        tok = rng.standard_normal((2, 10, model.d))
        pc = np.array([0.7, 0.3])
        belief = rng.dirichlet(np.ones(5), size=2)
        fusion_params = [p for n, p in model.named_parameters().items()
                         if n.startswith(("slow.Wq", "slow.Wk", "slow.Wv",
                                          "slow.Wo", "slow.gate",
                                          "slow.alpha"))]
        errs["fusion"] = nn.grad_check(
            lambda: model.fuse(nn.Tensor(v), nn.Tensor(tok), pc,
                               belief).square().mean(),
            fusion_params, max_entries_per_param=6)

        flat = model.horizon * TRAIN_ACTION_DIM
        noisy = rng.standard_normal((2, flat))
        cond = rng.standard_normal((2, 8))
        errs["denoiser"] = nn.grad_check(
            lambda: model.eps_predict(nn.Tensor(noisy), np.array([3, 70]),
                                      nn.Tensor(cond)).square().mean(),
            model.denoiser.parameters(), max_entries_per_param=6)

        fast = FastModel(rng, enc, "charger", hidden=12)
        feats = fast.features(rng.standard_normal((2, 36, 6)),
                              rng.standard_normal((2, 8)),
                              rng.standard_normal((2, 4, 8)), pc, belief)
        feats = nn.Tensor(feats.numpy())
        errs["fast_mlp"] = nn.grad_check(
            lambda: fast.routed(feats, pc, belief).square().mean(),
            fast.net.parameters(), max_entries_per_param=6)

        assert max(errs.values()) <= 1e-4, errs
        assert time.time() - t0 < 60.0


# --------------------------------------------------------------------------
# 6. DDIM sampler against a closed-form oracle
# --------------------------------------------------------------------------

def test_criterion_6_ddim_oracle(capsys):
    with _announce(capsys, 6, "DDIM recovers the clean chunk; seeded"):
        t0 = time.time()
        model = _small_slow(horizon=16)
        rng = np.random.default_rng(6)
        x0 = rng.uniform(-1, 1, model.horizon * TRAIN_ACTION_DIM)
        _, ab = ddim_schedule()

        def true_eps(x, t):
            return (x - np.sqrt(ab[t]) * x0) / np.sqrt(1.0 - ab[t])

        out = model.ddim_sample(nn.Tensor(np.zeros((1, 8))), seed=17,
                                eps_fn=true_eps)
        np.testing.assert_allclose(out.reshape(-1), x0, atol=1e-6)
        again = model.ddim_sample(nn.Tensor(np.zeros((1, 8))), seed=17,
                                  eps_fn=true_eps)
        np.testing.assert_array_equal(out, again)
        assert time.time() - t0 < 5.0


# --------------------------------------------------------------------------
# 7. Phase-predictor quality on held-out wiping demos
# --------------------------------------------------------------------------

def test_criterion_7_cap_quality(capsys, wiping_full, wiping_dataset):
    with _announce(capsys, 7, "phase predictor accuracy and anticipation"):
        pipeline, report = wiping_full
        final = report["cap"][-1]
        assert final["contact_acc"] >= 0.95, final
        assert final["phase_acc"] >= 0.95, final
        assert report["cap_seconds"] < 600.0

        # Anticipation on held-out episodes: the contact probability must
        # cross 0.5 at or before each true contact onset.
        from phaforce.pipeline import build_samples, cap_outputs
        from phaforce.sim.dataset import load_dataset
        episodes = load_dataset(wiping_dataset)[72:80]
        hits, onsets = 0, 0
        for ep in episodes:
            tbl = build_samples([ep], "wiping", 36, 16)
            pc, _ = cap_outputs(pipeline.cap, tbl)
            contact = ep.contact.astype(bool)
            for t in range(1, len(ep)):
                if contact[t] and not contact[t - 1]:
                    onsets += 1
                    if (pc[:t + 1] > 0.5).any():
                        hits += 1
        assert onsets > 0
        assert hits / onsets >= 0.90, (hits, onsets)


# --------------------------------------------------------------------------
# 8. Teachers as closed-loop controllers
# --------------------------------------------------------------------------

def test_criterion_8_teacher_stability(capsys):
    with _announce(capsys, 8, "teachers converge as controllers in sim"):
        gains = TeacherGains()

        # Normal-force regulation: drive z by the wiping teacher only.
        env = make_env("wiping", noise=False)
        env.reset(0)
        env.holding = True
        z = env.board_top() + env.cfg.sponge_length - 1e-3
        xy = np.array([0.02, 0.0])
        fz = 0.0
        for k in range(100):
            z += gains.alpha_lin[2] * (gains.target_Fz - fz)
            res = env.step(Pose(np.array([xy[0], xy[1], z]),
                                np.array([1.0, 0, 0, 0])), 0.015)
            fz = res.wrench[2]
        assert abs(fz - (-12.0)) <= 1.0, fz

        # Tangential-force reduction from rim contact via the search teacher.
        env = make_env("charger", noise=False)
        env.reset(0)
        xy = env.hole + np.array([4e-3, 1e-3])
        z = env.cfg.plate_top - 1.5e-3
        pose = lambda p: Pose(np.array([p[0], p[1], z]),
                              np.array([1.0, 0, 0, 0]))
        for _ in range(4):                      # settle the normal force
            res = env.step(pose(xy), 0.03)
        mags = []
        for k in range(50):
            step = teacher_for_phase("search", res.wrench, gains)
            xy = xy + step[:2]
            res = env.step(pose(xy), 0.03)
            mags.append(float(np.linalg.norm(res.wrench[:2])))
        mags = np.array(mags)
        assert (np.diff(mags) <= 1e-9).all(), mags
        assert mags[-1] < mags[0]


# --------------------------------------------------------------------------
# 9. Directional ablation structure
# --------------------------------------------------------------------------

def test_criterion_9_ablation_structure(capsys, charger_full, charger_nopb,
                                        wiping_full, budget):
    with _announce(capsys, 9, "ablation orderings at fixed seeds"):
        peg_full = _eval(charger_full[0], "charger", budget)
        peg_nopb = _eval(charger_nopb[0], "charger", budget)
        wip_full = _eval(wiping_full[0], "wiping", budget, ood=True)
        wip_nofast = _eval(wiping_full[0], "wiping", budget, ood=True,
                           no_fast=True)
        with capsys.disabled():
            print(f"    peg    full SR={peg_full['SR']:.2f}  "
                  f"no-PB SR={peg_nopb['SR']:.2f}")
            print(f"    wiping-OOD full SR={wip_full['SR']:.2f} "
                  f"over={wip_full['over']:.2f}  "
                  f"no-Fast SR={wip_nofast['SR']:.2f} "
                  f"over={wip_nofast['over']:.2f}")
            print(f"    pipeline wall-clock {budget['seconds']:.0f} s")

        assert wip_full["SR"] > wip_nofast["SR"]
        assert wip_full["SR"] - wip_nofast["SR"] >= 0.10
        assert wip_nofast["over"] > wip_full["over"]
        assert peg_full["SR"] >= peg_nopb["SR"]
        assert peg_full["SR"] - peg_nopb["SR"] >= 0.10
        assert budget["seconds"] < 3600.0


# --------------------------------------------------------------------------
# 10. Executor rate bookkeeping
# --------------------------------------------------------------------------

class _HoldPolicy:
    def __init__(self):
        self.n_plans = 0

    def reset(self, res):
        self.anchor = np.concatenate([res.tcp.position, res.tcp.orientation,
                                      [res.gripper]])

    def plan(self, obs, seed):
        self.n_plans += 1
        return np.tile(self.anchor, (16, 1))

    def correct(self, obs):
        return Twist.from_array(np.zeros(6))


def test_criterion_10_executor_bookkeeping(capsys):
    with _announce(capsys, 10, "dual-rate bookkeeping and zero-residual"):
        rates = RateConfig(f_s=6.0, f_c=24.0, horizon=16, latency_discard=3)
        assert rates.steps_per_plan == 4
        env = make_env("charger", noise=False)
        pol = _HoldPolicy()
        res = run_episode(env, pol, seed=1, rates=rates, max_steps=40)
        assert pol.n_plans == 10                    # one per 4 control steps
        assert res.info["starved_steps"] == 0
        np.testing.assert_array_equal(res.trace["executed"],
                                      res.trace["slow"])


# --------------------------------------------------------------------------
# 11. Determinism
# --------------------------------------------------------------------------

def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(capsys, tmp_path, charger_full):
    with _announce(capsys, 11, "byte-identical reruns"):
        # Dataset generation.
        generate_dataset(tmp_path / "d1", "charger", 4, seed=3)
        generate_dataset(tmp_path / "d2", "charger", 4, seed=3)
        assert _tree_bytes(tmp_path / "d1") == _tree_bytes(tmp_path / "d2")

        # Training and checkpointing (small but real staged run).
        cfg = PipelineConfig(task="charger", seed=1, n_demos=4, holdout=1,
                             cap_epochs=1, slow_epochs=1, fast_epochs=1)
        for tag in ("c1", "c2"):
            pipe, _ = train_pipeline(cfg, tmp_path / "d1")
            save_pipeline(tmp_path / tag, pipe)
        assert _tree_bytes(tmp_path / "c1") == _tree_bytes(tmp_path / "c2")

        # Traces and evaluation reports from the full trained policy.
        policy = PhaForcePolicy(charger_full[0])
        for tag in ("t1", "t2"):
            run_episode(make_env("charger"), policy, seed=9,
                        max_steps=24, trace_dir=tmp_path / tag)
            batch_eval(lambda: make_env("charger"), policy, n_trials=2,
                       base_seed=9, max_steps=24,
                       out_dir=tmp_path / f"e_{tag}")
        assert _tree_bytes(tmp_path / "t1") == _tree_bytes(tmp_path / "t2")
        assert _tree_bytes(tmp_path / "e_t1") == _tree_bytes(tmp_path / "e_t2")
