"""Phase predictor: anticipatory labels, loss closed forms, schedule types."""

import numpy as np
import pytest
from scipy.special import expit, log_softmax

from phaforce import nn
from phaforce.cap import (CapModel, EmptyTrajectory, PhaseSchedule,
                          PlannerObservation, bce_with_logits, cap_loss,
                          cross_entropy, make_labels, schedule_for_task)
from phaforce.force_encoder import DEFAULT_WINDOW, ForceEncoder, WrenchWindow


class TestMakeLabels:
    def test_future_contact_is_or_over_next_window(self):
        contact = np.array([0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0])
        phases = np.zeros(12, dtype=int)
        fc, _ = make_labels(contact, phases, K_f=3, delta=1)
        # Contact at t=5 lights up t=2..4 (strictly-future OR window).
        np.testing.assert_array_equal(fc, [0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0])

    def test_window_clamps_at_trajectory_end(self):
        contact = np.array([0, 0, 0, 1])
        fc, _ = make_labels(contact, np.zeros(4, dtype=int), K_f=8, delta=3)
        np.testing.assert_array_equal(fc, [1, 1, 1, 0])

    def test_phase_label_is_shifted_and_clamped(self):
        phases = np.array([0, 0, 1, 1, 2, 2])
        _, fp = make_labels(np.zeros(6, dtype=int), phases, K_f=8, delta=3)
        np.testing.assert_array_equal(fp, [1, 2, 2, 2, 2, 2])

    def test_empty_trajectory_raises(self):
        with pytest.raises(EmptyTrajectory):
            make_labels(np.zeros(0, dtype=int), np.zeros(0, dtype=int))

    def test_phase_out_of_range_raises(self):
        with pytest.raises(ValueError):
            make_labels(np.zeros(3, dtype=int), np.array([0, 1, 5]), K=4)


class TestLosses:
    def test_bce_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal(20) * 4
        y = rng.integers(0, 2, size=20).astype(float)
        out = bce_with_logits(nn.Tensor(logits), y).numpy()
        p = expit(logits)
        ref = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_cross_entropy_matches_scipy(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((6, 4)) * 3
        y = rng.integers(0, 4, size=6)
        out = cross_entropy(nn.Tensor(logits), y).numpy()
        ref = -log_softmax(logits, axis=-1)[np.arange(6), y]
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_zero_logits_give_ln2_plus_weighted_lnK(self):
        # Uninformative heads: BCE = ln 2, CE = ln K, total = ln2 + w*lnK.
        B, K = 5, 4
        loss = cap_loss(nn.Tensor(np.zeros((B, 1))),
                        nn.Tensor(np.zeros((B, K))),
                        np.ones(B), np.zeros(B, dtype=int), lambda_phi=2.0)
        np.testing.assert_allclose(loss.item(),
                                   np.log(2) + 2.0 * np.log(K), atol=1e-12)

    def test_loss_is_differentiable(self):
        lc = nn.Tensor(np.array([[0.3], [-0.2]]), requires_grad=True)
        lphi = nn.Tensor(np.zeros((2, 3)), requires_grad=True)
        cap_loss(lc, lphi, np.array([1.0, 0.0]), np.array([0, 2])).backward()
        assert np.abs(lc.grad).max() > 0 and np.abs(lphi.grad).max() > 0


class TestPhaseSchedule:
    def test_rejects_bad_contact_prob(self):
        with pytest.raises(ValueError):
            PhaseSchedule(1.2, np.array([1.0]))

    def test_rejects_off_simplex_belief(self):
        with pytest.raises(ValueError):
            PhaseSchedule(0.5, np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            PhaseSchedule(0.5, np.array([-0.1, 1.1]))

    def test_constructors(self):
        u = PhaseSchedule.uniform(4, contact_prob=0.25)
        np.testing.assert_allclose(u.phase_belief, 0.25)
        oh = PhaseSchedule.one_hot(5, 2)
        assert oh.phase_belief[2] == 1.0 and oh.phase_belief.sum() == 1.0
        assert oh.K == 5

    def test_schedule_for_task_checks_length(self):
        with pytest.raises(ValueError):
            schedule_for_task("charger", 0.5, np.full(4, 0.25))


class TestCapModel:
    def test_predict_returns_valid_schedule(self):
        rng = np.random.default_rng(2)
        enc = ForceEncoder(rng)
        cap = CapModel(rng, enc, K=4)
        obs = PlannerObservation(
            rng.uniform(0, 1, (3, 32, 32)),
            WrenchWindow(rng.standard_normal((DEFAULT_WINDOW, 6))),
            rng.standard_normal(8))
        sched = cap.predict(obs)
        assert 0.0 <= sched.contact_prob <= 1.0
        assert sched.K == 4
        np.testing.assert_allclose(sched.phase_belief.sum(), 1.0, atol=1e-12)

    def test_logits_shapes(self):
        rng = np.random.default_rng(3)
        cap = CapModel(rng, ForceEncoder(rng), K=5)
        lc, lphi = cap.logits(rng.uniform(0, 1, (2, 3, 32, 32)),
                              rng.standard_normal((2, DEFAULT_WINDOW, 6)),
                              rng.standard_normal((2, 8)))
        assert lc.shape == (2, 1) and lphi.shape == (2, 5)

    def test_proprio_normalization_changes_logits(self):
        rng = np.random.default_rng(4)
        cap = CapModel(rng, ForceEncoder(rng), K=4)
        imgs = rng.uniform(0, 1, (1, 3, 32, 32))
        wins = rng.standard_normal((1, DEFAULT_WINDOW, 6))
        prop = rng.standard_normal((1, 8)) * 1e-3
        base = cap.logits(imgs, wins, prop)[0].numpy()
        cap.set_proprio_normalization(np.zeros(8), np.full(8, 1e-3))
        scaled = cap.logits(imgs, wins, prop)[0].numpy()
        assert np.abs(base - scaled).max() > 1e-9
