"""Wrench-history encoder: causality, receptive field, pooling, shapes."""

import numpy as np
import pytest

from phaforce import nn
from phaforce.force_encoder import DEFAULT_WINDOW, ForceEncoder, WrenchWindow


@pytest.fixture(scope="module")
def encoder():
    return ForceEncoder(np.random.default_rng(0))


class TestWrenchWindow:
    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            WrenchWindow(np.zeros((10, 6)))
        with pytest.raises(ValueError):
            WrenchWindow(np.zeros((DEFAULT_WINDOW, 5)))

    def test_non_finite_rejected(self):
        samples = np.zeros((DEFAULT_WINDOW, 6))
        samples[3, 2] = np.inf
        with pytest.raises(ValueError):
            WrenchWindow(samples)

    def test_latest_is_last_row(self):
        samples = np.arange(DEFAULT_WINDOW * 6, dtype=float).reshape(-1, 6)
        w = WrenchWindow(samples)
        np.testing.assert_array_equal(w.latest(), samples[-1])


class TestCausality:
    def test_tokens_are_causal_at_every_position(self, encoder):
        rng = np.random.default_rng(1)
        base_in = rng.standard_normal((DEFAULT_WINDOW, 6))
        base = encoder.encode_tokens(WrenchWindow(base_in)).numpy()
        for t in (0, 10, 25, DEFAULT_WINDOW - 1):
            pert = base_in.copy()
            pert[t] += 5.0
            out = encoder.encode_tokens(WrenchWindow(pert)).numpy()
            np.testing.assert_array_equal(out[:t], base[:t])
            assert np.abs(out[t:] - base[t:]).max() > 0

    def test_receptive_field_is_16(self, encoder):
        # Dilations 1,2,4,8 with kernel 2 reach exactly 16 steps back.
        rng = np.random.default_rng(2)
        base_in = rng.standard_normal((DEFAULT_WINDOW, 6))
        base = encoder.encode_tokens(WrenchWindow(base_in)).numpy()
        t_out = DEFAULT_WINDOW - 1
        pert = base_in.copy()
        pert[t_out - 16] += 5.0    # just outside the receptive field
        out = encoder.encode_tokens(WrenchWindow(pert)).numpy()
        np.testing.assert_array_equal(out[t_out], base[t_out])
        pert = base_in.copy()
        pert[t_out - 15] += 5.0    # oldest position still inside
        out = encoder.encode_tokens(WrenchWindow(pert)).numpy()
        assert np.abs(out[t_out] - base[t_out]).max() > 0


class TestPooling:
    def test_pooled_equals_mean_of_trunk_then_projection(self, encoder):
        rng = np.random.default_rng(3)
        w = WrenchWindow(rng.standard_normal((DEFAULT_WINDOW, 6)))
        pooled = encoder.encode_pooled(w).numpy()
        trunk = encoder.trunk(nn.Tensor(w.samples)).numpy()
        manual = trunk.mean(axis=0) @ encoder.pool_head.W.data + \
            encoder.pool_head.b.data
        np.testing.assert_allclose(pooled, manual, atol=1e-12)

    def test_shapes(self, encoder):
        w = WrenchWindow.zeros()
        assert encoder.encode_tokens(w).shape == (DEFAULT_WINDOW, 96)
        assert encoder.encode_pooled(w).shape == (32,)

    def test_batch_matches_single(self, encoder):
        rng = np.random.default_rng(4)
        samples = rng.standard_normal((3, DEFAULT_WINDOW, 6))
        batch_tok = encoder.tokens_batch(samples).numpy()
        batch_pool = encoder.pooled_batch(samples).numpy()
        for i in range(3):
            w = WrenchWindow(samples[i])
            np.testing.assert_allclose(batch_tok[i],
                                       encoder.encode_tokens(w).numpy(),
                                       atol=1e-12)
            np.testing.assert_allclose(batch_pool[i],
                                       encoder.encode_pooled(w).numpy(),
                                       atol=1e-12)


class TestNormalization:
    def test_affine_applied_before_trunk(self):
        enc = ForceEncoder(np.random.default_rng(5))
        rng = np.random.default_rng(6)
        raw = rng.standard_normal((DEFAULT_WINDOW, 6)) * 10 + 3
        mean, std = raw.mean(axis=0), raw.std(axis=0)
        enc.set_normalization(mean, std)
        shifted = enc.encode_pooled(WrenchWindow(raw)).numpy()
        enc.set_normalization(np.zeros(6), np.ones(6))
        manual = enc.encode_pooled(WrenchWindow((raw - mean) / std)).numpy()
        np.testing.assert_allclose(shifted, manual, atol=1e-12)

    def test_zero_std_guard(self):
        enc = ForceEncoder(np.random.default_rng(7))
        enc.set_normalization(np.zeros(6), np.zeros(6))
        assert (enc.norm_std == 1.0).all()

    def test_shared_instance_is_same_object(self):
        # The three consumers share one encoder: parameter identity matters.
        enc = ForceEncoder(np.random.default_rng(8))
        from phaforce.cap import CapModel
        from phaforce.fast import FastModel
        cap = CapModel(np.random.default_rng(9), enc, K=5)
        fast = FastModel(np.random.default_rng(10), enc, "charger")
        assert cap.encoder is fast.encoder is enc
        names_cap = set(cap.named_parameters())
        names_fast = set(fast.named_parameters())
        shared = {n for n in names_cap & names_fast if n.startswith("force.")}
        assert shared            # trunk parameters appear in both, once each


def test_trunk_gradcheck():
    enc = ForceEncoder(np.random.default_rng(11), hidden=8, token_dim=12,
                       pooled_dim=4)
    x = np.random.default_rng(12).standard_normal((2, DEFAULT_WINDOW, 6))
    err = nn.grad_check(
        lambda: enc.pooled_batch(x).square().mean(), enc.parameters(),
        max_entries_per_param=6)
    assert err <= 1e-4
