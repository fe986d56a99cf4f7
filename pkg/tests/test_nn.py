"""Autodiff core: finite-difference gradients, op semantics, optimizer."""

import numpy as np
import pytest
from scipy.signal import correlate2d
from scipy.special import expit, softmax as scipy_softmax

from phaforce import nn


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = f()
        flat[i] = orig - h
        lm = f()
        flat[i] = orig
        gf[i] = (lp - lm) / (2 * h)
    return g


class TestElementwiseGrads:
    @pytest.mark.parametrize("op", [
        lambda t: (t * t + t).sum(),
        lambda t: (t.exp() + 1.0).log().sum(),
        lambda t: t.tanh().square().sum(),
        lambda t: t.relu().sum(),
        lambda t: t.sigmoid().sum(),
        lambda t: (t / 2.0 - t * 3.0).mean(),
        lambda t: nn.softmax(t, axis=-1).square().sum(),
    ])
    def test_matches_finite_differences(self, op):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 4)) + 0.5   # keep relu off the kink
        x[np.abs(x) < 1e-2] += 0.05
        t = nn.Tensor(x, requires_grad=True)
        loss = op(t)
        loss.backward()
        ref = fd_grad(lambda: op(nn.Tensor(x)).item(), x)
        np.testing.assert_allclose(t.grad, ref, rtol=1e-5, atol=1e-7)

    def test_broadcast_gradient_unreduces(self):
        rng = np.random.default_rng(1)
        a = nn.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = nn.Tensor(rng.standard_normal((4,)), requires_grad=True)
        ((a * b).sum()).backward()
        np.testing.assert_allclose(b.grad, a.data.sum(axis=0), atol=1e-12)

    def test_matmul_grads(self):
        rng = np.random.default_rng(2)
        A = nn.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        B = nn.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        ((A @ B).square().sum()).backward()
        Aref = fd_grad(lambda: np.square(A.data @ B.data).sum(), A.data)
        np.testing.assert_allclose(A.grad, Aref, rtol=1e-6, atol=1e-8)


class TestOpSemantics:
    def test_softmax_matches_scipy_and_sums_to_one(self):
        x = np.random.default_rng(3).standard_normal((5, 7)) * 10
        out = nn.softmax(nn.Tensor(x), axis=-1).numpy()
        np.testing.assert_allclose(out, scipy_softmax(x, axis=-1), atol=1e-12)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_sigmoid_matches_scipy_and_stays_open_interval(self):
        x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        out = nn.sigmoid(nn.Tensor(x)).numpy()
        np.testing.assert_allclose(out[1:4], expit(x[1:4]), atol=1e-12)
        assert (out > 0).all() and (out < 1).all()

    def test_non_finite_input_raises(self):
        with pytest.raises(nn.NonFiniteInput):
            nn.sigmoid(nn.Tensor(np.array([np.nan])))

    def test_no_grad_blocks_graph(self):
        t = nn.Tensor(np.ones(3), requires_grad=True)
        with nn.no_grad():
            out = (t * 2.0).sum()
        assert not out.requires_grad

    def test_concat_and_slice_backward(self):
        a = nn.Tensor(np.ones((2, 3)), requires_grad=True)
        b = nn.Tensor(np.ones((2, 2)), requires_grad=True)
        out = nn.concat([a, b], axis=-1)[:, 1:4].sum()
        out.backward()
        np.testing.assert_array_equal(a.grad, [[0, 1, 1], [0, 1, 1]])
        np.testing.assert_array_equal(b.grad, [[1, 0], [1, 0]])


class TestConv2d:
    def test_matches_scipy_correlate(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 8, 8, 3))
        w = rng.standard_normal((3, 3, 3, 5))
        out = nn.conv2d(nn.Tensor(x), nn.Tensor(w), stride=1).numpy()
        for b in range(2):
            for co in range(5):
                ref = sum(correlate2d(x[b, :, :, ci], w[:, :, ci, co],
                                      mode="valid") for ci in range(3))
                np.testing.assert_allclose(out[b, :, :, co], ref, atol=1e-10)

    def test_stride_two_subsamples(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 9, 9, 1))
        w = rng.standard_normal((3, 3, 1, 1))
        full = nn.conv2d(nn.Tensor(x), nn.Tensor(w), stride=1).numpy()
        strided = nn.conv2d(nn.Tensor(x), nn.Tensor(w), stride=2).numpy()
        np.testing.assert_allclose(strided, full[:, ::2, ::2, :], atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 6, 6, 2))
        w = nn.Parameter(rng.standard_normal((3, 3, 2, 3)) * 0.1, "w")
        err = nn.grad_check(
            lambda: nn.conv2d(nn.Tensor(x), w, stride=2).tanh().mean(), [w])
        assert err <= 1e-4


class TestCausalConv:
    def test_output_is_causal(self):
        rng = np.random.default_rng(7)
        conv = nn.CausalConv1d(2, 3, kernel=2, dilation=4, rng=rng, name="c")
        x = rng.standard_normal((10, 2))
        base = conv(nn.Tensor(x)).numpy()
        x2 = x.copy()
        x2[6] += 10.0           # future positions < 6 must be unaffected
        pert = conv(nn.Tensor(x2)).numpy()
        np.testing.assert_array_equal(base[:6], pert[:6])
        assert np.abs(base[6:] - pert[6:]).max() > 0

    def test_gradcheck(self):
        rng = np.random.default_rng(8)
        conv = nn.CausalConv1d(3, 4, kernel=2, dilation=2, rng=rng, name="c")
        x = rng.standard_normal((2, 7, 3))
        err = nn.grad_check(lambda: conv(nn.Tensor(x)).square().mean(),
                            conv.parameters())
        assert err <= 1e-4


class TestLayers:
    def test_linear_mlp_gradcheck(self):
        rng = np.random.default_rng(9)
        mlp = nn.MLP([4, 6, 2], rng, "m")
        x = rng.standard_normal((5, 4))
        err = nn.grad_check(lambda: mlp(nn.Tensor(x)).square().mean(),
                            mlp.parameters())
        assert err <= 1e-4

    def test_module_collects_nested_parameters(self):
        rng = np.random.default_rng(10)
        block = nn.TCNBlock(3, 5, 2, 1, rng, "b")
        names = set(block.named_parameters())
        assert {"b.conv.w0", "b.conv.w1", "b.conv.b", "b.proj.W",
                "b.proj.b"} == names

    def test_cross_attention_head_shapes_and_grad(self):
        rng = np.random.default_rng(11)
        q = nn.Tensor(rng.standard_normal((1, 4)), requires_grad=True)
        K = nn.Tensor(rng.standard_normal((6, 4)))
        V = nn.Tensor(rng.standard_normal((6, 4)))
        out = nn.cross_attention_head(q, K, V)
        assert out.shape == (1, 4)
        out.sum().backward()
        assert q.grad is not None


class TestAdam:
    def test_single_step_matches_hand_formula(self):
        p = nn.Parameter(np.array([2.0]), "p")
        opt = nn.Adam([p], lr=0.1)
        p.grad = np.array([0.5])
        opt.step()
        # First step: mhat = g, vhat = g^2 -> update = lr * g/(|g| + eps).
        expected = 2.0 - 0.1 * 0.5 / (0.5 + 1e-8)
        np.testing.assert_allclose(p.data, [expected], atol=1e-12)

    def test_converges_on_quadratic(self):
        p = nn.Parameter(np.array([5.0]), "p")
        opt = nn.Adam([p], lr=0.2)
        for _ in range(300):
            opt.zero_grad()
            loss = (nn.Tensor(np.array(1.0)) * p).square().sum()
            loss.backward()
            opt.step()
        assert abs(p.data[0]) < 1e-3

    def test_nonfinite_parameter_raises(self):
        p = nn.Parameter(np.array([1.0]), "p")
        opt = nn.Adam([p], lr=1.0)
        p.grad = np.array([np.inf])
        with pytest.raises(FloatingPointError):
            opt.step()


class TestCheckpoint:
    def test_round_trip_bitexact(self, tmp_path):
        rng = np.random.default_rng(12)
        mlp = nn.MLP([3, 4, 2], rng, "m")
        nn.save_checkpoint(tmp_path / "ck", mlp.named_parameters(),
                           hyperparameters={"dims": [3, 4, 2]}, seed=7,
                           extra_arrays={"mean": np.arange(3.0)})
        arrays, extras, hp, seed = nn.load_checkpoint(tmp_path / "ck")
        assert seed == 7 and hp == {"dims": [3, 4, 2]}
        np.testing.assert_array_equal(extras["mean"], np.arange(3.0))
        mlp2 = nn.MLP([3, 4, 2], np.random.default_rng(99), "m")
        nn.load_into(mlp2, arrays)
        for name, p in mlp.named_parameters().items():
            np.testing.assert_array_equal(
                p.data, mlp2.named_parameters()[name].data)

    def test_strict_mismatch_raises(self, tmp_path):
        rng = np.random.default_rng(13)
        mlp = nn.MLP([3, 4, 2], rng, "m")
        nn.save_checkpoint(tmp_path / "ck", mlp.named_parameters(),
                           hyperparameters={}, seed=0)
        arrays, _, _, _ = nn.load_checkpoint(tmp_path / "ck")
        other = nn.MLP([3, 5, 2], rng, "m")
        with pytest.raises((KeyError, ValueError)):
            nn.load_into(other, arrays)
