"""Reverse-mode engine: every primitive checked against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdelin import autodiff as ad
from ecgdelin.autodiff import DiffTensor
from ecgdelin.errors import ShapeError

from helpers import numeric_gradient, relative_error

TOL = 1e-6


def grad_check(op, arrays, seed=0, tol=TOL):
    """Compare reverse-mode gradients of sum(op(*x) * w) to finite differences."""
    rng = np.random.default_rng(seed)
    probe = op(*[DiffTensor(a) for a in arrays])
    w = rng.standard_normal(probe.shape)

    tensors = [ad.parameter(a) for a in arrays]
    ad.tsum(ad.mul(op(*tensors), w)).backward()
    for i, t in enumerate(tensors):
        def f(x, i=i):
            args = [DiffTensor(a) for a in arrays]
            args[i] = DiffTensor(x)
            return float(ad.tsum(ad.mul(op(*args), w)).data)

        fd = numeric_gradient(f, arrays[i])
        assert t.grad is not None, f"no gradient reached input {i}"
        err = relative_error(t.grad, fd)
        assert err < tol, f"input {i}: rel err {err}"


def _rand(*shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


class TestElementwise:
    def test_add_with_broadcast(self):
        grad_check(ad.add, [_rand(3, 1, 4, seed=1), _rand(1, 5, 4, seed=2)])

    def test_mul_with_broadcast(self):
        grad_check(ad.mul, [_rand(2, 4, seed=3), _rand(4, seed=4)])

    def test_div(self):
        grad_check(ad.div, [_rand(3, 3, seed=5), _rand(3, 3, seed=6, lo=0.5, hi=2.0)])

    def test_power(self):
        grad_check(lambda a: ad.power(a, 3.0), [_rand(4, 4, seed=7, lo=0.2, hi=2.0)])

    def test_absolute_away_from_zero(self):
        x = _rand(3, 5, seed=8)
        x[np.abs(x) < 0.1] = 0.5
        grad_check(ad.absolute, [x])

    def test_absolute_subgradient_zero_at_zero(self):
        t = ad.parameter(np.array([0.0, -2.0, 3.0]))
        ad.tsum(ad.absolute(t)).backward()
        assert np.array_equal(t.grad, [0.0, -1.0, 1.0])

    def test_clamp_min_away_from_kink(self):
        x = _rand(4, 4, seed=9)
        x[np.abs(x) < 0.1] = 0.4
        grad_check(lambda a: ad.clamp_min(a, 0.0), [x])

    def test_clamp_min_subgradient_zero_at_kink(self):
        t = ad.parameter(np.array([0.0, -1.0, 1.0]))
        ad.tsum(ad.clamp_min(t, 0.0)).backward()
        assert np.array_equal(t.grad, [0.0, 0.0, 1.0])

    def test_sigmoid(self):
        grad_check(ad.sigmoid, [_rand(2, 6, seed=10, lo=-3.0, hi=3.0)])

    def test_leaky_relu(self):
        x = _rand(3, 7, seed=11)
        x[np.abs(x) < 0.05] = 0.3
        grad_check(lambda a: ad.leaky_relu(a, 0.01), [x])


class TestReductionsAndShape:
    def test_sum_all(self):
        grad_check(lambda a: ad.reshape(ad.tsum(a), (1,)), [_rand(3, 4, seed=12)])

    def test_sum_axis_tuple_keepdims(self):
        grad_check(lambda a: ad.tsum(a, axis=(0, 2), keepdims=True), [_rand(2, 3, 4, seed=13)])

    def test_sum_negative_axis(self):
        grad_check(lambda a: ad.tsum(a, axis=-1), [_rand(2, 5, seed=14)])

    def test_mean(self):
        grad_check(lambda a: ad.tmean(a, axis=1), [_rand(3, 4, seed=15)])
        assert ad.tmean(DiffTensor(np.full((2, 2), 3.0))).item() == pytest.approx(3.0)

    def test_reshape(self):
        grad_check(lambda a: ad.reshape(a, (6, 2)), [_rand(3, 4, seed=16)])

    def test_concat(self):
        grad_check(lambda a, b: ad.concat([a, b], axis=1),
                   [_rand(2, 3, 4, seed=17), _rand(2, 2, 4, seed=18)])

    def test_pad1d(self):
        grad_check(lambda a: ad.pad1d(a, 2, 3), [_rand(2, 3, 5, seed=19)])
        with pytest.raises(ShapeError):
            ad.pad1d(DiffTensor(np.zeros((1, 1, 4))), -1, 0)


class TestConv1d:
    def test_forward_matches_direct_correlation(self):
        x = _rand(1, 1, 16, seed=20)
        k = _rand(1, 1, 5, seed=21)
        out = ad.conv1d(DiffTensor(x), DiffTensor(k), padding=0)
        expected = np.correlate(x[0, 0], k[0, 0], mode="valid")
        assert np.allclose(out.data[0, 0], expected)

    def test_forward_multichannel_oracle(self):
        # brute-force loop implementation as the oracle
        x = _rand(2, 3, 10, seed=22)
        k = _rand(4, 3, 3, seed=23)
        p = 1
        out = ad.conv1d(DiffTensor(x), DiffTensor(k), padding=p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        b, c_out, L = out.shape
        expected = np.zeros((2, 4, 10))
        for bi in range(2):
            for o in range(4):
                for j in range(10):
                    expected[bi, o, j] = np.sum(xp[bi, :, j:j + 3] * k[o])
        assert np.allclose(out.data, expected)

    def test_default_padding_preserves_length(self):
        out = ad.conv1d(DiffTensor(_rand(1, 2, 12, seed=24)), DiffTensor(_rand(3, 2, 5, seed=25)))
        assert out.shape == (1, 3, 12)

    def test_full_padding_length(self):
        out = ad.conv1d(DiffTensor(_rand(1, 1, 8, seed=26)), DiffTensor(_rand(1, 1, 3, seed=27)),
                        padding=2)
        assert out.shape == (1, 1, 10)

    @pytest.mark.parametrize("padding", [0, 1, 2, 4])
    def test_gradients(self, padding):
        grad_check(lambda x, k: ad.conv1d(x, k, padding=padding),
                   [_rand(2, 3, 9, seed=28), _rand(2, 3, 3, seed=29)])

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            ad.conv1d(DiffTensor(np.zeros((2, 8))), DiffTensor(np.zeros((1, 1, 3))))
        with pytest.raises(ShapeError):
            ad.conv1d(DiffTensor(np.zeros((1, 2, 8))), DiffTensor(np.zeros((1, 3, 3))))
        with pytest.raises(ShapeError):
            ad.conv1d(DiffTensor(np.zeros((1, 1, 2))), DiffTensor(np.zeros((1, 1, 5))), padding=0)

    @given(st.integers(0, 10 ** 6), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
    @settings(max_examples=30, deadline=None)
    def test_linearity(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((1, 2, 8)), rng.standard_normal((1, 2, 8))
        k = rng.standard_normal((3, 2, 3))
        mixed = ad.conv1d(DiffTensor(alpha * x + beta * y), DiffTensor(k)).data
        parts = (alpha * ad.conv1d(DiffTensor(x), DiffTensor(k)).data
                 + beta * ad.conv1d(DiffTensor(y), DiffTensor(k)).data)
        assert np.allclose(mixed, parts, atol=1e-10)


class TestPooling:
    def test_maxpool2_forward(self):
        x = DiffTensor(np.array([[[1.0, 3.0, 2.0, 2.0, -1.0, -5.0]]]))
        out = ad.maxpool2(x)
        assert np.array_equal(out.data, [[[3.0, 2.0, -1.0]]])

    def test_maxpool2_gradient(self):
        x = _rand(2, 3, 8, seed=30)
        # perturbations must not flip the argmax, keep entries well separated
        x = np.round(x, 1) + np.arange(x.size).reshape(x.shape) * 1e-3
        grad_check(ad.maxpool2, [x])

    def test_maxpool2_tie_goes_to_first(self):
        t = ad.parameter(np.array([[[2.0, 2.0]]]))
        ad.tsum(ad.maxpool2(t)).backward()
        assert np.array_equal(t.grad, [[[1.0, 0.0]]])

    def test_maxpool2_odd_length_rejected(self):
        with pytest.raises(ShapeError, match="pad"):
            ad.maxpool2(DiffTensor(np.zeros((1, 1, 5))))

    def test_upsample2_forward(self):
        out = ad.upsample2(DiffTensor(np.array([[[1.0, 2.0]]])))
        assert np.array_equal(out.data, [[[1.0, 1.0, 2.0, 2.0]]])

    def test_upsample2_gradient(self):
        grad_check(ad.upsample2, [_rand(2, 2, 5, seed=31)])

    def test_pool_then_upsample_round_trip_shape(self):
        x = DiffTensor(_rand(1, 4, 16, seed=32))
        assert ad.upsample2(ad.maxpool2(x)).shape == x.shape


class TestGraphMechanics:
    def test_shared_node_accumulates(self):
        x = ad.parameter(np.array([2.0]))
        y = ad.add(ad.mul(x, x), x)  # x^2 + x, dy/dx = 2x + 1 = 5
        y.backward()
        assert x.grad == pytest.approx([5.0])

    def test_diamond_graph(self):
        x = ad.parameter(np.array([3.0]))
        a = ad.mul(x, 2.0)
        b = ad.mul(x, 5.0)
        out = ad.mul(a, b)  # 10 x^2, d/dx = 20x = 60
        out.backward()
        assert x.grad == pytest.approx([60.0])

    def test_backward_needs_scalar_without_grad(self):
        t = ad.parameter(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            ad.mul(t, 2.0).backward()

    def test_backward_with_explicit_gradient(self):
        t = ad.parameter(np.ones((2, 2)))
        out = ad.mul(t, 3.0)
        out.backward(np.full((2, 2), 2.0))
        assert np.array_equal(t.grad, np.full((2, 2), 6.0))

    def test_no_grad_builds_no_graph(self):
        t = ad.parameter(np.ones(3))
        with ad.no_grad():
            out = ad.mul(t, 2.0)
        assert not out.requires_grad and out._parents == ()
        assert ad.grad_enabled()

    def test_detach_blocks_gradient(self):
        t = ad.parameter(np.array([4.0]))
        out = ad.mul(t.detach(), 3.0)
        assert not out.requires_grad

    def test_constants_get_no_grad(self):
        c = DiffTensor(np.ones(3))
        t = ad.parameter(np.ones(3))
        ad.tsum(ad.mul(t, c)).backward()
        assert c.grad is None and t.grad is not None

    def test_repeated_backward_accumulates(self):
        t = ad.parameter(np.array([1.0]))
        out = ad.mul(t, 4.0)
        out.backward()
        first = t.grad.copy()
        out2 = ad.mul(t, 4.0)
        out2.backward()
        assert t.grad == pytest.approx(first * 2)

    def test_operator_sugar(self):
        a = ad.parameter(np.array([2.0]))
        b = ad.parameter(np.array([3.0]))
        out = (a * b + 1.0 - a) / b  # (6 + 1 - 2)/3
        assert out.item() == pytest.approx(5.0 / 3.0)
        out.backward()
        assert a.grad is not None and b.grad is not None

    def test_item_rejects_vectors(self):
        with pytest.raises(ShapeError):
            DiffTensor(np.zeros(3)).item()
