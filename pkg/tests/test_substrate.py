import numpy as np
import pytest

from fgsearch import substrate as S
from fgsearch.substrate import Tensor

from gradcheck import check_grad

TOL = 1e-4
SEEDS = range(20)


def rand(rng, *shape):
    return rng.standard_normal(shape)


class TestForward:
    def test_conv_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rand(rng, 1, 5, 5, 3)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0] = np.eye(3)
        out = S.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_conv_ones_kernel_hand_summed(self):
        # all-ones 3x3 kernel over all-ones 5x5 input, pad 1:
        # corners see 4 taps, edges 6, center 9
        x = np.ones((1, 5, 5, 1))
        w = np.ones((3, 3, 1, 1))
        out = S.conv2d(Tensor(x), Tensor(w), stride=1, pad=1).data[0, :, :, 0]
        assert out[0, 0] == 4
        assert out[0, 2] == 6
        assert out[2, 2] == 9
        assert out[4, 4] == 4
        assert out[4, 2] == 6

    def test_conv_channel_mismatch_message(self):
        x = np.ones((1, 4, 4, 3))
        w = np.ones((3, 3, 2, 8))
        with pytest.raises(S.ShapeError, match=r"\(1, 4, 4, 3\).*\(3, 3, 2, 8\)"):
            S.conv2d(Tensor(x), Tensor(w))

    def test_maxpool_values(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
        out = S.maxpool2(Tensor(x)).data[0, :, :, 0]
        np.testing.assert_array_equal(out, [[5, 7], [13, 15]])

    def test_gap_constant_map_exact(self):
        v = np.array([0.25, -1.5, 3.0])
        x = np.broadcast_to(v, (2, 4, 4, 3)).copy()
        out = S.gap(Tensor(x))
        np.testing.assert_array_equal(out.data, np.stack([v, v]))

    def test_cosine_self_is_one(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            u = Tensor(rand(rng, 16))
            assert S.cosine_sim(u, u).item() == pytest.approx(1.0, abs=1e-12)

    def test_cosine_zero_vector_errors(self):
        with pytest.raises(ValueError, match="zero-norm"):
            S.cosine_sim(Tensor(np.zeros(4)), Tensor(np.ones(4)))

    def test_bilinear_integer_points_direct_indexing(self):
        rng = np.random.default_rng(4)
        x = rand(rng, 5, 6, 3)
        pts = np.array([[0, 0], [2, 3], [4, 5], [1, 4]], dtype=np.float64)
        out = S.bilinear_sample(Tensor(x), pts)
        expected = x[pts[:, 0].astype(int), pts[:, 1].astype(int)]
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_concat_shape_error_reports_both(self):
        a = Tensor(np.zeros((2, 3, 3, 4)))
        b = Tensor(np.zeros((2, 4, 3, 4)))
        with pytest.raises(S.ShapeError, match=r"\(2, 3, 3, 4\).*\(2, 4, 3, 4\)"):
            S.concat_channels(a, b)

    def test_sigmoid_range_and_midpoint(self):
        x = Tensor(np.array([0.0, 30.0, -30.0]))
        s = S.sigmoid(x).data
        assert s[0] == pytest.approx(0.5)
        assert 0 < s[2] < s[0] < s[1] < 1

    def test_paste_overwrites_region(self):
        base = Tensor(np.zeros((4, 4, 2)))
        patch = Tensor(np.ones((2, 3, 2)))
        out = S.paste(base, patch, 1, 0).data
        assert out[1:3, 0:3].sum() == 12
        assert out.sum() == 12

    def test_no_grad_skips_graph(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with S.no_grad():
            y = S.relu(x)
        assert y._backward is None and not y.requires_grad


def _avoid_kinks(x, margin=0.05):
    """Push values away from zero so relu/max finite differences stay clean."""
    return x + np.sign(x) * margin + (x == 0) * margin


class TestGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 2, 5, 5, 2)
        w = rand(rng, 3, 3, 2, 3) * 0.5
        b = rand(rng, 3)
        fn = lambda x, w, b: S.conv2d(x, w, b, stride=1, pad=1)
        for wrt in ("x", "w", "b"):
            assert check_grad(fn, {"x": x, "w": w, "b": b}, wrt, seed) < TOL

    @pytest.mark.parametrize("seed", range(5))
    def test_conv2d_stride2(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 1, 7, 7, 2)
        w = rand(rng, 3, 3, 2, 2) * 0.5
        fn = lambda x, w: S.conv2d(x, w, None, stride=2, pad=1)
        assert check_grad(fn, {"x": x, "w": w}, "x", seed) < TOL
        assert check_grad(fn, {"x": x, "w": w}, "w", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu(self, seed):
        rng = np.random.default_rng(seed)
        x = _avoid_kinks(rand(rng, 10, 10))
        assert check_grad(lambda x: S.relu(x), {"x": x}, "x", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_sigmoid(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 10, 10)
        assert check_grad(lambda x: S.sigmoid(x), {"x": x}, "x", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_maxpool2(self, seed):
        rng = np.random.default_rng(seed)
        # well-separated values keep the argmax stable under the epsilon
        x = rand(rng, 2, 4, 4, 3) * 10
        assert check_grad(lambda x: S.maxpool2(x), {"x": x}, "x", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gap(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 2, 5, 5, 2)
        assert check_grad(lambda x: S.gap(x), {"x": x}, "x", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_linear(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 4, 6)
        w = rand(rng, 6, 3)
        b = rand(rng, 3)
        for wrt in ("x", "w", "b"):
            assert check_grad(lambda x, w, b: S.linear(x, w, b),
                              {"x": x, "w": w, "b": b}, wrt, seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_concat_channels(self, seed):
        rng = np.random.default_rng(seed)
        a = rand(rng, 2, 3, 3, 2)
        b = rand(rng, 2, 3, 3, 3)
        for wrt in ("a", "b"):
            assert check_grad(lambda a, b: S.concat_channels(a, b),
                              {"a": a, "b": b}, wrt, seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_bilinear_sample(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 5, 5, 2)
        # interior points off the integer lattice: the interpolation weights
        # are smooth there, so finite differences are valid
        pts = rng.uniform(0.1, 3.9, size=(7, 2))
        pts += np.where(np.abs(pts - np.round(pts)) < 0.02, 0.05, 0.0)
        assert check_grad(lambda x: S.bilinear_sample(x, pts), {"x": x}, "x", seed) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_cosine_sim(self, seed):
        rng = np.random.default_rng(seed)
        u = rand(rng, 12) + 0.1
        v = rand(rng, 12) + 0.1
        for wrt in ("u", "v"):
            assert check_grad(lambda u, v: S.cosine_sim(u, v),
                              {"u": u, "v": v}, wrt, seed) < TOL

    @pytest.mark.parametrize("seed", range(8))
    def test_plumbing_ops(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 1, 4, 4, 2)
        assert check_grad(lambda x: S.repeat_rows(x, 5), {"x": x}, "x", seed) < TOL
        y = rand(rng, 3, 8)
        assert check_grad(lambda x: S.reshape(x, (3, 2, 4)), {"x": y}, "x", seed) < TOL
        assert check_grad(lambda x: S.mean_axis(x, 1), {"x": y}, "x", seed) < TOL
        base, patch = rand(rng, 4, 4, 2), rand(rng, 2, 2, 2)
        for wrt in ("base", "patch"):
            assert check_grad(lambda base, patch: S.paste(base, patch, 1, 1),
                              {"base": base, "patch": patch}, wrt, seed) < TOL
        a, b = rand(rng, 3, 3), rand(rng, 3, 3)
        assert check_grad(lambda a, b: S.add(a, b), {"a": a, "b": b}, "a", seed) < TOL
        assert check_grad(lambda a: S.scale(a, -2.5), {"a": a}, "a", seed) < TOL


class TestBackwardMechanics:
    def test_grad_accumulates_across_uses(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = S.add(x, x)
        y.backward(seed=np.ones(2))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_backward_needs_scalar_without_seed(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(S.ShapeError):
            S.relu(x).backward()
