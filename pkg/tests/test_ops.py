"""Numeric core tests: loop-level oracles, finite differences, Adam reference.

The oracles here are written independently of the library code: quadruple
loops for convolution, per-window scans for pooling, a hand-rolled Adam
recurrence. They are deliberately slow and obvious.
"""

import numpy as np
import pytest

from tinyvision import ops


# ----------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------

def conv2d_oracle(image, kernels, bias):
    """Quadruple-loop valid 3x3 correlation, float64 accumulation."""
    H, W, C = image.shape
    F = kernels.shape[0]
    out = np.zeros((H - 2, W - 2, F))
    for y in range(H - 2):
        for x in range(W - 2):
            for f in range(F):
                acc = float(bias[f])
                for ky in range(3):
                    for kx in range(3):
                        for c in range(C):
                            acc += float(image[y + ky, x + kx, c]) * float(kernels[f, ky, kx, c])
                out[y, x, f] = acc
    return out


def maxpool_oracle(x):
    H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    out = np.zeros((Ho, Wo, C), dtype=x.dtype)
    for y in range(Ho):
        for x_ in range(Wo):
            for c in range(C):
                out[y, x_, c] = max(x[2 * y, 2 * x_, c], x[2 * y, 2 * x_ + 1, c],
                                    x[2 * y + 1, 2 * x_, c], x[2 * y + 1, 2 * x_ + 1, c])
    return out


def numeric_grad(f, x, h=1e-3):
    """Central finite differences of scalar f at x, elementwise."""
    g = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / (np.linalg.norm(b) + 1e-12)


def adam_reference(param, grads, lr=0.0003, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam recurrence applied to a sequence of gradients."""
    p = param.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = g.astype(np.float64)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------

class TestConv2d:
    def test_matches_loop_oracle_5x5x2(self, rng):
        image = rng.standard_normal((5, 5, 2))
        kernels = rng.standard_normal((3, 3, 3, 2))
        bias = rng.standard_normal(3)
        got = ops.conv2d_forward(image, kernels, bias)
        want = conv2d_oracle(image, kernels, bias)
        assert got.shape == (3, 3, 3)
        assert rel_err(got, want) < 1e-12

    def test_reference_input_shape(self, rng):
        image = rng.random((64, 64, 3), dtype=np.float32)
        kernels = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        bias = np.zeros(4, dtype=np.float32)
        out = ops.conv2d_forward(image, kernels, bias)
        assert out.shape == (62, 62, 4)

    def test_channel_mismatch_raises(self, rng):
        image = rng.random((8, 8, 3))
        kernels = rng.standard_normal((4, 3, 3, 2))
        with pytest.raises(ops.ShapeError):
            ops.conv2d_forward(image, kernels, np.zeros(4))

    def test_too_small_image_raises(self, rng):
        with pytest.raises(ops.ShapeError):
            ops.conv2d_forward(rng.random((2, 5, 1)), rng.standard_normal((1, 3, 3, 1)), np.zeros(1))

    def test_nan_input_raises(self, rng):
        image = rng.random((5, 5, 1))
        image[0, 0, 0] = np.nan
        with pytest.raises(ops.NumericsError):
            ops.conv2d_forward(image, rng.standard_normal((1, 3, 3, 1)), np.zeros(1))

    def test_gradients_match_finite_differences(self, rng):
        image = rng.standard_normal((6, 6, 2))
        kernels = rng.standard_normal((3, 3, 3, 2))
        bias = rng.standard_normal(3)
        probe = rng.standard_normal((4, 4, 3))  # random contraction of the output

        def loss_of_image(img):
            return float((ops.conv2d_forward(img, kernels, bias) * probe).sum())

        def loss_of_kernels(k):
            return float((ops.conv2d_forward(image, k, bias) * probe).sum())

        def loss_of_bias(b):
            return float((ops.conv2d_forward(image, kernels, b) * probe).sum())

        gi, gk, gb = ops.conv2d_backward(image, kernels, probe)
        assert rel_err(gi, numeric_grad(loss_of_image, image)) < 1e-3
        assert rel_err(gk, numeric_grad(loss_of_kernels, kernels)) < 1e-3
        assert rel_err(gb, numeric_grad(loss_of_bias, bias)) < 1e-3


# ----------------------------------------------------------------------
# leaky relu
# ----------------------------------------------------------------------

class TestLeakyRelu:
    def test_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0], dtype=np.float32)
        got = ops.leaky_relu(x)
        np.testing.assert_allclose(got, [-0.2, -0.05, 0.0, 0.5, 2.0], rtol=1e-6)

    def test_zero_input_takes_negative_slope_in_backward(self):
        x = np.array([0.0, 1.0, -1.0])
        g = ops.leaky_relu_backward(x, np.ones(3))
        np.testing.assert_allclose(g, [0.1, 1.0, 0.1])

    def test_gradient_matches_finite_differences(self, rng):
        # keep inputs away from the kink at 0
        x = rng.standard_normal(40)
        x = np.where(np.abs(x) < 0.05, 0.5, x)
        probe = rng.standard_normal(40)

        def loss(v):
            return float((ops.leaky_relu(v) * probe).sum())

        assert rel_err(ops.leaky_relu_backward(x, probe), numeric_grad(loss, x)) < 1e-3


# ----------------------------------------------------------------------
# maxpool
# ----------------------------------------------------------------------

class TestMaxpool:
    def test_matches_window_oracle(self, rng):
        x = rng.standard_normal((6, 8, 3))
        pooled, _ = ops.maxpool2x2(x)
        np.testing.assert_array_equal(pooled, maxpool_oracle(x))

    def test_reference_shape_62_to_31(self, rng):
        x = rng.random((62, 62, 4), dtype=np.float32)
        pooled, argmax = ops.maxpool2x2(x)
        assert pooled.shape == (31, 31, 4)
        assert argmax.shape == (31, 31, 4)

    def test_odd_trailing_row_col_dropped(self, rng):
        x = rng.standard_normal((7, 5, 2))
        pooled, _ = ops.maxpool2x2(x)
        np.testing.assert_array_equal(pooled, maxpool_oracle(x))
        assert pooled.shape == (3, 2, 2)

    def test_backward_conserves_gradient_mass(self, rng):
        for _ in range(5):
            x = rng.standard_normal((8, 10, 3))
            _, argmax = ops.maxpool2x2(x)
            g = rng.standard_normal((4, 5, 3))
            gi = ops.maxpool2x2_backward(g, argmax, x.shape)
            assert abs(gi.sum() - g.sum()) < 1e-9
            # every grad lands on exactly one distinct input cell
            assert np.count_nonzero(gi) == np.count_nonzero(g)

    def test_backward_routes_to_argmax(self):
        x = np.zeros((2, 2, 1))
        x[1, 0, 0] = 5.0
        _, argmax = ops.maxpool2x2(x)
        gi = ops.maxpool2x2_backward(np.array([[[2.0]]]), argmax, x.shape)
        assert gi[1, 0, 0] == 2.0
        assert gi.sum() == 2.0

    def test_gradient_matches_finite_differences(self, rng):
        # perturb well below the gap between window values to avoid argmax flips
        x = rng.permutation(np.arange(8 * 8 * 2, dtype=np.float64)).reshape(8, 8, 2)
        probe = rng.standard_normal((4, 4, 2))

        def loss(v):
            return float((ops.maxpool2x2(v)[0] * probe).sum())

        _, argmax = ops.maxpool2x2(x)
        gi = ops.maxpool2x2_backward(probe, argmax, x.shape)
        assert rel_err(gi, numeric_grad(loss, x)) < 1e-3


# ----------------------------------------------------------------------
# dense
# ----------------------------------------------------------------------

class TestDense:
    def test_forward_against_manual(self, rng):
        x = rng.standard_normal(7)
        w = rng.standard_normal((7, 3))
        b = rng.standard_normal(3)
        want = np.array([sum(x[n] * w[n, k] for n in range(7)) + b[k] for k in range(3)])
        np.testing.assert_allclose(ops.dense_forward(x, w, b), want, rtol=1e-12)

    def test_shape_mismatch_raises(self, rng):
        with pytest.raises(ops.ShapeError):
            ops.dense_forward(rng.standard_normal(5), rng.standard_normal((6, 3)), np.zeros(3))

    def test_gradients_match_finite_differences(self, rng):
        x = rng.standard_normal(9)
        w = rng.standard_normal((9, 4))
        b = rng.standard_normal(4)
        probe = rng.standard_normal(4)

        gx, gw, gb = ops.dense_backward(x, w, probe)
        assert rel_err(gx, numeric_grad(lambda v: float((ops.dense_forward(v, w, b) * probe).sum()), x)) < 1e-3
        assert rel_err(gw, numeric_grad(lambda v: float((ops.dense_forward(x, v, b) * probe).sum()), w)) < 1e-3
        assert rel_err(gb, numeric_grad(lambda v: float((ops.dense_forward(x, w, v) * probe).sum()), b)) < 1e-3


# ----------------------------------------------------------------------
# softmax cross-entropy
# ----------------------------------------------------------------------

class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, grad, probs = ops.softmax_cross_entropy(np.zeros(3), 0)
        assert abs(loss - np.log(3)) < 1e-12
        np.testing.assert_allclose(probs, [1 / 3] * 3)
        np.testing.assert_allclose(grad, [1 / 3 - 1, 1 / 3, 1 / 3])

    def test_extreme_logits_stay_finite(self):
        loss, grad, probs = ops.softmax_cross_entropy(np.array([1000.0, 0.0, 0.0]), 0)
        assert loss == 0.0
        assert np.all(np.isfinite(grad))
        np.testing.assert_allclose(probs, [1.0, 0.0, 0.0])

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            ops.softmax_cross_entropy(np.zeros(3), 3)

    def test_probs_sum_to_one(self, rng):
        for _ in range(10):
            logits = rng.standard_normal(5) * 10
            _, _, probs = ops.softmax_cross_entropy(logits, 2)
            assert abs(probs.sum() - 1.0) < 1e-9
            assert np.all(probs >= 0)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            logits = rng.standard_normal(4)
            label = int(rng.integers(4))
            _, grad, _ = ops.softmax_cross_entropy(logits, label)
            num = numeric_grad(lambda v: ops.softmax_cross_entropy(v, label)[0], logits, h=1e-5)
            assert rel_err(grad, num) < 1e-3


# ----------------------------------------------------------------------
# adam
# ----------------------------------------------------------------------

class TestAdam:
    def test_first_step_scalar(self):
        p = np.array([0.0])
        st = ops.AdamState.for_param(p, lr=0.0003)
        new_p, st = ops.adam_step(p, np.array([1.0]), st)
        assert st.t == 1
        assert abs(new_p[0] - (-0.0003)) < 1e-8

    def test_two_steps_match_reference(self, rng):
        p = rng.standard_normal(11)
        g1 = rng.standard_normal(11)
        g2 = rng.standard_normal(11)
        st = ops.AdamState.for_param(p, lr=0.01)
        p1, st = ops.adam_step(p, g1, st)
        p2, st = ops.adam_step(p1, g2, st)
        assert st.t == 2
        np.testing.assert_allclose(p2, adam_reference(p, [g1, g2], lr=0.01), rtol=1e-10)

    def test_zero_grad_leaves_param_unchanged(self, rng):
        p = rng.standard_normal(6)
        st = ops.AdamState.for_param(p)
        new_p, st = ops.adam_step(p, np.zeros(6), st)
        np.testing.assert_array_equal(new_p, p)
        assert st.t == 1
        new_p2, st = ops.adam_step(new_p, np.zeros(6), st)
        np.testing.assert_array_equal(new_p2, p)
        assert st.t == 2

    def test_inputs_not_mutated(self, rng):
        p = rng.standard_normal(4)
        g = rng.standard_normal(4)
        p0, g0 = p.copy(), g.copy()
        st = ops.AdamState.for_param(p)
        ops.adam_step(p, g, st)
        np.testing.assert_array_equal(p, p0)
        np.testing.assert_array_equal(g, g0)
        assert st.t == 0 and not st.m.any()
