import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spadvsr import tensorad as ad


def leaf(a):
    return ad.Tensor(np.asarray(a, dtype=float), requires_grad=True)


def naive_conv3d(x, w, b):
    """Direct 7-loop 'same' convolution, replicate in time and zero in space."""
    t, h, wd, cin = x.shape
    kt, kh, kw, _, cout = w.shape
    out = np.zeros((t, h, wd, cout))
    for ti in range(t):
        for yi in range(h):
            for xi in range(wd):
                for co in range(cout):
                    acc = b[co]
                    for a in range(kt):
                        for c in range(kh):
                            for d in range(kw):
                                ts = min(max(ti + a - kt // 2, 0), t - 1)
                                ys, xs = yi + c - kh // 2, xi + d - kw // 2
                                if 0 <= ys < h and 0 <= xs < wd:
                                    acc += x[ts, ys, xs] @ w[a, c, d, :, co]
                    out[ti, yi, xi, co] = acc
    return out


# ------------------------------------------------------------------ graph

def test_linear_loss_gradient_is_input(rng):
    x = rng.normal(size=(3, 4))
    w = leaf(rng.normal(size=(3, 4)))
    ad.backward(ad.sum(ad.mul(w, ad.Tensor(x))))
    np.testing.assert_array_equal(w.grad, x)


def test_shared_node_gradients_accumulate():
    a = leaf([1.0, 2.0])
    b = ad.add(a, a)
    ad.backward(ad.sum(ad.mul(b, a)))      # sum(2 a^2) -> 4a
    np.testing.assert_allclose(a.grad, [4.0, 8.0])


def test_backward_rejects_non_scalar_and_non_finite():
    a = leaf([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.backward(ad.scale(a, 2.0))
    with pytest.raises(FloatingPointError):
        ad.backward(ad.sum(leaf([np.inf, 1.0])))


def test_no_grad_records_nothing():
    a = leaf([1.0, -1.0])
    with ad.no_grad():
        out = ad.relu(a)
    assert not out.requires_grad
    assert out._parents == ()


def test_relu_values_and_subgradient():
    a = leaf([-1.0, 0.0, 2.0])
    out = ad.relu(a)
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])
    ad.backward(ad.sum(out))
    np.testing.assert_array_equal(a.grad, [0.0, 0.0, 1.0])


# ----------------------------------------------------------- convolution

def test_identity_kernel_returns_input(rng):
    x = rng.normal(size=(3, 5, 6, 1))
    w = np.zeros((3, 3, 3, 1, 1))
    w[1, 1, 1] = 1.0
    np.testing.assert_array_equal(ad.conv3d(ad.Tensor(x), ad.Tensor(w)).data, x)


def test_ones_kernel_on_constant_with_replicate_padding():
    x = np.full((4, 5, 6, 1), 2.0)
    out = ad.conv3d(ad.Tensor(x), ad.Tensor(np.ones((3, 3, 3, 1, 1))),
                    spatial_padding="replicate")
    np.testing.assert_allclose(out.data, 54.0, rtol=0, atol=1e-12)


def test_conv3d_matches_naive_loops(rng):
    x = rng.normal(size=(4, 5, 6, 2))
    w = rng.normal(size=(3, 3, 3, 2, 3))
    b = rng.normal(size=3)
    out = ad.conv3d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
    np.testing.assert_allclose(out.data, naive_conv3d(x, w, b), rtol=0, atol=1e-12)


def test_conv3d_batched_equals_per_sample(rng):
    x = rng.normal(size=(2, 3, 4, 5, 2))
    w = ad.Tensor(rng.normal(size=(3, 3, 3, 2, 2)))
    batched = ad.conv3d(ad.Tensor(x), w).data
    for i in range(2):
        np.testing.assert_allclose(batched[i], ad.conv3d(ad.Tensor(x[i]), w).data, atol=1e-12)


def test_conv3d_errors():
    x = ad.Tensor(np.zeros((3, 4, 4, 2)))
    with pytest.raises(ValueError):
        ad.conv3d(x, ad.Tensor(np.zeros((3, 3, 3, 1, 1))))
    with pytest.raises(ValueError):
        ad.conv3d(x, ad.Tensor(np.zeros((2, 3, 3, 2, 1))))
    with pytest.raises(ValueError):
        ad.conv3d(x, ad.Tensor(np.zeros((3, 3, 3, 2, 1))), temporal_padding="wrap")


@pytest.mark.parametrize("tpad,spad", [("replicate", "zero"), ("zero", "replicate")])
def test_conv3d_gradients(rng, tpad, spad):
    x = leaf(rng.normal(size=(2, 3, 4, 5, 2)))
    w = leaf(rng.normal(size=(3, 3, 3, 2, 2)))
    b = leaf(rng.normal(size=2))
    target = rng.normal(size=(2, 3, 4, 5, 2))

    def loss():
        d = ad.sub(ad.conv3d(x, w, b, tpad, spad), ad.Tensor(target))
        return ad.mean(ad.mul(d, d))
    worst = ad.gradient_check(loss, {"x": x, "w": w, "b": b})
    assert max(worst.values()) < 1e-6


# --------------------------------------------------------- normalisation

def test_batch_norm_moments_in_training(rng):
    x = ad.Tensor(rng.normal(3.0, 2.0, size=(2, 3, 4, 5, 3)))
    state = ad.BatchNormState(3)
    out = ad.batch_norm(x, ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)), state, True).data
    flat = out.reshape(-1, 3)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(flat.var(axis=0), 1.0, atol=1e-5)   # eps shrinks it slightly


def test_batch_norm_on_standardised_input_is_near_identity(rng):
    x = rng.normal(size=(500, 2))
    x = (x - x.mean(0)) / x.std(0)
    out = ad.batch_norm(ad.Tensor(x), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)),
                        ad.BatchNormState(2), True).data
    np.testing.assert_allclose(out, x, atol=1e-4)


def test_batch_norm_constant_channel_gives_beta():
    x = ad.Tensor(np.full((4, 3, 2), 7.0))
    beta = np.array([0.5, -1.0])
    out = ad.batch_norm(x, ad.Tensor(np.ones(2)), ad.Tensor(beta), ad.BatchNormState(2), True)
    np.testing.assert_allclose(out.data, np.broadcast_to(beta, (4, 3, 2)))


def test_batch_norm_eval_uses_running_stats(rng):
    state = ad.BatchNormState(2)
    state.running_mean = np.array([1.0, 2.0])
    state.running_var = np.array([4.0, 9.0])
    x = rng.normal(size=(5, 2))
    out = ad.batch_norm(ad.Tensor(x), ad.Tensor(np.ones(2)), ad.Tensor(np.zeros(2)), state, False)
    np.testing.assert_allclose(out.data, (x - [1, 2]) / np.sqrt(np.array([4, 9]) + state.eps))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(rng, training):
    x = leaf(rng.normal(size=(3, 4, 2)))
    g = leaf(rng.normal(1.0, 0.2, size=2))
    b = leaf(rng.normal(size=2))
    target = rng.normal(size=(3, 4, 2))

    def loss():
        state = ad.BatchNormState(2)
        state.running_mean, state.running_var = np.array([0.1, -0.2]), np.array([1.5, 0.7])
        d = ad.sub(ad.batch_norm(x, g, b, state, training), ad.Tensor(target))
        return ad.mean(ad.mul(d, d))
    assert max(ad.gradient_check(loss, {"x": x, "g": g, "b": b}).values()) < 1e-6


# ---------------------------------------------------------- rearrangement

def test_depth_to_space_mapping():
    x = np.arange(16.0).reshape(1, 1, 16)
    out = ad.depth_to_space(ad.Tensor(x), 4).data[..., 0]
    for c in range(16):
        # value c sits at column c mod 4 and row c // 4
        assert out[c // 4, c % 4] == c


def test_softmax_uniform_taps():
    out = ad.softmax_taps(ad.Tensor(np.zeros((2, 25)))).data
    np.testing.assert_allclose(out, 0.04)


@given(arrays(np.float64, (3, 9), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(logits):
    s = ad.softmax_taps(ad.Tensor(logits)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_local_filter_with_normalised_taps_keeps_constant(rng):
    taps = ad.softmax_taps(ad.Tensor(rng.normal(size=(1, 4, 5, 3, 9)))).data
    out = ad.local_filter(ad.Tensor(taps), ad.Tensor(np.full((1, 4, 5), 0.3)), 3)
    np.testing.assert_allclose(out.data, 0.3, atol=1e-15)


def test_rearrangement_gradients(rng):
    logits = leaf(rng.normal(size=(1, 3, 4, 4, 9)))
    frame = leaf(rng.normal(size=(1, 3, 4)))
    feats = leaf(rng.normal(size=(2, 3, 5, 2)))
    pick = rng.normal(size=(1, 6, 8, 1))
    pick2 = rng.normal(size=(2, 3, 2))

    def loss():
        f = ad.local_filter(ad.softmax_taps(logits), frame, 3)
        up = ad.depth_to_space(f, 2)
        a = ad.sum(ad.mul(up, ad.Tensor(pick)))
        t = ad.take(ad.concat([feats, feats], axis=-1), 1, axis=2)
        c = ad.sum(ad.mul(ad.clip(t, -0.5, 0.5), ad.Tensor(np.concatenate([pick2] * 2, -1))))
        return ad.add(a, c)
    worst = ad.gradient_check(loss, {"logits": logits, "frame": frame, "feats": feats})
    assert max(worst.values()) < 1e-6
