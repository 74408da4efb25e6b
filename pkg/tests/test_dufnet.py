import numpy as np
import pytest

from spadvsr import tensorad as ad
from spadvsr.dufnet import DUFNetwork, NetConfig, count_params, param_shapes

TOY = NetConfig(temporal_radius=1, base_channels=4, n_blocks=2)


def test_count_params_hand_computed_toy():
    # F=2, G=1, hidden=4, k=5, r=4, one block, T_R=0
    stem = 27 * 1 * 2 + 2
    block = (2 + 2) + (2 * 2 + 2) + (2 + 2) + (27 * 2 * 1 + 1)
    final_bn = 3 + 3
    filt = (3 * 4 + 4) + (4 * 400 + 400)
    resid = (3 * 4 + 4) + (4 * 16 + 16)
    cfg = NetConfig(temporal_radius=0, base_channels=2, n_blocks=1)
    assert count_params(cfg) == stem + block + final_bn + filt + resid == 2243


def test_count_params_orderings():
    assert count_params(NetConfig(temporal_radius=1)) > count_params(NetConfig(temporal_radius=0))
    small = count_params(NetConfig(base_channels=8))
    assert count_params(NetConfig(base_channels=16)) > 2 * small


def test_default_block_count_grows_with_radius():
    assert [NetConfig(temporal_radius=t).blocks for t in range(5)] == [3, 4, 5, 6, 7]


@pytest.mark.parametrize("kwargs", [dict(temporal_radius=5), dict(upscale=3),
                                    dict(filter_size=4), dict(n_blocks=0),
                                    dict(base_channels=0)])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        NetConfig(**kwargs)


def test_output_shape_tr4():
    net = DUFNetwork(NetConfig(temporal_radius=4, base_channels=4, n_blocks=1))
    x = np.random.default_rng(0).uniform(size=(9, 32, 64))
    out = net.forward(x)
    assert out.shape == (128, 256)


def test_filter_stage_preserves_constant_when_residual_is_zero():
    net = DUFNetwork(TOY, seed=2)
    for name in ("residual.out.w", "residual.out.b"):
        net.params[name].data[...] = 0.0
    out = net.forward(np.full((1, 3, 6, 5), 0.37)).data
    np.testing.assert_allclose(out, 0.37, atol=1e-14)


def test_untrained_forward_is_finite_and_clamped_with_finite_grads():
    rng = np.random.default_rng(1)
    net = DUFNetwork(TOY, seed=4)
    x = rng.uniform(size=(2, 3, 8, 8))
    out = net.forward(x, training=True)
    assert np.isfinite(out.data).all() and out.data.min() >= 0 and out.data.max() <= 1
    ad.backward(ad.mean(ad.mul(out, out)))
    for name, t in net.params.items():
        assert t.grad is not None and np.isfinite(t.grad).all(), name


def test_gradients_match_finite_differences_on_sampled_entries():
    rng = np.random.default_rng(0)
    net = DUFNetwork(TOY, seed=3)
    for t in net.params.values():
        t.data = t.data + rng.normal(0, 0.1, t.shape)
    x = rng.uniform(0.2, 0.8, (1, 3, 8, 8))
    y = rng.uniform(0.2, 0.8, (1, 32, 32))

    def loss():
        d = ad.sub(net.forward(x, training=True), ad.Tensor(y))
        return ad.mean(ad.mul(d, d))
    idx = {name: rng.choice(t.data.size, min(4, t.data.size), replace=False)
           for name, t in net.params.items()}
    worst = ad.gradient_check(loss, net.params, indices=idx)
    assert max(worst.values()) < 1e-4, worst


def test_state_dict_round_trip_and_eval_determinism():
    rng = np.random.default_rng(5)
    net = DUFNetwork(TOY, seed=7)
    net.forward(rng.uniform(size=(2, 3, 6, 6)), training=True)   # move running stats
    other = DUFNetwork(TOY, seed=8)
    other.load_state_dict(net.state_dict())
    x = rng.uniform(size=(3, 3, 6, 6))
    np.testing.assert_array_equal(net.predict(x), other.predict(x))


def test_predict_batches_agree_with_single_call():
    rng = np.random.default_rng(6)
    net = DUFNetwork(TOY, seed=1)
    x = rng.uniform(size=(5, 3, 4, 4))
    np.testing.assert_allclose(net.predict(x, batch_size=2), net.predict(x, batch_size=5),
                               atol=1e-14)


def test_rejects_wrong_window_length_and_bad_params():
    net = DUFNetwork(TOY)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 5, 4, 4)))
    params = {k: np.zeros(s) for k, s in param_shapes(TOY)}
    params["stem.b"] = np.zeros(3)
    with pytest.raises(ValueError):
        DUFNetwork(TOY, params)
