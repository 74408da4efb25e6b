import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spadvsr import BicubicUpscaler, DUFSuperResolver, SPADSimulator
from spadvsr import scenegen as sg
from spadvsr.datapipe import make_windows
from spadvsr.validation import check_windows


@pytest.fixture(scope="module")
def ground_truth():
    return sg.render_sequence(sg.random_scene(3, n_frames=4))


def test_get_params_and_clone():
    est = DUFSuperResolver(temporal_radius=1, base_channels=4)
    params = est.get_params()
    assert params["temporal_radius"] == 1 and params["base_channels"] == 4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert SPADSimulator(target_snr=3.0).set_params(seed=4).seed == 4


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        DUFSuperResolver().predict(np.zeros((1, 5, 4, 4)))
    with pytest.raises(NotFittedError):
        BicubicUpscaler().predict(np.zeros((1, 4, 4)))
    with pytest.raises(NotFittedError):
        SPADSimulator().transform(np.ones((1, 2, 4, 4)))


def test_simulator_transform(ground_truth):
    sim = SPADSimulator(target_snr=2.0, seed=1).fit(ground_truth)
    assert sim.background_rate_ > 0
    lr = sim.transform(ground_truth)
    assert lr.shape == (4, 32, 64) and 0 <= lr.min() and lr.max() <= 1
    again = SPADSimulator(target_snr=2.0, seed=1).fit_transform(ground_truth)
    np.testing.assert_array_equal(lr, again)
    arr = np.stack([ground_truth.depth, ground_truth.intensity], axis=1)
    np.testing.assert_array_equal(sim.transform(arr), lr)
    metres = SPADSimulator(target_snr=2.0, seed=1, normalize=False).fit(arr).transform(arr)
    np.testing.assert_allclose(metres / 35.0, lr)


def test_simulator_fixed_rate(ground_truth):
    sim = SPADSimulator(target_snr=None, background_rate=0.0).fit(ground_truth)
    assert sim.background_rate_ == 0.0
    with pytest.raises(ValueError):
        SPADSimulator(target_snr=None).fit(ground_truth)


def test_bicubic_estimator_on_windows_and_frames():
    frames = np.full((3, 4, 5), 0.25)
    est = BicubicUpscaler().fit(frames)
    np.testing.assert_allclose(est.predict(frames), 0.25)
    np.testing.assert_allclose(est.predict(make_windows(frames, 1)), 0.25)
    assert est.score(frames, np.full((3, 16, 20), 0.25)) == np.inf


def test_super_resolver_fit_predict_score():
    rng = np.random.default_rng(0)
    lr = rng.uniform(0.3, 0.6, (6, 4, 4))
    hr = np.kron(lr, np.ones((4, 4)))
    X = make_windows(lr, 1)
    est = DUFSuperResolver(temporal_radius=1, base_channels=4, n_blocks=1, epochs=2, patience=1,
                           patch_size=None, random_state=3).fit(X, hr)
    assert len(est.history_.history) >= 1
    pred = est.predict(X)
    assert pred.shape == hr.shape
    assert np.isfinite(est.score(X, hr))
    again = DUFSuperResolver(**est.get_params()).fit(X, hr)
    np.testing.assert_array_equal(pred, again.predict(X))
    wrapped = DUFSuperResolver.from_network(est.network_)
    np.testing.assert_array_equal(wrapped.predict(X), pred)


def test_super_resolver_validates_inputs():
    est = DUFSuperResolver(temporal_radius=1)
    with pytest.raises(ValueError):
        est.fit(np.zeros((4, 5, 4, 4)), np.zeros((4, 16, 16)))        # wrong window length
    with pytest.raises(ValueError):
        est.fit(np.zeros((4, 3, 4, 4)), np.zeros((4, 12, 12)))        # wrong scale
    with pytest.raises(ValueError):
        est.fit(np.zeros((4, 3, 4, 4)), np.zeros((3, 16, 16)))        # count mismatch


@pytest.mark.parametrize("bad", [np.full((1, 3, 2, 2), np.nan), np.full((1, 3, 2, 2), 2.0),
                                 np.zeros((1, 4, 2, 2)), np.zeros((3, 2, 2))])
def test_check_windows_rejects(bad):
    with pytest.raises(ValueError):
        check_windows(bad)
