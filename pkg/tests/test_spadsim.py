import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from spadvsr import scenegen as sg
from spadvsr import spadsim as ss

BW = 35.0 / 16


def plane_sequence(z=10.0, n_frames=2, reflectance=0.5):
    spec = sg.SceneSpec([sg.Primitive("plane", reflectance=reflectance, position=(0, 0, z))],
                        n_frames=n_frames)
    return sg.render_sequence(spec)


# ---------------------------------------------------------- optical model

def test_inverse_square_law():
    p = ss.OpticalParams()
    near, _ = ss.pixel_totals(np.full((4, 4), 5.0), np.ones((4, 4)), p)
    far, _ = ss.pixel_totals(np.full((4, 4), 10.0), np.ones((4, 4)), p)
    assert near[0, 0] == pytest.approx(4 * far[0, 0], rel=1e-15)


def test_delta_pulse_at_bin_centre_fills_one_bin():
    p = ss.OpticalParams(pulse_sigma=0.0, background_rate=0.0)
    depth = np.full((4, 4), 3.5 * BW)                  # centre of bin 3
    h = ss.expected_histogram(depth, np.ones((4, 4)), p)
    assert np.flatnonzero(h.signal[0, 0]).tolist() == [3]
    assert h.signal[0, 0, 3] == pytest.approx(h.signal_total[0, 0])


def test_background_per_bin_is_block_sum():
    p = ss.OpticalParams(background_rate=0.5)
    h = ss.expected_histogram(np.full((4, 4), 10.0), np.ones((4, 4)), p)
    assert h.background[0, 0] == pytest.approx(8.0)
    np.testing.assert_allclose(h.lam[0, 0] - h.signal[0, 0], 8.0)


@given(st.floats(-2.0, 18.0), st.floats(0.0, 3.0))
def test_pulse_weights_normalised(position, sigma):
    w = ss.pulse_weights(np.array([position]), 16, sigma)
    assert w.min() >= 0
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_lr_frame_shape():
    h = ss.expected_histogram(np.full((128, 256), 10.0), np.ones((128, 256)), ss.OpticalParams())
    assert h.signal.shape == (32, 64, 16)


# ---------------------------------------------------------------- sampling

def test_zero_rate_gives_zero_counts():
    assert not ss.sample_poisson(np.zeros((3, 4, 16)), 1, 0).any()


@pytest.mark.parametrize("lam", [0.5, 4.0, 20.0])
def test_poisson_moments(lam):
    n = 100_000
    x = ss.sample_poisson(np.full(n, lam), seed=2, frame_idx=0).astype(float)
    assert abs(x.mean() - lam) < 3 * np.sqrt(lam / n)
    # variance of the sample variance of a Poisson is (lam + 2 lam^2 (n/(n-1))) / n
    assert abs(x.var(ddof=1) - lam) < 3 * np.sqrt((lam + 2 * lam ** 2) / n)


def test_poisson_icdf_matches_scipy_in_the_body():
    rng = np.random.default_rng(0)
    u = rng.uniform(1e-6, 1 - 1e-6, 5000)
    lam = rng.uniform(0.01, 80.0, 5000)
    np.testing.assert_array_equal(ss.poisson_icdf(u, lam), stats.poisson.ppf(u, lam))


def test_poisson_icdf_extreme_tails_are_finite():
    k = ss.poisson_icdf(np.array([2.0 ** -54, 1 - 2.0 ** -53]), np.array([3.0, 3.0]))
    assert np.isfinite(k).all() and k[0] == 0 and k[1] > 10


def test_counts_are_order_independent():
    lam = np.random.default_rng(3).uniform(0, 10, (8, 8, 16))
    full = ss.sample_poisson(lam, seed=9, frame_idx=4)
    u = ss.counter_uniforms(9, 4, lam.size)
    rev = np.arange(lam.size)[::-1]
    one_by_one = ss.poisson_icdf(u[rev], lam.reshape(-1)[rev])[::-1]
    np.testing.assert_array_equal(full.reshape(-1), one_by_one)


def test_frames_and_seeds_give_different_streams():
    a = ss.counter_uniforms(1, 0, 1000)
    assert not np.array_equal(a, ss.counter_uniforms(1, 1, 1000))
    assert not np.array_equal(a, ss.counter_uniforms(2, 0, 1000))
    np.testing.assert_array_equal(a[:10], ss.counter_uniforms(1, 0, 10))
    assert 0 < a.min() and a.max() < 1


# --------------------------------------------------------------------- SNR

def test_snr_definition_examples():
    h = ss.ExpectedHistogram(np.full((2, 2, 16), 12 / 16), np.full((2, 2), 4 / 16))
    assert ss.measure_snr(h) == pytest.approx(3.0)
    sig = np.full((2, 2, 16), 1 / 16)
    sig[1] *= 3
    assert ss.measure_snr(ss.ExpectedHistogram(sig, np.full((2, 2), 1 / 16))) == pytest.approx(2.0)


@pytest.mark.parametrize("target", [0.25, 0.34, 0.5, 0.75, 1.0, 3.0, 8.0, 10.0])
def test_calibration_hits_target(target):
    seq = sg.render_sequence(sg.random_scene(5, n_frames=3))
    p = ss.OpticalParams()
    b = ss.calibrate_snr(seq, p, target)
    measured = ss.sequence_snr(seq, ss.OpticalParams(background_rate=b))
    assert abs(measured - target) / target < 1e-6


def test_doubling_target_halves_rate():
    seq = plane_sequence()
    p = ss.OpticalParams()
    assert ss.calibrate_snr(seq, p, 2.6) == pytest.approx(ss.calibrate_snr(seq, p, 1.3) / 2)


def test_infinite_target_means_no_ambient_light():
    assert ss.calibrate_snr(plane_sequence(), ss.OpticalParams(), np.inf) == 0.0


def test_calibration_rejects_bad_target():
    with pytest.raises(ValueError):
        ss.calibrate_snr(plane_sequence(), ss.OpticalParams(), 0.0)


# --------------------------------------------------------- depth recovery

def test_single_bin_centre_of_mass():
    c = np.zeros(16)
    c[3] = 7
    depth, valid = ss.extract_depth_com(c, BW)
    assert valid and depth == pytest.approx(3.5 * BW) == pytest.approx(7.65625)


def test_two_bin_tie_breaks_low():
    c = np.zeros(16)
    c[7] = c[8] = 5
    depth, _ = ss.extract_depth_com(c, BW)
    assert depth == pytest.approx(8.0 * BW) == pytest.approx(17.5)


def test_flat_histogram_is_invalid():
    depth, valid = ss.extract_depth_com(np.full((2, 16), 3), BW, d_max=35.0)
    assert not valid.any() and (depth == 35.0).all()


def test_noise_free_plane_through_pipeline():
    seq = plane_sequence(10.0)
    cube = ss.simulate(seq, ss.OpticalParams(signal_scale=1e5, background_rate=0.0))
    depth, valid = ss.extract_depth_cube(cube)
    assert valid.all()
    assert np.abs(depth - 10.0).mean() < BW / 10


def test_simulate_is_deterministic_and_seeded():
    seq = plane_sequence(n_frames=2)
    p = ss.OpticalParams(seed=7)
    a = ss.simulate(seq, p, 1.3).counts
    np.testing.assert_array_equal(a, ss.simulate(seq, p, 1.3).counts)
    assert not np.array_equal(a, ss.simulate(seq, ss.OpticalParams(seed=8), 1.3).counts)
    assert a.dtype == np.uint32 and a.shape == (2, 32, 64, 16)
