"""SPAD direct time-of-flight histogram simulation and depth recovery.

Each low-resolution pixel sums the photon returns of its ``block x block``
high-resolution sub-pixels.  A sub-pixel at depth ``d`` with reflectance
``rho`` contributes ``A * rho / d**2`` signal photons, spread over the time
bins by a sampled Gaussian pulse, plus ``B * rho`` ambient photons in every
bin.  Counts are Poisson draws keyed by ``(seed, frame, pixel, bin)``, so any
subset of the cube can be regenerated independently and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .scenegen import GroundTruthSequence

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class OpticalParams:
    signal_scale: float = 1000.0      # A, photons * m^2 per sub-pixel at unit reflectance
    background_rate: float = 0.05     # B, photons per bin per sub-pixel at unit reflectance
    n_bins: int = 16
    d_max: float = 35.0
    pulse_sigma: float = 0.5          # in bins
    seed: int = 0

    def __post_init__(self):
        if not self.signal_scale > 0:
            raise ValueError("signal_scale must be positive")
        if not self.background_rate >= 0:
            raise ValueError("background_rate must be non-negative")
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not self.pulse_sigma >= 0:
            raise ValueError("pulse_sigma must be non-negative")

    @property
    def bin_width(self) -> float:
        return self.d_max / self.n_bins


@dataclass
class ExpectedHistogram:
    signal: np.ndarray            # (H, W, bins) expected signal photons
    background: np.ndarray        # (H, W) expected ambient photons per bin

    @property
    def lam(self) -> np.ndarray:
        return self.signal + self.background[..., None]

    @property
    def signal_total(self) -> np.ndarray:
        return self.signal.sum(axis=-1)

    @property
    def background_total(self) -> np.ndarray:
        return self.background * self.signal.shape[-1]


@dataclass
class HistogramCube:
    counts: np.ndarray            # (frames, H, W, bins) uint32
    bin_width: float
    d_max: float
    fps: float
    target_snr: float = float("nan")

    @property
    def n_frames(self) -> int:
        return self.counts.shape[0]


# ------------------------------------------------------------ optical model

def pulse_weights(position: np.ndarray, n_bins: int, sigma: float) -> np.ndarray:
    """Normalised pulse shape over bins for fractional bin positions.

    ``position`` is measured in bin-centre units (bin i is centred at i).
    The Gaussian is sampled at bin centres, truncated at +-3 sigma and
    renormalised; ``sigma == 0`` puts everything in the nearest bin.
    """
    position = np.asarray(position, dtype=np.float64)
    bins = np.arange(n_bins)
    nearest = np.clip(np.rint(position), 0, n_bins - 1).astype(int)
    onehot = (bins == nearest[..., None]).astype(np.float64)
    if sigma <= 0:
        return onehot
    dist = bins - position[..., None]
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(-0.5 * (dist / sigma) ** 2)
    w[np.abs(dist) > 3 * sigma] = 0.0
    total = w.sum(axis=-1, keepdims=True)
    # A very narrow pulse can underflow everywhere; fall back to the delta.
    safe = total > 0
    return np.where(safe, w / np.where(safe, total, 1.0), onehot)


def _check_frame(hr_depth, hr_intensity, block):
    hr_depth = np.asarray(hr_depth, dtype=np.float64)
    hr_intensity = np.asarray(hr_intensity, dtype=np.float64)
    if hr_depth.shape != hr_intensity.shape or hr_depth.ndim != 2:
        raise ValueError("depth and intensity must be matching 2-d frames")
    h, w = hr_depth.shape
    if h % block or w % block:
        raise ValueError(f"frame {h}x{w} is not a multiple of the {block}x{block} block")
    if not (hr_depth > 0).all():
        raise ValueError("depth must be positive everywhere")
    return hr_depth, hr_intensity


def _block_sum(a: np.ndarray, block: int) -> np.ndarray:
    h, w = a.shape[:2]
    return a.reshape(h // block, block, w // block, block, *a.shape[2:]).sum(axis=(1, 3))


def pixel_totals(hr_depth, hr_intensity, params: OpticalParams, block: int = 4):
    """Per-LR-pixel expected signal photons and ambient photons per bin."""
    hr_depth, hr_intensity = _check_frame(hr_depth, hr_intensity, block)
    signal = params.signal_scale * hr_intensity / hr_depth ** 2
    return _block_sum(signal, block), params.background_rate * _block_sum(hr_intensity, block)


def expected_histogram(hr_depth, hr_intensity, params: OpticalParams,
                       block: int = 4) -> ExpectedHistogram:
    hr_depth, hr_intensity = _check_frame(hr_depth, hr_intensity, block)
    sub_signal = params.signal_scale * hr_intensity / hr_depth ** 2
    pos = hr_depth / params.bin_width - 0.5
    shape = pulse_weights(pos, params.n_bins, params.pulse_sigma)
    signal = _block_sum(sub_signal[..., None] * shape, block)
    background = params.background_rate * _block_sum(hr_intensity, block)
    return ExpectedHistogram(signal, background)


# ---------------------------------------------------------------- sampling

def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, frame: int, n: int) -> np.ndarray:
    """``n`` uniforms in (0, 1) for elements ``0..n-1`` of one frame.

    Element ``i`` depends only on ``(seed, frame, i)``.
    """
    key = _splitmix64(np.array([seed & MASK64], dtype=np.uint64))
    key = _splitmix64(key ^ np.uint64(frame & MASK64))
    bits = _splitmix64(key ^ _splitmix64(np.arange(n, dtype=np.uint64)))
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def poisson_icdf(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Smallest k with P(X <= k) >= u for X ~ Poisson(lam), elementwise."""
    u = np.asarray(u, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), u.shape)
    k = np.zeros(u.shape)
    idx = np.flatnonzero(lam > 0)
    if idx.size == 0:
        return k
    uu, ll = u.flat[idx], lam.flat[idx]
    z = special.ndtri(uu)
    kk = np.maximum(0.0, np.floor(ll + np.sqrt(ll) * z + (z * z - 1.0) / 6.0))
    # Walk up until the CDF reaches u, then down while the previous k still does.
    active = np.flatnonzero(special.pdtr(kk, ll) < uu)
    while active.size:
        kk[active] += 1
        active = active[special.pdtr(kk[active], ll[active]) < uu[active]]
    active = np.flatnonzero((kk > 0) & (special.pdtr(kk - 1, ll) >= uu))
    while active.size:
        kk[active] -= 1
        sub = active[kk[active] > 0]
        active = sub[special.pdtr(kk[sub] - 1, ll[sub]) >= uu[sub]]
    k.flat[idx] = kk
    return k


def sample_poisson(expected: ExpectedHistogram | np.ndarray, seed: int,
                   frame_idx: int) -> np.ndarray:
    """Integer photon counts for one frame, same shape as the expected cube."""
    lam = expected.lam if isinstance(expected, ExpectedHistogram) else np.asarray(expected, float)
    if not np.isfinite(lam).all() or (lam < 0).any():
        raise ValueError("expected counts must be finite and non-negative")
    u = counter_uniforms(seed, frame_idx, lam.size).reshape(lam.shape)
    return poisson_icdf(u, lam).astype(np.uint32)


# --------------------------------------------------------------------- SNR

def _frame_snr(signal_total: np.ndarray, background_total: np.ndarray) -> float:
    ok = background_total > 0
    if not ok.any():
        return float("inf")
    return float(np.mean(signal_total[ok] / background_total[ok]))


def measure_snr(expected: ExpectedHistogram) -> float:
    """Mean over pixels of total signal / total ambient photons.

    Pixels with no ambient light are left out of the mean; a frame with none
    at all reports ``inf``.
    """
    return _frame_snr(expected.signal_total, expected.background_total)


def sequence_snr(seq: GroundTruthSequence, params: OpticalParams, block: int = 4) -> float:
    snrs = []
    for d, i in zip(seq.depth, seq.intensity):
        s, b = pixel_totals(d, i, params, block)
        snrs.append(_frame_snr(s, b * params.n_bins))
    return float(np.mean(snrs))


def calibrate_snr(seq: GroundTruthSequence, params: OpticalParams, target_snr: float,
                  block: int = 4) -> float:
    """Ambient rate B that gives the sequence an average SNR of ``target_snr``.

    Every pixel's SNR is proportional to 1/B, so one reference evaluation at
    B = 1 fixes the answer.
    """
    if not target_snr > 0:
        raise ValueError("target_snr must be positive")
    reference = sequence_snr(seq, replace(params, background_rate=1.0), block)
    if not np.isfinite(reference):
        raise ValueError("scene has no reflected ambient light; SNR cannot be calibrated")
    if reference <= 0:
        raise ValueError("scene returns no signal; SNR cannot be calibrated")
    return reference / target_snr


def simulate(seq: GroundTruthSequence, params: OpticalParams,
             target_snr: float | None = None, block: int = 4) -> HistogramCube:
    """Photon-count cube for a whole sequence.

    With ``target_snr`` the ambient rate is recalibrated first; otherwise
    ``params.background_rate`` is used as given.
    """
    if seq.d_max != params.d_max:
        params = replace(params, d_max=seq.d_max)
    if target_snr is not None:
        params = replace(params, background_rate=calibrate_snr(seq, params, target_snr, block))
    frames = [sample_poisson(expected_histogram(d, i, params, block), params.seed, t)
              for t, (d, i) in enumerate(zip(seq.depth, seq.intensity))]
    snr = float("nan") if target_snr is None else float(target_snr)
    return HistogramCube(np.stack(frames), params.bin_width, params.d_max, seq.fps, snr)


# -------------------------------------------------------- depth extraction

def extract_depth_com(counts, bin_width: float, d_max: float | None = None):
    """Centre-of-mass depth from histograms along the last axis.

    The median bin is taken as the ambient level and subtracted (clamped at
    zero); the estimate is the count-weighted mean of the bin centres in the
    peak bin and its two neighbours.  The lowest bin wins ties for the peak.
    Returns ``(depth, valid)``; pixels with nothing left after subtraction
    are invalid and get ``d_max``.
    """
    counts = np.asarray(counts)
    if (counts < 0).any():
        raise ValueError("counts must be non-negative")
    n_bins = counts.shape[-1]
    if d_max is None:
        d_max = n_bins * bin_width
    c = counts.astype(np.float64)
    c = np.maximum(c - np.median(c, axis=-1, keepdims=True), 0.0)
    peak = np.argmax(c, axis=-1)
    offsets = np.arange(-1, 2)
    idx = peak[..., None] + offsets
    inside = (idx >= 0) & (idx < n_bins)
    idx = np.clip(idx, 0, n_bins - 1)
    w = np.take_along_axis(c, idx, axis=-1) * inside
    total = w.sum(axis=-1)
    valid = total > 0
    centre = (w * (idx + 0.5)).sum(axis=-1) / np.where(valid, total, 1.0)
    depth = np.where(valid, centre * bin_width, d_max)
    return depth, valid


def extract_depth_cube(cube: HistogramCube) -> tuple[np.ndarray, np.ndarray]:
    return extract_depth_com(cube.counts, cube.bin_width, cube.d_max)
