"""scikit-learn style wrappers around the simulator, the network and the baseline.

>>> sim = SPADSimulator(target_snr=1.3).fit(ground_truth)        # doctest: +SKIP
>>> lr = sim.transform(ground_truth)                             # (n, 32, 64) in [0, 1]
>>> X = make_windows(lr, 2)                                      # (n, 5, 32, 64)
>>> model = DUFSuperResolver(temporal_radius=2).fit(X, hr)       # doctest: +SKIP
>>> model.predict(X).shape
(n, 128, 256)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import spadsim
from .baseline import bicubic_upscale
from .dufnet import DUFNetwork, NetConfig
from .metrics import psnr
from .trainer import TrainConfig, fit
from .validation import (as_ground_truth, centre_frames, check_frames, check_pair,
                         check_unit_range, check_windows)


class _PSNRScoreMixin:
    def score(self, X, y, sample_weight=None) -> float:
        """Mean per-frame PSNR (dB) of ``predict(X)`` against ``y``."""
        y = check_frames(y)
        pred = self.predict(X)
        scores = np.array([psnr(p, t) for p, t in zip(pred, y)])
        return float(np.average(scores, weights=sample_weight))


class DUFSuperResolver(_PSNRScoreMixin, RegressorMixin, BaseEstimator):
    """Multi-frame x4 depth super-resolution network.

    ``X`` holds windows of ``2*temporal_radius + 1`` normalised LR frames,
    ``y`` the normalised HR centre frames.  Without an explicit validation
    set, the last ``validation_fraction`` of the windows is held out for
    early stopping.
    """

    def __init__(self, temporal_radius=2, upscale=4, base_channels=16, filter_size=5,
                 n_blocks=None, epochs=30, batch_size=4, learning_rate=1e-3,
                 lr_decay_factor=0.1, lr_decay_every=10, patience=5, huber_delta=0.01,
                 patch_size=16, steps_per_epoch=None, validation_fraction=0.1,
                 random_state=0):
        self.temporal_radius = temporal_radius
        self.upscale = upscale
        self.base_channels = base_channels
        self.filter_size = filter_size
        self.n_blocks = n_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every = lr_decay_every
        self.patience = patience
        self.huber_delta = huber_delta
        self.patch_size = patch_size
        self.steps_per_epoch = steps_per_epoch
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _net_config(self) -> NetConfig:
        return NetConfig(self.temporal_radius, self.upscale, self.base_channels,
                         self.filter_size, self.n_blocks)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.learning_rate, lr_decay_factor=self.lr_decay_factor,
                           lr_decay_every=self.lr_decay_every, patience=self.patience,
                           huber_delta=self.huber_delta, patch_size=self.patch_size,
                           steps_per_epoch=self.steps_per_epoch, seed=self.random_state)

    def fit(self, X, y, X_val=None, y_val=None):
        config = self._net_config()
        X, y = check_pair(X, y, self.upscale, config.window_length)
        if X_val is None:
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            if n_val >= len(X):
                raise ValueError("need at least two windows to hold one out for validation")
            X, X_val, y, y_val = X[:-n_val], X[-n_val:], y[:-n_val], y[-n_val:]
        else:
            X_val, y_val = check_pair(X_val, y_val, self.upscale, config.window_length)
        self.network_ = DUFNetwork(config, seed=self.random_state)
        self.history_ = fit(self.network_, (X, y), (X_val, y_val), self._train_config())
        return self

    @classmethod
    def from_network(cls, net: DUFNetwork) -> "DUFSuperResolver":
        """Wrap an already-trained network, e.g. one loaded from a checkpoint."""
        c = net.config
        model = cls(temporal_radius=c.temporal_radius, upscale=c.upscale,
                    base_channels=c.base_channels, filter_size=c.filter_size,
                    n_blocks=c.n_blocks)
        model.network_ = net
        return model

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_windows(X, self.network_.config.window_length)
        return self.network_.predict(X)


class BicubicUpscaler(_PSNRScoreMixin, RegressorMixin, BaseEstimator):
    """Single-frame bicubic baseline; windows are reduced to their centre frame."""

    def __init__(self, upscale=4, clip=True):
        self.upscale = upscale
        self.clip = clip

    def fit(self, X, y=None):
        centre_frames(X)
        if self.upscale < 1:
            raise ValueError("upscale must be >= 1")
        self.fitted_ = True
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "fitted_")
        return bicubic_upscale(centre_frames(X), self.upscale, clip=self.clip)


class SPADSimulator(TransformerMixin, BaseEstimator):
    """Ground truth -> noisy low-resolution depth, via photon histograms.

    ``fit`` calibrates the ambient rate for ``target_snr`` on the sequence it
    is given (or keeps ``background_rate`` when ``target_snr`` is None).
    ``transform`` accepts a :class:`GroundTruthSequence` or an
    ``(n, 2, H, W)`` depth/intensity array and returns LR depth, normalised by
    ``d_max`` unless ``normalize=False``.
    """

    def __init__(self, signal_scale=1000.0, target_snr=1.3, background_rate=None,
                 pulse_sigma=0.5, n_bins=16, d_max=35.0, seed=0, normalize=True):
        self.signal_scale = signal_scale
        self.target_snr = target_snr
        self.background_rate = background_rate
        self.pulse_sigma = pulse_sigma
        self.n_bins = n_bins
        self.d_max = d_max
        self.seed = seed
        self.normalize = normalize

    def _params(self, background_rate: float) -> spadsim.OpticalParams:
        return spadsim.OpticalParams(self.signal_scale, background_rate, self.n_bins,
                                     self.d_max, self.pulse_sigma, self.seed)

    def fit(self, X, y=None):
        seq = as_ground_truth(X, self.d_max)
        if self.target_snr is not None:
            self.background_rate_ = spadsim.calibrate_snr(seq, self._params(1.0), self.target_snr)
        elif self.background_rate is not None:
            self.background_rate_ = float(self.background_rate)
        else:
            raise ValueError("set target_snr or background_rate")
        self.optical_params_ = self._params(self.background_rate_)
        return self

    def simulate(self, X) -> spadsim.HistogramCube:
        check_is_fitted(self, "optical_params_")
        seq = as_ground_truth(X, self.d_max)
        cube = spadsim.simulate(seq, self.optical_params_)
        cube.target_snr = float("nan") if self.target_snr is None else float(self.target_snr)
        return cube

    def transform(self, X) -> np.ndarray:
        depth, _ = spadsim.extract_depth_cube(self.simulate(X))
        return check_unit_range(depth / self.d_max, "depth") if self.normalize else depth
