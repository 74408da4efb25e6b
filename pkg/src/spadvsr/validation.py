"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .scenegen import GroundTruthSequence


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains NaN or infinite values")
    return arr


def check_unit_range(arr: np.ndarray, what: str, atol: float = 1e-9) -> np.ndarray:
    lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
    if lo < -atol or hi > 1 + atol:
        raise ValueError(f"{what} must be normalised to [0, 1], got range [{lo:.4g}, {hi:.4g}]")
    return arr


def check_windows(X, window_length: int | None = None) -> np.ndarray:
    """``(n, frames, h, w)`` normalised windows with an odd frame count."""
    X = _finite(np.asarray(X, dtype=np.float64), "X")
    if X.ndim != 4:
        raise ValueError(f"expected windows shaped (n, frames, h, w), got {X.shape}")
    if X.shape[1] % 2 == 0:
        raise ValueError(f"window length must be odd, got {X.shape[1]}")
    if window_length is not None and X.shape[1] != window_length:
        raise ValueError(f"expected {window_length} frames per window, got {X.shape[1]}")
    return check_unit_range(X, "X")


def check_frames(y, what: str = "y") -> np.ndarray:
    """``(n, H, W)`` stack of normalised frames."""
    y = _finite(np.asarray(y, dtype=np.float64), what)
    if y.ndim != 3:
        raise ValueError(f"expected frames shaped (n, H, W), got {y.shape}")
    return check_unit_range(y, what)


def check_pair(X, y, upscale: int, window_length: int | None = None):
    X = check_windows(X, window_length)
    y = check_frames(y)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} windows but y has {len(y)} frames")
    if y.shape[1:] != (X.shape[2] * upscale, X.shape[3] * upscale):
        raise ValueError(f"targets {y.shape[1:]} are not x{upscale} of inputs {X.shape[2:]}")
    return X, y


def centre_frames(X) -> np.ndarray:
    """Accept frames ``(n, h, w)`` or windows ``(n, T, h, w)``; return frames."""
    X = _finite(np.asarray(X, dtype=np.float64), "X")
    if X.ndim == 4:
        return X[:, X.shape[1] // 2]
    if X.ndim == 3:
        return X
    raise ValueError(f"expected (n, h, w) frames or (n, T, h, w) windows, got {X.shape}")


def as_ground_truth(X, d_max: float = 35.0, fps: float = 100.0) -> GroundTruthSequence:
    """A :class:`GroundTruthSequence` from itself or an ``(n, 2, H, W)`` array."""
    if isinstance(X, GroundTruthSequence):
        X.check()
        return X
    arr = _finite(np.asarray(X, dtype=np.float64), "X")
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValueError("expected a GroundTruthSequence or an (n, 2, H, W) depth/intensity array")
    seq = GroundTruthSequence(arr[:, 0], arr[:, 1], fps, d_max)
    seq.check()
    return seq
