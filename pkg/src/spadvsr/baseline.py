"""Bicubic (Catmull-Rom, a = -0.5) upscaling of single frames."""

from __future__ import annotations

import numpy as np

A = -0.5


def cubic_kernel(x, a: float = A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(n_in: int, r: int, a: float = A) -> np.ndarray:
    """``(n_in * r, n_in)`` interpolation matrix for one axis.

    Output sample ``j`` sits at source coordinate ``(j + 0.5) / r - 0.5``;
    taps falling outside the input are clamped to the edge samples.
    """
    n_out = n_in * r
    src = (np.arange(n_out) + 0.5) / r - 0.5
    base = np.floor(src).astype(int)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in range(-1, 3):
        idx = base + off
        w = cubic_kernel(src - idx, a)
        np.add.at(m, (rows, np.clip(idx, 0, n_in - 1)), w)
    return m


def bicubic_upscale(frame, r: int = 4, clip: bool = True) -> np.ndarray:
    """Upscale ``(..., H, W)`` frames by an integer factor ``r``.

    ``clip`` limits the result to [0, 1], which suits normalised depth.
    """
    if r < 1 or int(r) != r:
        raise ValueError(f"upscale factor must be an integer >= 1, got {r}")
    frame = np.asarray(frame, dtype=np.float64)
    if not np.isfinite(frame).all():
        raise ValueError("input contains non-finite values")
    h, w = frame.shape[-2:]
    out = resize_matrix(h, r) @ frame @ resize_matrix(w, r).T
    return np.clip(out, 0.0, 1.0) if clip else out
