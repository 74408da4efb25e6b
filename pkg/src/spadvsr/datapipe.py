"""Turning depth sequences into network examples."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .scenegen import GroundTruthSequence


class DepthClampWarning(UserWarning):
    """Raised through :mod:`warnings` when depths beyond ``d_max`` are clamped."""

    def __init__(self, count: int, d_max: float):
        super().__init__(f"{count} depth values above d_max={d_max} were clamped")
        self.count = count


def normalize(depth, d_max: float) -> np.ndarray:
    """Map metres in ``[0, d_max]`` to ``[0, 1]``; larger values are clamped."""
    depth = np.asarray(depth, dtype=np.float64)
    over = depth > d_max
    n_over = int(np.count_nonzero(over))
    if n_over:
        warnings.warn(DepthClampWarning(n_over, d_max), stacklevel=2)
        depth = np.where(over, d_max, depth)
    return depth / d_max


def denormalize(x, d_max: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * d_max


def window(n_frames: int, t: int, temporal_radius: int) -> np.ndarray:
    """Frame indices ``t - T_R .. t + T_R`` with the ends clamped to the sequence."""
    if n_frames < 1:
        raise ValueError("empty sequence")
    if not 0 <= t < n_frames:
        raise IndexError(f"t={t} outside 0..{n_frames - 1}")
    if temporal_radius < 0:
        raise ValueError("temporal_radius must be non-negative")
    return np.clip(np.arange(t - temporal_radius, t + temporal_radius + 1), 0, n_frames - 1)


def make_windows(frames: np.ndarray, temporal_radius: int) -> np.ndarray:
    """Stack a window for every frame: ``(n, h, w) -> (n, 2*T_R+1, h, w)``."""
    n = frames.shape[0]
    idx = np.stack([window(n, t, temporal_radius) for t in range(n)])
    return frames[idx]


def subsample_fps(seq: GroundTruthSequence, stride: int) -> GroundTruthSequence:
    """Keep frames ``0, stride, 2*stride, ...``."""
    if stride < 1 or int(stride) != stride:
        raise ValueError("stride must be a positive integer")
    return GroundTruthSequence(seq.depth[::stride].copy(), seq.intensity[::stride].copy(),
                               seq.fps / stride, seq.d_max)


@dataclass
class TrainingExample:
    input: np.ndarray             # (2*T_R+1, h, w) normalised LR depth
    target: np.ndarray            # (r*h, r*w) normalised HR depth
    meta: dict = field(default_factory=dict)


@dataclass
class SequenceData:
    """One aligned pair of normalised LR input and HR ground-truth video."""
    name: str
    lr: np.ndarray                # (n, h, w) in [0, 1]
    hr: np.ndarray                # (n, r*h, r*w) in [0, 1]
    snr: float = float("nan")
    fps: float = float("nan")

    def examples(self, temporal_radius: int) -> tuple[np.ndarray, np.ndarray]:
        return make_windows(self.lr, temporal_radius), self.hr

    def iter_examples(self, temporal_radius: int):
        for t in range(self.lr.shape[0]):
            idx = window(self.lr.shape[0], t, temporal_radius)
            yield TrainingExample(self.lr[idx], self.hr[t],
                                  {"sequence": self.name, "frame": t, "snr": self.snr})


def stack_examples(seqs: list[SequenceData], temporal_radius: int):
    """All windows and targets from several sequences, in sequence order."""
    xs, ys = zip(*(s.examples(temporal_radius) for s in seqs))
    return np.concatenate(xs), np.concatenate(ys)


@dataclass
class SplitConfig:
    seed: int = 0
    ratios: tuple[float, float, float] | None = (0.8, 0.1, 0.1)
    counts: tuple[int, int, int] | None = None

    def sizes(self, n: int) -> tuple[int, int, int]:
        if self.counts is not None:
            if sum(self.counts) != n:
                raise ValueError(f"split counts {self.counts} do not add up to {n} sequences")
            return tuple(self.counts)
        if self.ratios is None or not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ValueError("split ratios must sum to 1")
        n_val = int(round(self.ratios[1] * n))
        n_test = int(round(self.ratios[2] * n))
        return n - n_val - n_test, n_val, n_test


def fisher_yates(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_split(examples: list[TrainingExample], cfg: SplitConfig):
    """Split by sequence, then shuffle the training part only.

    Sequences are assigned to train/val/test in order of first appearance, so
    no sequence straddles two splits.  Validation and test examples keep
    their original (temporal) order.
    """
    if not examples:
        raise ValueError("no examples to split")
    names = list(dict.fromkeys(e.meta["sequence"] for e in examples))
    n_train, n_val, _ = cfg.sizes(len(names))
    owner = {name: (0 if i < n_train else 1 if i < n_train + n_val else 2)
             for i, name in enumerate(names)}
    parts: tuple[list, list, list] = ([], [], [])
    for e in examples:
        parts[owner[e.meta["sequence"]]].append(e)
    train = [parts[0][i] for i in fisher_yates(len(parts[0]), cfg.seed)]
    return train, parts[1], parts[2]
