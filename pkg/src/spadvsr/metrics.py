"""Reconstruction quality metrics on depth frames normalised to [0, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

C1 = 0.0001
C2 = 0.0009


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def error_map(sr, gt) -> np.ndarray:
    sr, gt = _pair(sr, gt)
    return np.abs(sr - gt)


def psnr(sr, gt) -> float:
    """Peak signal-to-noise ratio in dB with a peak value of 1.

    Identical frames give ``inf``.
    """
    sr, gt = _pair(sr, gt)
    mse = np.mean((gt - sr) ** 2)
    if mse == 0:
        return float("inf")
    return float(20.0 * np.log10(1.0 / np.sqrt(mse)))


def ssim(sr, gt) -> float:
    """Whole-frame structural similarity.

    Means, variances and the covariance are population statistics over the
    full frame; there is no sliding window.
    """
    sr, gt = _pair(sr, gt)
    mu_g, mu_s = gt.mean(), sr.mean()
    dg, ds = gt - mu_g, sr - mu_s
    var_g, var_s = np.mean(dg * dg), np.mean(ds * ds)
    cov = np.mean(dg * ds)
    num = (2 * mu_g * mu_s + C1) * (2 * cov + C2)
    den = (mu_g ** 2 + mu_s ** 2 + C1) * (var_g + var_s + C2)
    return float(num / den)


def temporal_coherence(gt_seq, sr_seq, t: int, tau: float = 0.0) -> int:
    """Pixels that are static in the ground truth but change in the output.

    Compares frames ``t`` and ``t + 1``; a pixel counts when the ground truth
    is exactly unchanged and the reconstruction moves by more than ``tau``.
    """
    gt_seq, sr_seq = _pair(gt_seq, sr_seq)
    if not 0 <= t < gt_seq.shape[0] - 1:
        raise IndexError(f"t={t} needs frames t and t+1 in a sequence of {gt_seq.shape[0]}")
    static = gt_seq[t + 1] == gt_seq[t]
    moved = np.abs(sr_seq[t + 1] - sr_seq[t]) > tau
    return int(np.count_nonzero(static & moved))


@dataclass
class MetricsReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    tc: list[int] = field(default_factory=list)
    throughput: float = float("nan")

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    @property
    def mean_tc(self) -> float:
        return float(np.mean(self.tc)) if self.tc else float("nan")


def evaluate_sequence(gt_seq, sr_seq, tau: float = 1e-6,
                      throughput: float = float("nan")) -> MetricsReport:
    """Per-frame PSNR/SSIM and, for every consecutive pair, Tc.

    The last frame has no successor, so its Tc entry is omitted.
    """
    gt_seq, sr_seq = _pair(gt_seq, sr_seq)
    report = MetricsReport(throughput=throughput)
    for t in range(gt_seq.shape[0]):
        report.psnr.append(psnr(sr_seq[t], gt_seq[t]))
        report.ssim.append(ssim(sr_seq[t], gt_seq[t]))
        if t + 1 < gt_seq.shape[0]:
            report.tc.append(temporal_coherence(gt_seq, sr_seq, t, tau))
    return report


def format_float(x: float) -> str:
    if np.isposinf(x):
        return "inf"
    return repr(float(x))


def write_frame_rows(writer: csv.writer, sequence: str, method: str,
                     report: MetricsReport) -> None:
    """Rows of ``sequence, frame, method, psnr, ssim, tc``."""
    for t, (p, s) in enumerate(zip(report.psnr, report.ssim)):
        tc = report.tc[t] if t < len(report.tc) else ""
        writer.writerow([sequence, t, method, format_float(p), format_float(s), tc])
