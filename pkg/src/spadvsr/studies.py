"""Datasets, cached model training and the three parameter sweeps.

The sweeps return plain row dictionaries; the CLI turns them into CSV.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import scenegen as sg
from . import spadsim as ss
from .baseline import bicubic_upscale
from .containers import load_checkpoint, save_checkpoint
from .datapipe import SequenceData, make_windows, normalize, stack_examples
from .dufnet import DUFNetwork, NetConfig
from .metrics import MetricsReport, evaluate_sequence
from .trainer import TrainConfig, TrainResult, fit

log = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    """A 32-bit seed that depends on every part (order matters)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def simulate_sequence(gt: sg.GroundTruthSequence, snr: float, params: ss.OpticalParams,
                      name: str, seed: int) -> SequenceData:
    """Histogram simulation at ``snr`` followed by depth extraction, normalised."""
    cube = ss.simulate(gt, replace(params, seed=seed, d_max=gt.d_max), snr)
    depth, _ = ss.extract_depth_cube(cube)
    return SequenceData(name, normalize(depth, gt.d_max), normalize(gt.depth, gt.d_max),
                        snr, gt.fps)


@dataclass
class DatasetSpec:
    n_train: int = 24
    n_val: int = 2
    n_test: int = 3
    n_frames: int = 30
    snr_range: tuple[float, float] = (0.5, 8.0)
    test_snr: float = 1.3
    shift_range: tuple[float, float] = (0.1, 1.0)
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


@dataclass
class StudyData:
    train: list[SequenceData] = field(default_factory=list)
    val: list[SequenceData] = field(default_factory=list)
    test: list[SequenceData] = field(default_factory=list)
    test_gt: list[sg.GroundTruthSequence] = field(default_factory=list)


def build_dataset(spec: DatasetSpec, params: ss.OpticalParams) -> StudyData:
    """Random procedural scenes; training SNRs are log-uniform over ``snr_range``,
    validation and test sequences use ``test_snr``."""
    rng = np.random.default_rng(derive_seed(spec.seed, 99))
    lo, hi = np.log(spec.snr_range[0]), np.log(spec.snr_range[1])
    data = StudyData()
    for split, count, target in ((0, spec.n_train, data.train), (1, spec.n_val, data.val),
                                 (2, spec.n_test, data.test)):
        for i in range(count):
            seed = derive_seed(spec.seed, split, i)
            gt = sg.render_sequence(sg.random_scene(seed, n_frames=spec.n_frames,
                                                    shift_range=spec.shift_range))
            snr = float(np.exp(rng.uniform(lo, hi))) if split == 0 else spec.test_snr
            target.append(simulate_sequence(gt, snr, params, f"{'tvx'[split]}{i:03d}", seed))
            if split == 2:
                data.test_gt.append(gt)
    return data


# ------------------------------------------------------------------ models

def model_key(spec: DatasetSpec, params: ss.OpticalParams, net_cfg: NetConfig,
              train_cfg: TrainConfig, net_seed: int) -> str:
    blob = json.dumps([spec.to_dict(), params.__dict__, net_cfg.to_dict(),
                       train_cfg.__dict__, net_seed], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_model(data: StudyData, net_cfg: NetConfig, train_cfg: TrainConfig,
                net_seed: int = 1) -> tuple[DUFNetwork, TrainResult]:
    tr = net_cfg.temporal_radius
    net = DUFNetwork(net_cfg, seed=net_seed)
    result = fit(net, stack_examples(data.train, tr), stack_examples(data.val, tr), train_cfg)
    return net, result


def load_or_train(cache: Path | None, key: str, data_fn, net_cfg: NetConfig,
                  train_cfg: TrainConfig, net_seed: int = 1) -> DUFNetwork:
    """Reuse ``cache/tr{R}-{key}.dufw`` when present, otherwise train and store it.

    ``data_fn`` is called lazily so a fully cached run never builds the dataset.
    """
    path = None if cache is None else Path(cache) / f"tr{net_cfg.temporal_radius}-{key}.dufw"
    if path is not None and path.exists():
        log.info("loading cached model %s", path)
        return load_checkpoint(path)
    t0 = time.perf_counter()
    net, result = train_model(data_fn(), net_cfg, train_cfg, net_seed)
    log.info("trained TR%d in %.0f s (best epoch %d)", net_cfg.temporal_radius,
             time.perf_counter() - t0, result.best_epoch)
    if result.aborted:
        raise FloatingPointError(result.aborted)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, net)
    return net


# -------------------------------------------------------------- evaluation

def super_resolve(net: DUFNetwork, lr: np.ndarray) -> tuple[np.ndarray, float]:
    """Network output for every frame of ``lr`` and the throughput in frames/s."""
    windows = make_windows(lr, net.config.temporal_radius)
    t0 = time.perf_counter()
    out = net.predict(windows)
    elapsed = time.perf_counter() - t0
    return out, (len(out) / elapsed if elapsed > 0 else math.inf)


def evaluate_methods(seq: SequenceData, nets: dict[str, DUFNetwork], bicubic: bool = True,
                     tau: float = 1e-6, frames: slice = slice(None)) -> dict[str, MetricsReport]:
    """Metrics over ``frames`` of ``seq`` for each network and for bicubic."""
    reports = {}
    for name, net in nets.items():
        sr, fps = super_resolve(net, seq.lr)
        reports[name] = evaluate_sequence(seq.hr[frames], sr[frames], tau, fps)
    if bicubic:
        r = round(seq.hr.shape[-1] / seq.lr.shape[-1])
        reports["bicubic"] = evaluate_sequence(seq.hr[frames],
                                               bicubic_upscale(seq.lr, r)[frames], tau)
    return reports


def study_tr(models: dict[int, DUFNetwork], test: list[SequenceData],
             tau: float = 1e-6) -> list[dict]:
    """One row per (T_R, test scene) plus a bicubic row per scene."""
    rows = []
    for seq in test:
        reports = evaluate_methods(seq, {f"TR{k}": v for k, v in sorted(models.items())},
                                   tau=tau)
        for method, rep in reports.items():
            rows.append({"method": method, "scene": seq.name, "psnr": rep.mean_psnr,
                         "ssim": rep.mean_ssim, "tc": rep.mean_tc,
                         "throughput": rep.throughput})
    return rows


def fps_sequences(strides, n_frames: int, params: ss.OpticalParams, snr: float,
                  seed: int = 0, base_fps: float = 100.0):
    """Walking-scene clips at ``base_fps / stride``, all centred on the same instant.

    Yields ``(stride, shift_px, SequenceData)``; ``shift_px`` is the
    nearer lane's per-frame image motion in LR pixels.
    """
    strides = sorted(set(int(s) for s in strides))
    half = n_frames // 2
    total = 2 * half * max(strides) + 1
    spec = sg.walking_scene(total, fps=base_fps, seed=seed)
    speed = 4.3 / 3.6
    lr_ppm = sg.pixels_per_metre(spec, 9.0, lr_width=spec.camera.width // 4)
    mid = total // 2
    for s in strides:
        idx = [mid + (j - half) * s for j in range(2 * half + 1)]
        depth, inten = zip(*(sg.render_frame(spec, t) for t in idx))
        gt = sg.GroundTruthSequence(np.stack(depth), np.stack(inten), base_fps / s,
                                    spec.background_depth)
        seq = simulate_sequence(gt, snr, params, f"walk{seed}-s{s}", derive_seed(seed, s))
        yield s, speed * s / base_fps * lr_ppm, seq


def study_fps(models: dict[int, DUFNetwork], strides, n_frames: int,
              params: ss.OpticalParams, snr: float = 1.3, seeds=(0,),
              tau: float = 1e-6, base_fps: float = 100.0) -> list[dict]:
    """PSNR/SSIM per (frame rate, T_R), scored on frames whose windows fit inside the clip."""
    if n_frames < 3:
        raise ValueError("need at least three frames per clip")
    margin = min(max(models), (n_frames - 1) // 2)
    frames = slice(margin, n_frames - margin)
    acc: dict[tuple[int, str], list[MetricsReport]] = {}
    shifts = {}
    for seed in seeds:
        for s, shift, seq in fps_sequences(strides, n_frames, params, snr, seed, base_fps):
            shifts[s] = shift
            reports = evaluate_methods(seq, {f"TR{k}": v for k, v in sorted(models.items())},
                                       tau=tau, frames=frames)
            for method, rep in reports.items():
                acc.setdefault((s, method), []).append(rep)
    rows = []
    for (s, method), reps in acc.items():
        rows.append({"fps": base_fps / s, "stride": s, "shift_px": shifts[s],
                     "method": method,
                     "psnr": float(np.mean([p for r in reps for p in r.psnr])),
                     "ssim": float(np.mean([v for r in reps for v in r.ssim]))})
    return rows


def study_snr(net: DUFNetwork, test_gt: list[sg.GroundTruthSequence], snrs,
              params: ss.OpticalParams, seed: int = 0, tau: float = 1e-6) -> list[dict]:
    """Network versus bicubic across noise levels, averaged over the test scenes."""
    rows = []
    for snr in snrs:
        acc: dict[str, list[MetricsReport]] = {}
        for i, gt in enumerate(test_gt):
            seq = simulate_sequence(gt, float(snr), params, f"x{i:03d}", derive_seed(seed, 2, i))
            for method, rep in evaluate_methods(seq, {"network": net}, tau=tau).items():
                acc.setdefault(method, []).append(rep)
        for method, reps in acc.items():
            rows.append({"snr": float(snr), "method": method,
                         "psnr": float(np.mean([p for r in reps for p in r.psnr])),
                         "ssim": float(np.mean([v for r in reps for v in r.ssim]))})
    return rows
