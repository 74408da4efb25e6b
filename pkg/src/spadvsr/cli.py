"""``spadvsr`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O or container error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import scenegen as sg
from . import spadsim as ss
from . import studies
from .baseline import bicubic_upscale
from .config import Config, ConfigError, load_config
from .containers import (ContainerError, load_checkpoint, read_dseq, read_ground_truth,
                         save_checkpoint, write_dseq, write_ground_truth, write_hcub, write_pgm)
from .datapipe import SequenceData, denormalize, fisher_yates, make_windows, normalize
from .metrics import evaluate_sequence, format_float, write_frame_rows

log = logging.getLogger("spadvsr")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


# ----------------------------------------------------------------- helpers

def _csv_writer(path, cfg: Config, header: list[str]):
    fh = open(path, "w", newline="")
    fh.write(f"# {cfg.provenance()}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    return fh, writer


def _write_rows(path, cfg: Config, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("nothing to write")
    fh, writer = _csv_writer(path, cfg, list(rows[0]))
    with fh:
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v
                             for v in row.values()])


def _dump_pgm(directory, frames_m: np.ndarray, d_max: float) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames_m):
        write_pgm(directory / f"frame_{t:04d}.pgm", frame, d_max)


def _radii(cfg: Config) -> list[int]:
    radii = sorted(set(cfg["study"]["radii"]))
    if not radii:
        raise ConfigError("study.radii is empty")
    return radii


def _dataset_spec(cfg: Config) -> studies.DatasetSpec:
    st, ds = cfg["study"], cfg["dataset"]
    return studies.DatasetSpec(st["n_train"], st["n_val"], st["n_test"], st["n_frames"],
                               (ds["snr_min"], ds["snr_max"]), cfg["optics"]["snr"],
                               (cfg["scene"]["shift_min"], cfg["scene"]["shift_max"]),
                               st["seed"])


def _study_models(cfg: Config, radii, model_dir) -> tuple[dict, studies.DatasetSpec, list]:
    """Train (or load from ``model_dir``) one network per radius on the study dataset."""
    spec = _dataset_spec(cfg)
    params = cfg.optical_params()
    train_cfg = cfg.train_config()
    cache: dict = {}

    def data():
        if "data" not in cache:
            log.info("building study dataset")
            cache["data"] = studies.build_dataset(spec, params)
        return cache["data"]

    models = {}
    for tr in radii:
        net_cfg = replace(cfg.net_config(), temporal_radius=tr)
        key = studies.model_key(spec, params, net_cfg, train_cfg, cfg["network"]["seed"])
        models[tr] = studies.load_or_train(model_dir, key, data, net_cfg, train_cfg,
                                           cfg["network"]["seed"])
    return models, spec, data


# --------------------------------------------------------------- commands

def cmd_gen_scenes(args, cfg: Config) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg["scene"]
    if args.scene:
        specs = [("scene_000", sg.with_frames(sg.load_scene(args.scene), sc["n_frames"])
                  if args.frames else sg.load_scene(args.scene))]
    elif args.walking:
        specs = [(f"scene_{i:03d}", sg.walking_scene(sc["n_frames"], sc["fps"],
                                                     seed=sc["seed"] + i))
                 for i in range(sc["n_scenes"])]
    else:
        specs = [(f"scene_{i:03d}",
                  sg.random_scene(studies.derive_seed(sc["seed"], i), sc["n_frames"], sc["fps"],
                                  (sc["shift_min"], sc["shift_max"])))
                 for i in range(sc["n_scenes"])]
    for name, spec in specs:
        sg.save_scene(spec, out / f"{name}.scene")
        gt = sg.render_sequence(spec)
        write_ground_truth(out / f"{name}.gt.dseq", gt)
        if cfg["output"]["pgm"]:
            _dump_pgm(out / "pgm" / name, gt.depth, gt.d_max)
        log.info("wrote %s (%d frames)", name, gt.n_frames)


def cmd_simulate(args, cfg: Config) -> None:
    gt = read_ground_truth(args.input)
    o = cfg["optics"]
    cube = ss.simulate(gt, cfg.optical_params(), o["snr"])
    write_hcub(args.out, cube)
    if args.depth_out or cfg["output"]["pgm"]:
        depth, _ = ss.extract_depth_cube(cube)
        if args.depth_out:
            write_dseq(args.depth_out, depth, gt.fps, gt.d_max)
        if cfg["output"]["pgm"]:
            out = Path(args.out)
            _dump_pgm(out.parent / f"{out.stem}_pgm", depth, gt.d_max)


DATASET_INDEX = "dataset.ini"


def cmd_make_dataset(args, cfg: Config) -> None:
    scenes = sorted(Path(args.scenes).glob("*.gt.dseq"))
    if not scenes:
        raise FileNotFoundError(f"no *.gt.dseq files in {args.scenes}")
    ds = cfg["dataset"]
    n_val, n_test = ds["n_val"], ds["n_test"]
    if n_val < 1 or n_val + n_test >= len(scenes):
        raise ConfigError(f"{len(scenes)} scenes cannot supply {n_val} validation and "
                          f"{n_test} test sequences plus training data")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [p.name[:-len(".gt.dseq")] for p in scenes]
    order = [names[i] for i in fisher_yates(len(names), ds["seed"])]
    n_train = len(names) - n_val - n_test
    splits = {"train": order[:n_train], "val": order[n_train:n_train + n_val],
              "test": order[n_train + n_val:]}
    rng = np.random.default_rng(ds["seed"])
    lo, hi = np.log(ds["snr_min"]), np.log(ds["snr_max"])
    params = cfg.optical_params()
    index = configparser.ConfigParser(interpolation=None)
    index["splits"] = {k: ",".join(v) for k, v in splits.items()}
    index["snr"] = {}
    for split in ("train", "val", "test"):
        for name in splits[split]:
            gt = read_ground_truth(Path(args.scenes) / f"{name}.gt.dseq")
            snr = float(np.exp(rng.uniform(lo, hi))) if split == "train" else cfg["optics"]["snr"]
            seed = studies.derive_seed(params.seed, names.index(name))
            seq = studies.simulate_sequence(gt, snr, params, name, seed)
            write_dseq(out / f"{name}.lr.dseq", denormalize(seq.lr, gt.d_max), gt.fps, gt.d_max)
            write_ground_truth(out / f"{name}.gt.dseq", gt)
            index["snr"][name] = repr(snr)
    with open(out / DATASET_INDEX, "w") as fh:
        index.write(fh)


def load_split(data_dir, split: str) -> list[SequenceData]:
    data_dir = Path(data_dir)
    index = configparser.ConfigParser(interpolation=None)
    if not index.read(data_dir / DATASET_INDEX):
        raise FileNotFoundError(f"{data_dir / DATASET_INDEX} not found")
    try:
        names = [n for n in index["splits"][split].split(",") if n]
    except KeyError:
        raise ConfigError(f"dataset has no split {split!r}") from None
    seqs = []
    for name in names:
        frames, fps, d_max = read_dseq(data_dir / f"{name}.lr.dseq")
        gt = read_ground_truth(data_dir / f"{name}.gt.dseq")
        seqs.append(SequenceData(name, normalize(frames[:, 0], d_max), normalize(gt.depth, d_max),
                                 float(index["snr"].get(name, "nan")), float(fps)))
    return seqs


def cmd_train(args, cfg: Config) -> None:
    train, val = load_split(args.data, "train"), load_split(args.data, "val")
    net, result = studies.train_model(studies.StudyData(train, val), cfg.net_config(),
                                      cfg.train_config(), cfg["network"]["seed"])
    if args.log:
        result.write_csv(args.log, cfg.provenance())
    if result.aborted:
        raise FloatingPointError(result.aborted)
    save_checkpoint(args.out, net)


def cmd_infer(args, cfg: Config) -> None:
    net = load_checkpoint(args.model)
    frames, fps, d_max = read_dseq(args.input)
    lr = normalize(frames[:, 0], d_max)
    sr = denormalize(net.predict(make_windows(lr, net.config.temporal_radius)), d_max)
    write_dseq(args.out, sr, fps, d_max)
    if args.pgm_dir:
        _dump_pgm(args.pgm_dir, sr, d_max)


def cmd_evaluate(args, cfg: Config) -> None:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - {"net", "network", "bicubic"}
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")
    if args.lr or args.gt:
        if not (args.lr and args.gt):
            raise ConfigError("--lr and --gt go together")
        frames, fps, d_max = read_dseq(args.lr)
        gt_frames, _, _ = read_dseq(args.gt)
        seqs = [SequenceData(Path(args.lr).name.split(".")[0], normalize(frames[:, 0], d_max),
                             normalize(gt_frames[:, 0], d_max), fps=float(fps))]
    elif args.data:
        seqs = load_split(args.data, args.split)
    else:
        raise ConfigError("give --data or --lr/--gt")
    net = None
    if {"net", "network"} & set(methods):
        if not args.model:
            raise ConfigError("method 'net' needs --model")
        net = load_checkpoint(args.model)
    tau = cfg["metrics"]["tau"]
    fh, writer = _csv_writer(args.out, cfg, ["sequence", "frame", "method", "psnr", "ssim", "tc"])
    with fh:
        for seq in seqs:
            for method in methods:
                if method == "bicubic":
                    r = round(seq.hr.shape[-1] / seq.lr.shape[-1])
                    sr = bicubic_upscale(seq.lr, r)
                else:
                    sr = net.predict(make_windows(seq.lr, net.config.temporal_radius))
                write_frame_rows(writer, seq.name, method, evaluate_sequence(seq.hr, sr, tau))


def cmd_study_tr(args, cfg: Config) -> None:
    models, _, data = _study_models(cfg, _radii(cfg), args.model_dir)
    _write_rows(args.out, cfg, studies.study_tr(models, data().test, cfg["metrics"]["tau"]))


def cmd_study_fps(args, cfg: Config) -> None:
    models, _, _ = _study_models(cfg, _radii(cfg), args.model_dir)
    st = cfg["study"]
    rows = studies.study_fps(models, st["strides"], st["fps_frames"], cfg.optical_params(),
                             cfg["optics"]["snr"], seeds=(st["seed"],),
                             tau=cfg["metrics"]["tau"], base_fps=cfg["scene"]["fps"])
    _write_rows(args.out, cfg, rows)


def cmd_study_snr(args, cfg: Config) -> None:
    tr = cfg["network"]["temporal_radius"]
    models, _, data = _study_models(cfg, [tr], args.model_dir)
    rows = studies.study_snr(models[tr], data().test_gt, cfg["study"]["snrs"],
                             cfg.optical_params(), cfg["study"]["seed"], cfg["metrics"]["tau"])
    _write_rows(args.out, cfg, rows)


# ------------------------------------------------------------------ parser

def _override(p, flag: str, key: str, help: str) -> None:
    # Values stay strings here; the config schema parses them.
    p.add_argument(flag, dest=key, default=None, metavar=key.split(".")[1].upper(), help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spadvsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress")
        p.add_argument("--config", help="key = value config file with [sections]")
        p.add_argument("--pgm", dest="output.pgm", default=None, action="store_const",
                       const="true", help="also dump 16-bit PGM frames")
        return p

    p = command("gen-scenes", cmd_gen_scenes, "render procedural ground-truth sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", help="render this scene file instead of random scenes")
    p.add_argument("--walking", action="store_true", help="pedestrian scenes")
    _override(p, "--n-scenes", "scene.n_scenes", "number of scenes")
    _override(p, "--frames", "scene.n_frames", "frames per scene")
    _override(p, "--fps", "scene.fps", "frame rate")
    _override(p, "--shift-min", "scene.shift_min", "min per-frame LR shift")
    _override(p, "--shift-max", "scene.shift_max", "max per-frame LR shift")
    _override(p, "--seed", "scene.seed", "scene seed")

    p = command("simulate", cmd_simulate, "ground truth DSEQ -> photon histograms (HCUB)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth-out", help="also write extracted LR depth as DSEQ")
    _override(p, "--snr", "optics.snr", "target SNR ('inf' for no ambient light)")
    _override(p, "--seed", "optics.seed", "noise seed")
    _override(p, "--signal-scale", "optics.signal_scale", "laser return scale")

    p = command("make-dataset", cmd_make_dataset, "simulate a scene folder into a dataset")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    _override(p, "--snr-min", "dataset.snr_min", "lowest training SNR")
    _override(p, "--snr-max", "dataset.snr_max", "highest training SNR")
    _override(p, "--test-snr", "optics.snr", "validation/test SNR")
    _override(p, "--n-val", "dataset.n_val", "validation sequences")
    _override(p, "--n-test", "dataset.n_test", "test sequences")
    _override(p, "--seed", "dataset.seed", "split and SNR seed")
    _override(p, "--noise-seed", "optics.seed", "noise seed")

    def net_flags(p):
        _override(p, "--tr", "network.temporal_radius", "temporal radius T_R")
        _override(p, "--base-channels", "network.base_channels", "trunk width F")
        _override(p, "--n-blocks", "network.n_blocks", "dense blocks (default 3 + T_R)")
        _override(p, "--net-seed", "network.seed", "weight init seed")
        _override(p, "--epochs", "training.epochs", "epoch cap")
        _override(p, "--lr", "training.lr", "initial learning rate")
        _override(p, "--patience", "training.patience", "early-stopping patience")
        _override(p, "--patch-size", "training.patch_size", "LR crop size ('none' = full)")
        _override(p, "--steps-per-epoch", "training.steps_per_epoch", "cap steps per epoch")
        _override(p, "--seed", "training.seed", "batch order/crop seed")

    p = command("train", cmd_train, "train a network on a dataset folder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint (.dufw)")
    p.add_argument("--log", help="per-epoch CSV")
    net_flags(p)

    p = command("infer", cmd_infer, "super-resolve an LR depth DSEQ")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm-dir")

    p = command("evaluate", cmd_evaluate, "per-frame PSNR/SSIM/Tc CSV")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--lr", help="LR depth DSEQ (instead of --data)")
    p.add_argument("--gt", help="HR ground-truth DSEQ (instead of --data)")
    p.add_argument("--model")
    p.add_argument("--methods", default="net,bicubic")
    p.add_argument("--out", required=True)
    _override(p, "--tau", "metrics.tau", "Tc motion tolerance")

    for name, func, help in (("study-tr", cmd_study_tr, "PSNR/SSIM/throughput per T_R"),
                             ("study-fps", cmd_study_fps, "quality versus frame rate"),
                             ("study-snr", cmd_study_snr, "quality versus SNR")):
        p = command(name, func, help)
        p.add_argument("--out", required=True)
        p.add_argument("--model-dir", type=Path, help="checkpoint cache")
        _override(p, "--radii", "study.radii", "comma-separated T_R values")
        _override(p, "--strides", "study.strides", "comma-separated frame strides")
        _override(p, "--snrs", "study.snrs", "comma-separated SNR targets")
        _override(p, "--n-train", "study.n_train", "training sequences")
        _override(p, "--n-test", "study.n_test", "test sequences")
        _override(p, "--study-seed", "study.seed", "dataset seed")
        net_flags(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    try:
        cfg = load_config(args.config, overrides)
        args.func(args, cfg)
    except (ContainerError, OSError) as exc:
        print(f"spadvsr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"spadvsr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"spadvsr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
