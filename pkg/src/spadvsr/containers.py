"""Binary containers: DSEQ depth video, HCUB photon histograms, DUFW checkpoints.

All three are little-endian and start with a four-byte magic and a u16
version (currently 1).  Readers reject a wrong magic, an unknown version and
truncated or oversized payloads with :class:`ContainerError`.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .dufnet import DUFNetwork, NetConfig
from .scenegen import GroundTruthSequence
from .spadsim import HistogramCube

VERSION = 1


class ContainerError(IOError):
    """A file is missing, truncated or not the expected container."""


def _read_header(buf: io.BytesIO, magic: bytes, fmt: str) -> tuple:
    head = buf.read(4)
    if head != magic:
        raise ContainerError(f"bad magic {head!r}, expected {magic!r}")
    (version,) = struct.unpack("<H", _take(buf, 2))
    if version != VERSION:
        raise ContainerError(f"unsupported {magic.decode()} version {version}")
    return struct.unpack(fmt, _take(buf, struct.calcsize(fmt)))


def _take(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ContainerError(f"truncated container: wanted {n} bytes, got {len(data)}")
    return data


def _payload(buf: io.BytesIO, dtype: str, count: int) -> np.ndarray:
    dt = np.dtype(dtype)
    arr = np.frombuffer(_take(buf, count * dt.itemsize), dtype=dt)
    if buf.read(1):
        raise ContainerError("trailing bytes after payload")
    return arr


def _read_bytes(path) -> io.BytesIO:
    try:
        return io.BytesIO(Path(path).read_bytes())
    except OSError as exc:
        raise ContainerError(str(exc)) from exc


# -------------------------------------------------------------------- DSEQ

_DSEQ = "<IIIBff"


def dseq_bytes(frames: np.ndarray, fps: float, d_max: float) -> bytes:
    """``frames`` is ``(n, H, W)`` (depth) or ``(n, C, H, W)`` with C in {1, 2}."""
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[:, None]
    n, c, h, w = frames.shape
    if c not in (1, 2):
        raise ValueError("DSEQ holds 1 (depth) or 2 (depth + intensity) channels")
    return (b"DSEQ" + struct.pack("<H", VERSION) + struct.pack(_DSEQ, w, h, n, c, fps, d_max)
            + frames.astype("<f4").tobytes())


def parse_dseq(data: bytes):
    """Returns ``(frames (n, C, H, W) float32, fps, d_max)``."""
    buf = io.BytesIO(data)
    w, h, n, c, fps, d_max = _read_header(buf, b"DSEQ", _DSEQ)
    if c not in (1, 2):
        raise ContainerError(f"DSEQ channel count {c} not in (1, 2)")
    arr = _payload(buf, "<f4", n * c * h * w).reshape(n, c, h, w)
    return arr.astype(np.float32), fps, d_max


def write_dseq(path, frames, fps: float, d_max: float) -> None:
    Path(path).write_bytes(dseq_bytes(frames, fps, d_max))


def read_dseq(path):
    return parse_dseq(_read_bytes(path).getvalue())


def write_ground_truth(path, seq: GroundTruthSequence) -> None:
    write_dseq(path, np.stack([seq.depth, seq.intensity], axis=1), seq.fps, seq.d_max)


def read_ground_truth(path) -> GroundTruthSequence:
    frames, fps, d_max = read_dseq(path)
    if frames.shape[1] != 2:
        raise ContainerError("ground-truth DSEQ needs depth and intensity channels")
    return GroundTruthSequence(frames[:, 0].astype(np.float64), frames[:, 1].astype(np.float64),
                               float(fps), float(d_max))


# -------------------------------------------------------------------- HCUB

_HCUB = "<IIIHffff"


def hcub_bytes(cube: HistogramCube) -> bytes:
    counts = np.asarray(cube.counts)
    if counts.ndim != 4:
        raise ValueError("counts must be (frames, H, W, bins)")
    if (counts < 0).any() or counts.max(initial=0) > np.iinfo(np.uint32).max:
        raise ValueError("counts do not fit in u32")
    n, h, w, b = counts.shape
    return (b"HCUB" + struct.pack("<H", VERSION)
            + struct.pack(_HCUB, w, h, n, b, cube.bin_width, cube.d_max, cube.fps,
                          cube.target_snr)
            + counts.astype("<u4").tobytes())


def parse_hcub(data: bytes) -> HistogramCube:
    buf = io.BytesIO(data)
    w, h, n, b, bin_width, d_max, fps, snr = _read_header(buf, b"HCUB", _HCUB)
    counts = _payload(buf, "<u4", n * h * w * b).reshape(n, h, w, b).astype(np.uint32)
    return HistogramCube(counts, float(bin_width), float(d_max), float(fps), float(snr))


def write_hcub(path, cube: HistogramCube) -> None:
    Path(path).write_bytes(hcub_bytes(cube))


def read_hcub(path) -> HistogramCube:
    return parse_hcub(_read_bytes(path).getvalue())


# -------------------------------------------------------------------- DUFW

# temporal_radius, upscale, base_channels, filter_size, n_blocks, head_channels, n_tensors
_DUFW = "<BBHBBHI"


def dufw_bytes(tensors: dict[str, np.ndarray], config: NetConfig) -> bytes:
    out = [b"DUFW", struct.pack("<H", VERSION),
           struct.pack(_DUFW, config.temporal_radius, config.upscale, config.base_channels,
                       config.filter_size, config.blocks, config.hidden, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def parse_dufw(data: bytes) -> tuple[NetConfig, dict[str, np.ndarray]]:
    buf = io.BytesIO(data)
    tr, r, base, k, blocks, hidden, n = _read_header(buf, b"DUFW", _DUFW)
    try:
        # Values equal to the derived defaults are stored as None again so a
        # round-tripped config compares equal to the one that was saved.
        config = NetConfig(tr, r, base, k, None if blocks == 3 + tr else blocks,
                           None if hidden == 2 * base else hidden)
    except ValueError as exc:
        raise ContainerError(f"invalid network config in checkpoint: {exc}") from exc
    tensors = {}
    for _ in range(n):
        (name_len,) = struct.unpack("<H", _take(buf, 2))
        name = _take(buf, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _take(buf, 1))
        shape = struct.unpack(f"<{rank}I", _take(buf, 4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(_take(buf, 8 * count), dtype="<f8").reshape(shape).copy()
    if buf.read(1):
        raise ContainerError("trailing bytes after tensor table")
    return config, tensors


def save_checkpoint(path, net: DUFNetwork) -> None:
    Path(path).write_bytes(dufw_bytes(net.state_dict(), net.config))


def load_checkpoint(path) -> DUFNetwork:
    config, tensors = parse_dufw(_read_bytes(path).getvalue())
    try:
        net = DUFNetwork(config, tensors)
        net.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise ContainerError(f"checkpoint does not match its config: {exc}") from exc
    return net


# --------------------------------------------------------------------- PGM

def pgm_bytes(depth: np.ndarray, d_max: float) -> bytes:
    """16-bit binary PGM, mapping ``[0, d_max]`` linearly onto ``[0, 65535]``."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("PGM export needs a single 2-d frame")
    h, w = depth.shape
    levels = np.rint(np.clip(depth / d_max, 0.0, 1.0) * 65535).astype(">u2")
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + levels.tobytes()


def write_pgm(path, depth: np.ndarray, d_max: float) -> None:
    Path(path).write_bytes(pgm_bytes(depth, d_max))


def read_pgm(path) -> np.ndarray:
    """Raw 16-bit levels of a file written by :func:`write_pgm`."""
    data = _read_bytes(path).getvalue()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"65535":
        raise ContainerError("not a 16-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    body = parts[3]
    if len(body) != 2 * w * h:
        raise ContainerError("PGM payload size mismatch")
    return np.frombuffer(body, dtype=">u2").reshape(h, w).astype(np.uint16)
