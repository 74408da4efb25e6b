"""Dynamic-upsampling-filter network for multi-frame depth super-resolution.

Layout of one forward pass, for a window of ``2*T_R + 1`` low-resolution
frames::

    stem 3x3x3 conv (1 -> F)
    n_blocks x [BN, ReLU, 1x1x1 conv (C -> F), BN, ReLU, 3x3x3 conv (F -> G)]
               each block's output is concatenated onto its input (C += G)
    BN, ReLU, keep the centre time slice
    filter head:   1x1 conv -> ReLU -> 1x1 conv to r*r*k*k logits,
                   softmax over the k*k taps, applied to the centre input
                   frame, depth_to_space
    residual head: 1x1 conv -> ReLU -> 1x1 conv to r*r, depth_to_space
    output = filtered + residual, clamped to [0, 1]

F is ``base_channels``, G = F // 2 and n_blocks defaults to ``3 + T_R``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import tensorad as ad


@dataclass(frozen=True)
class NetConfig:
    temporal_radius: int = 2
    upscale: int = 4
    base_channels: int = 16
    filter_size: int = 5
    n_blocks: int | None = None
    head_channels: int | None = None

    def __post_init__(self):
        if not 0 <= self.temporal_radius <= 4:
            raise ValueError(f"temporal_radius must be in 0..4, got {self.temporal_radius}")
        if self.upscale not in (4, 8):
            raise ValueError(f"upscale must be 4 or 8, got {self.upscale}")
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ValueError(f"filter_size must be a positive odd integer, got {self.filter_size}")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if self.n_blocks is not None and self.n_blocks < 1:
            raise ValueError("n_blocks must be at least 1")
        if self.head_channels is not None and self.head_channels < 1:
            raise ValueError("head_channels must be positive")

    @property
    def blocks(self) -> int:
        return 3 + self.temporal_radius if self.n_blocks is None else self.n_blocks

    @property
    def growth(self) -> int:
        return max(1, self.base_channels // 2)

    @property
    def hidden(self) -> int:
        return 2 * self.base_channels if self.head_channels is None else self.head_channels

    @property
    def window_length(self) -> int:
        return 2 * self.temporal_radius + 1

    @property
    def trunk_channels(self) -> int:
        return self.base_channels + self.blocks * self.growth

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: NetConfig) -> Iterator[tuple[str, tuple[int, ...]]]:
    """Trainable tensors in a fixed order."""
    f, g, r, k = cfg.base_channels, cfg.growth, cfg.upscale, cfg.filter_size
    yield "stem.w", (3, 3, 3, 1, f)
    yield "stem.b", (f,)
    c = f
    for i in range(cfg.blocks):
        p = f"block{i}."
        yield p + "bn1.gamma", (c,)
        yield p + "bn1.beta", (c,)
        yield p + "conv1.w", (1, 1, 1, c, f)
        yield p + "conv1.b", (f,)
        yield p + "bn2.gamma", (f,)
        yield p + "bn2.beta", (f,)
        yield p + "conv3.w", (3, 3, 3, f, g)
        yield p + "conv3.b", (g,)
        c += g
    yield "final_bn.gamma", (c,)
    yield "final_bn.beta", (c,)
    hd = cfg.hidden
    for head, nout in (("filter", r * r * k * k), ("residual", r * r)):
        yield f"{head}.hidden.w", (1, 1, 1, c, hd)
        yield f"{head}.hidden.b", (hd,)
        yield f"{head}.out.w", (1, 1, 1, hd, nout)
        yield f"{head}.out.b", (nout,)


def bn_layers(cfg: NetConfig) -> Iterator[tuple[str, int]]:
    f, g = cfg.base_channels, cfg.growth
    c = f
    for i in range(cfg.blocks):
        yield f"block{i}.bn1", c
        yield f"block{i}.bn2", f
        c += g
    yield "final_bn", c


def count_params(cfg: NetConfig) -> int:
    """Number of trainable scalars (running statistics excluded)."""
    return int(sum(int(np.prod(shape)) for _, shape in param_shapes(cfg)))


def init_params(cfg: NetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".beta", ".b")):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    # Start close to a plain box-filter upscale: flat filter logits and a
    # near-silent residual.
    params["filter.out.w"] *= 0.01
    params["residual.out.w"] *= 0.01
    return params


class DUFNetwork:
    """Parameters, running statistics and the forward pass of the network."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.config = config
        raw = init_params(config, seed) if params is None else params
        expected = dict(param_shapes(config))
        missing = set(expected) - set(raw)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.params: dict[str, ad.Tensor] = {}
        for name, shape in expected.items():
            arr = np.array(raw[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            self.params[name] = ad.Tensor(arr, requires_grad=True, name=name)
        self.bn = {name: ad.BatchNormState(c) for name, c in bn_layers(config)}

    # -- state ---------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters followed by running statistics, all as copies."""
        out = {k: v.data.copy() for k, v in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean.copy()
            out[f"{name}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {t.shape}")
            t.data = arr.copy()
        for name, st in self.bn.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward -------------------------------------------------------------

    def _bn(self, x: ad.Tensor, name: str, training: bool) -> ad.Tensor:
        p = self.params
        return ad.batch_norm(x, p[name + ".gamma"], p[name + ".beta"], self.bn[name], training)

    def _head(self, x: ad.Tensor, name: str) -> ad.Tensor:
        p = self.params
        h = ad.relu(ad.conv3d(x, p[name + ".hidden.w"], p[name + ".hidden.b"]))
        return ad.conv3d(h, p[name + ".out.w"], p[name + ".out.b"])

    def forward(self, window, training: bool = False, clamp: bool = True) -> ad.Tensor:
        """Super-resolve the centre frame of each window.

        window: ``(N, 2*T_R+1, h, w)`` or ``(2*T_R+1, h, w)`` normalised depth.
        Returns a tensor of shape ``(N, r*h, r*w)`` (or ``(r*h, r*w)``).
        """
        cfg = self.config
        x = np.asarray(window, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != cfg.window_length:
            raise ValueError(f"expected windows of {cfg.window_length} frames, got shape "
                             f"{np.shape(window)}")
        n, t, h, w = x.shape
        r, k = cfg.upscale, cfg.filter_size
        p = self.params

        feat = ad.conv3d(ad.Tensor(x[..., None]), p["stem.w"], p["stem.b"])
        for i in range(cfg.blocks):
            b = f"block{i}."
            y = ad.relu(self._bn(feat, b + "bn1", training))
            y = ad.conv3d(y, p[b + "conv1.w"], p[b + "conv1.b"])
            y = ad.relu(self._bn(y, b + "bn2", training))
            y = ad.conv3d(y, p[b + "conv3.w"], p[b + "conv3.b"])
            feat = ad.concat([feat, y], axis=-1)
        feat = ad.relu(self._bn(feat, "final_bn", training))
        centre = ad.take(feat, t // 2, axis=1, keepdims=True)

        logits = ad.reshape(self._head(centre, "filter"), (n, h, w, r * r, k * k))
        taps = ad.softmax_taps(logits, axis=-1)
        filtered = ad.local_filter(taps, ad.Tensor(x[:, t // 2]), k)
        filtered = ad.reshape(ad.depth_to_space(filtered, r), (n, h * r, w * r))

        residual = ad.reshape(self._head(centre, "residual"), (n, h, w, r * r))
        residual = ad.reshape(ad.depth_to_space(residual, r), (n, h * r, w * r))

        out = ad.add(filtered, residual)
        if clamp:
            out = ad.clip(out, 0.0, 1.0)
        if single:
            out = ad.reshape(out, (h * r, w * r))
        return out

    __call__ = forward

    def predict(self, windows, batch_size: int = 4, clamp: bool = True) -> np.ndarray:
        """Eval-mode forward over many windows without recording a graph."""
        windows = np.asarray(windows, dtype=np.float64)
        with ad.no_grad():
            outs = [self.forward(windows[i:i + batch_size], clamp=clamp).data
                    for i in range(0, len(windows), batch_size)]
        return np.concatenate(outs, axis=0)
