"""Huber-loss training with Adam, step learning-rate decay and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensorad as ad
from .dufnet import DUFNetwork
from .metrics import psnr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    patience: int = 5
    huber_delta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patch_size: int | None = 16     # LR crop side; None trains on whole frames
    steps_per_epoch: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lr_decay_every", "patience", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)


# ------------------------------------------------------------------- loss

def huber_values(err: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * a - 0.5 * delta * delta)


def huber_loss(pred, target, delta: float = 0.01) -> ad.Tensor:
    """Mean of the elementwise Huber penalty on ``pred - target``."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    err = pred.data - target
    n = err.size

    def _bw(g):
        ad.accumulate(pred, g * np.clip(err, -delta, delta) / n)
    return ad.record(np.array(huber_values(err, delta).mean()), (pred,), _bw)


# -------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        """Update ``params`` in place; names without a gradient are skipped."""
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------- early stopping

class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` misses."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.misses = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if loss < self.best:
            self.best, self.best_epoch, self.misses = loss, epoch, 0
            return True, False
        self.misses += 1
        return False, self.misses >= self.patience


# ---------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_psnr: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False
    aborted: str | None = None

    def write_csv(self, path, provenance: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "train_loss", "val_loss", "val_psnr"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss),
                            "inf" if math.isinf(r.val_psnr) else repr(r.val_psnr)])


def _crop_batch(x, y, idx, patch, r, rng):
    if patch is None:
        return x[idx], y[idx]
    h, w = x.shape[-2:]
    ph, pw = min(patch, h), min(patch, w)
    xs, ys = [], []
    for i in idx:
        top = int(rng.integers(0, h - ph + 1))
        left = int(rng.integers(0, w - pw + 1))
        xs.append(x[i, :, top:top + ph, left:left + pw])
        ys.append(y[i, top * r:(top + ph) * r, left * r:(left + pw) * r])
    return np.stack(xs), np.stack(ys)


def evaluate(net: DUFNetwork, x, y, delta: float) -> tuple[float, float]:
    """Mean validation loss (unclamped output) and mean per-frame PSNR (clamped)."""
    out = net.predict(x, clamp=False)
    loss = float(huber_values(out - y, delta).mean())
    return loss, float(np.mean([psnr(np.clip(o, 0, 1), t) for o, t in zip(out, y)]))


def fit(net: DUFNetwork, train: tuple[np.ndarray, np.ndarray],
        val: tuple[np.ndarray, np.ndarray], cfg: TrainConfig) -> TrainResult:
    """Train ``net`` in place and leave it holding the best-validation weights.

    Each epoch visits the shuffled training windows once, in mini-batches of
    random LR crops (``cfg.patch_size``), unless ``steps_per_epoch`` caps it.
    The loss is taken on the unclamped output so pixels pushed outside
    [0, 1] still receive gradient.
    """
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train)
    x_va, y_va = (np.asarray(a, dtype=np.float64) for a in val)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    r = net.config.upscale
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult()
    best_state = net.state_dict()

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(x_tr))
        n_steps = math.ceil(len(order) / cfg.batch_size)
        if cfg.steps_per_epoch is not None:
            n_steps = min(n_steps, cfg.steps_per_epoch)
        losses = []
        try:
            for s in range(n_steps):
                idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
                xb, yb = _crop_batch(x_tr, y_tr, idx, cfg.patch_size, r, rng)
                net.zero_grad()
                loss = huber_loss(net.forward(xb, training=True, clamp=False), yb,
                                  cfg.huber_delta)
                ad.backward(loss)
                grads = {k: t.grad for k, t in net.params.items() if t.grad is not None}
                opt.step({k: t.data for k, t in net.params.items()}, grads, lr)
                losses.append(float(loss.data))
        except FloatingPointError as exc:
            result.aborted = f"epoch {epoch}: {exc}"
            log.warning("training aborted: %s", result.aborted)
            break

        val_loss, val_psnr = evaluate(net, x_va, y_va, cfg.huber_delta)
        if not math.isfinite(val_loss):
            result.aborted = f"epoch {epoch}: non-finite validation loss"
            log.warning("training aborted: %s", result.aborted)
            break
        result.history.append(EpochRecord(epoch, lr, float(np.mean(losses)), val_loss, val_psnr))
        log.info("epoch %d lr %.1e train %.3e val %.3e psnr %.2f",
                 epoch, lr, np.mean(losses), val_loss, val_psnr)
        improved, stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = net.state_dict()
        if stop:
            result.stopped_early = True
            break

    net.load_state_dict(best_state)
    result.best_epoch = stopper.best_epoch
    result.best_val_loss = stopper.best
    return result
