"""Balanced random-crop training with learning-rate halving on plateau."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .redmodel import DOWNSAMPLING
from .sigio import events_to_mask

logger = logging.getLogger(__name__)

__all__ = ["TrainConfig", "EpochPool", "DegeneratePoolError", "label_sequence",
           "build_pool", "sample_batch", "extract_segment", "validation_segments",
           "train", "TrainResult"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    patience: int = 1000
    n_halvings: int = 4
    g_max: float = 1.0
    seed: int = 0
    val_check_every: int = 50
    min_improvement: float = 1e-5
    max_iters: int | None = None

    def __post_init__(self):
        if self.batch_size <= 0 or self.batch_size % 2:
            raise ValueError(f"batch_size must be positive and even, got {self.batch_size}")
        for name in ("learning_rate", "g_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("patience", "n_halvings", "val_check_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class DegeneratePoolError(ValueError):
    """All epochs share the median event count, so the low pool is empty."""


def label_sequence(events, window, fs, factor=DOWNSAMPLING):
    """Coarse labels: a step is 1 when at least half its samples lie in an event."""
    start, end = window
    n = int(round((end - start) * fs))
    if n % factor:
        raise ValueError(f"window of {n} samples is not divisible by {factor}")
    mask = events_to_mask(events, n, fs, offset_sec=start)
    return (mask.reshape(-1, factor).sum(axis=1) * 2 >= factor).astype(np.int64)


@dataclass
class EpochPool:
    """Training epochs split at the median event-sample count."""

    entries: list            # (recording index, start sample, end sample)
    counts: np.ndarray
    median: float
    low: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    high: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    uniform: bool = False


def build_pool(recordings, event_type, allow_uniform=False):
    """Count event samples per epoch; ``< median`` goes low, the rest high."""
    entries, counts = [], []
    for r, rec in enumerate(recordings):
        fs = rec.signal.fs
        if event_type not in rec.annotations:
            raise ValueError(f"recording {rec.name or r} has no {event_type!r} annotations")
        mask = events_to_mask(rec.annotations[event_type], len(rec.signal), fs)
        for s, e in rec.epochs:
            i0, i1 = int(round(s * fs)), int(round(e * fs))
            entries.append((r, i0, i1))
            counts.append(int(mask[i0:i1].sum()))
    if not entries:
        raise ValueError("training set has no epochs")
    counts = np.asarray(counts)
    med = float(np.median(counts))
    low = np.flatnonzero(counts < med)
    high = np.flatnonzero(counts >= med)
    if low.size == 0:
        if not allow_uniform:
            raise DegeneratePoolError(
                f"all {counts.size} epochs hold {int(med)} event samples; the low pool is "
                "empty, fall back to uniform sampling")
        return EpochPool(entries, counts, med, np.arange(counts.size), np.arange(counts.size),
                         uniform=True)
    return EpochPool(entries, counts, med, low, high)


def extract_segment(samples, start, length, border=0):
    """``samples[start - border : start + length + border]``, zero-padded outside."""
    n = samples.size
    a, b = start - border, start + length + border
    if a >= 0 and b <= n:
        return samples[a:b].copy()
    out = np.zeros(b - a)
    lo, hi = max(a, 0), min(b, n)
    if hi > lo:
        out[lo - a:hi - a] = samples[lo:hi]
    return out


def sample_batch(pool, recordings, event_type, batch_size, T, rng, border=0):
    """``batch_size/2`` crops from each pool, centered uniformly inside an epoch.

    Returns ``(X, Y, origins)`` with ``X`` of shape ``(M, T + 2*border)``,
    ``Y`` of shape ``(M, T/8)`` and ``origins`` listing ``(pool, entry)``.
    """
    half = batch_size // 2
    if pool.low.size == 0 or pool.high.size == 0:
        raise DegeneratePoolError("both pools must be non-empty")
    X = np.empty((batch_size, T + 2 * border))
    Y = np.empty((batch_size, T // DOWNSAMPLING), dtype=np.int64)
    origins = []
    k = 0
    for name, members in (("low", pool.low), ("high", pool.high)):
        for _ in range(half):
            entry = int(members[rng.integers(members.size)])
            r, i0, i1 = pool.entries[entry]
            rec = recordings[r]
            n = len(rec.signal)
            center = int(rng.integers(i0, i1))
            start = min(max(center - T // 2, 0), n - T)
            X[k] = extract_segment(rec.signal.samples, start, T, border)
            fs = rec.signal.fs
            Y[k] = label_sequence(rec.annotations[event_type], (start / fs, (start + T) / fs), fs)
            origins.append((name, entry))
            k += 1
    return X, Y, origins


def validation_segments(recordings, event_type, T, border=0):
    """Non-overlapping stride-T tiling of every validation recording."""
    X, Y = [], []
    for rec in recordings:
        fs = rec.signal.fs
        n = len(rec.signal)
        for start in range(0, n - T + 1, T):
            X.append(extract_segment(rec.signal.samples, start, T, border))
            Y.append(label_sequence(rec.annotations[event_type],
                                    (start / fs, (start + T) / fs), fs))
    if not X:
        raise ValueError("validation recordings are shorter than one segment")
    return np.stack(X), np.stack(Y)


def _dataset_loss(network, X, Y, batch_size):
    total, count = 0.0, 0
    with ad.no_grad():
        for i in range(0, X.shape[0], batch_size):
            probs = network.forward(X[i:i + batch_size], training=False)
            n = Y[i:i + batch_size].size
            total += float(ad.cross_entropy(probs, Y[i:i + batch_size]).data) * n
            count += n
    return total / count


@dataclass
class TrainResult:
    best_val_loss: float
    initial_val_loss: float
    best_iteration: int
    iterations: int
    log: list
    lr_trace: list
    stop_reason: str


def train(network, train_recordings, val_recordings, event_type, config=None,
          log_path=None, callback=None):
    """Train ``network`` in place; it ends holding the best-validation weights."""
    cfg = config if config is not None else TrainConfig()
    if not val_recordings:
        raise ValueError("validation set is empty")
    mcfg = network.config
    T, border = mcfg.T, mcfg.border
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    try:
        pool = build_pool(train_recordings, event_type)
    except DegeneratePoolError as exc:
        logger.warning("%s", exc)
        pool = build_pool(train_recordings, event_type, allow_uniform=True)
    Xv, Yv = validation_segments(val_recordings, event_type, T, border)

    params = network.parameters()
    opt = ad.Adam(params, lr=cfg.learning_rate)
    best = _dataset_loss(network, Xv, Yv, cfg.batch_size)
    initial = best
    best_state = network.copy_state()
    best_it, last_improve, halvings = 0, 0, 0
    log = [{"iteration": 0, "train_loss": "", "val_loss": best, "lr": opt.lr}]
    lr_trace = []
    stop = "max_iters"
    it = 0
    while cfg.max_iters is None or it < cfg.max_iters:
        it += 1
        X, Y, _ = sample_batch(pool, train_recordings, event_type, cfg.batch_size, T, rng, border)
        for p in params:
            p.grad = None
        probs = network.forward(X, training=True, rng=rng)
        loss = ad.cross_entropy(probs, Y)
        lval = float(loss.data)
        if not math.isfinite(lval):
            raise FloatingPointError(f"non-finite training loss {lval} at iteration {it}")
        loss.backward()
        grads, _ = ad.clip_global_norm(
            [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params], cfg.g_max)
        opt.step(grads)
        lr_trace.append(opt.lr)
        row = {"iteration": it, "train_loss": lval, "val_loss": "", "lr": opt.lr}
        if it % cfg.val_check_every == 0:
            vloss = _dataset_loss(network, Xv, Yv, cfg.batch_size)
            row["val_loss"] = vloss
            if vloss < best - cfg.min_improvement:
                best, best_it, last_improve = vloss, it, it
                best_state = network.copy_state()
            elif it - last_improve >= cfg.patience:
                halvings += 1
                last_improve = it
                opt.lr /= 2.0
                logger.info("iteration %d: learning rate halved to %g", it, opt.lr)
                if halvings >= cfg.n_halvings:
                    log.append(row)
                    stop = "lr_halvings"
                    break
        log.append(row)
        if callback is not None:
            callback(row)
    network.load_state_arrays(best_state)
    if log_path is not None:
        write_log(log_path, log)
    return TrainResult(best, initial, best_it, it, log, lr_trace, stop)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iteration", "train_loss", "val_loss", "lr"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"iteration": r["iteration"],
                        "train_loss": _fmt(r["train_loss"]),
                        "val_loss": _fmt(r["val_loss"]),
                        "lr": _fmt(r["lr"])})


def _fmt(v):
    return "" if v == "" else repr(float(v))
