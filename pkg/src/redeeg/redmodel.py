"""RED-Time and RED-CWT networks built from :mod:`redeeg.autodiff` layers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.signal import fftconvolve

from . import autodiff as ad
from .autodiff.tensor import Tensor, make_node
from .cwt import CwtConfig, kernel_half_width, scale_grid

__all__ = ["ModelConfig", "REDNetwork", "morlet_frontend", "build"]

DOWNSAMPLING = 8
N_BLOCKS = 3


@dataclass
class ModelConfig:
    variant: str = "time"
    T: int = 4000
    T_B: int = 1000
    C: int = 1
    n_filters: int | None = None
    n_scales: int = 32
    beta_init: float = 0.5
    eta: float = 1.5
    lstm_units: int = 256
    hidden_units: int = 128
    drop_rate_1: float = 0.2
    drop_rate_2: float = 0.5
    pooling: str = "avg"
    fs: float = 200.0
    f_min: float = 0.5
    f_max: float = 30.0
    bn_momentum: float = 0.99

    def __post_init__(self):
        if self.variant not in ("time", "cwt"):
            raise ValueError(f"variant must be 'time' or 'cwt', got {self.variant!r}")
        if self.n_filters is None:
            self.n_filters = 64 if self.variant == "time" else 32
        if self.C != 1:
            raise ValueError("only single-channel input (C=1) is supported")
        if self.T <= 0 or self.T % DOWNSAMPLING:
            raise ValueError(f"T must be a positive multiple of {DOWNSAMPLING}, got {self.T}")
        for name in ("n_filters", "n_scales", "lstm_units", "hidden_units"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pooling not in ("avg", "max"):
            raise ValueError(f"pooling must be 'avg' or 'max', got {self.pooling!r}")
        for name in ("drop_rate_1", "drop_rate_2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.variant == "cwt":
            need = kernel_half_width(1.0 / self.f_min, self.beta_init, self.eta, self.fs)
            if need > self.T_B:
                raise ValueError(
                    f"T_B={self.T_B} is insufficient for the widest wavelet; need >= {need}")

    @property
    def border(self):
        return self.T_B if self.variant == "cwt" else 0

    @property
    def input_length(self):
        return self.T + 2 * self.border

    @property
    def output_length(self):
        return self.T // DOWNSAMPLING

    def cwt_config(self):
        return CwtConfig(self.f_min, self.f_max, self.n_scales, self.beta_init, self.eta,
                         self.T_B)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def morlet_frontend(x, log_beta, scales, times, fs, border):
    """Batched complex Morlet CWT with a differentiable log-width.

    ``x`` is ``(batch, T + 2*border)``; the support ``times[i]`` of each
    wavelet stays fixed while its envelope follows ``exp(log_beta)``.
    Returns ``(batch, n_scales, T, 2)`` holding real and imaginary planes.
    """
    x, log_beta = ad.tensor.as_tensor(x), ad.tensor.as_tensor(log_beta)
    B, L = x.shape
    T = L - 2 * border
    beta = float(np.exp(log_beta.data))
    out = np.empty((B, len(scales), T, 2))
    kernels, segs = [], []
    for i, (s, t) in enumerate(zip(scales, times)):
        h = (t.size - 1) // 2
        if h > border:
            raise ValueError(f"wavelet at scale {s:.4f} needs border >= {h}, got {border}")
        k = np.exp(-2j * np.pi * t / s) * np.exp(-t ** 2 / (beta * s * s))
        seg = x.data[:, border - h:border + T + h]
        y = fftconvolve(seg, k[None, :], mode="valid", axes=1) / fs
        out[:, i, :, 0] = y.real
        out[:, i, :, 1] = y.imag
        kernels.append(k)
        segs.append((h, seg))

    def back(g):
        gbeta = 0.0
        gx = np.zeros_like(x.data) if x.requires_grad else None
        for i, (s, t) in enumerate(zip(scales, times)):
            k = kernels[i]
            h, seg = segs[i]
            gr, gi = g[:, i, :, 0], g[:, i, :, 1]
            if log_beta.requires_grad:
                rr = fftconvolve(seg, gr[:, ::-1], mode="valid", axes=1).sum(axis=0)[::-1]
                ri = fftconvolve(seg, gi[:, ::-1], mode="valid", axes=1).sum(axis=0)[::-1]
                dk = (rr * k.real + ri * k.imag) / fs
                gbeta += float(np.sum(dk * t ** 2 / (beta * s * s)))
            if gx is not None:
                kr = k.real[::-1][None, :]
                ki = k.imag[::-1][None, :]
                gseg = (fftconvolve(gr, kr, mode="full", axes=1)
                        + fftconvolve(gi, ki, mode="full", axes=1)) / fs
                gx[:, border - h:border + T + h] += gseg
        return gx, np.asarray(gbeta).reshape(log_beta.shape)

    return make_node(out, (x, log_beta), back)


def _glorot(rng, shape, fan_in, fan_out, name):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class REDNetwork:
    """Conv feature extractor, two BLSTM layers and a pointwise classifier.

    Parameters live in ``params`` (trainable tensors, insertion-ordered) and
    batch-norm running statistics in ``buffers``.
    """

    def __init__(self, config=None, seed=0):
        self.config = config if config is not None else ModelConfig()
        self.params = {}
        self.buffers = {}
        self._build(np.random.default_rng(seed))

    # -- construction ------------------------------------------------------
    def _bn(self, name, pshape):
        self.params[f"{name}/gamma"] = Tensor(np.ones(pshape), requires_grad=True)
        self.params[f"{name}/beta"] = Tensor(np.zeros(pshape), requires_grad=True)
        self.buffers[name] = {"mean": np.zeros(pshape), "var": np.ones(pshape)}

    def _build(self, rng):
        cfg = self.config
        nf = cfg.n_filters
        if cfg.variant == "time":
            self._bn("bn_in", (1, 1, 1))
            cin = cfg.C
        else:
            self.scales = scale_grid(cfg.cwt_config())
            self.kernel_times = [
                np.arange(-h, h + 1) / cfg.fs
                for h in (kernel_half_width(s, cfg.beta_init, cfg.eta, cfg.fs)
                          for s in self.scales)]
            self.params["cwt/log_beta"] = Tensor(np.log(cfg.beta_init), requires_grad=True)
            self._bn("bn_in", (1, cfg.n_scales, 1, 2 * cfg.C))
            cin = 2 * cfg.C
        for blk in range(N_BLOCKS):
            cout = nf * 2 ** blk
            for j in range(2):
                name = f"block{blk}/conv{j}"
                if cfg.variant == "time":
                    self.params[f"{name}/w"] = _glorot(rng, (3, cin, cout), 3 * cin, 3 * cout, name)
                    self._bn(f"{name}/bn", (1, 1, cout))
                else:
                    self.params[f"{name}/w"] = _glorot(rng, (3, 3, cin, cout), 9 * cin,
                                                       9 * cout, name)
                    self._bn(f"{name}/bn", (1, 1, 1, cout))
                cin = cout
        feat = cin if cfg.variant == "time" else cin * cfg.n_scales
        H = cfg.lstm_units
        for layer in range(2):
            for direction in ("fw", "bw"):
                name = f"blstm{layer}/{direction}"
                self.params[f"{name}/wx"] = Tensor(
                    rng.uniform(-1, 1, (feat, 4 * H)) / math.sqrt(feat), requires_grad=True)
                self.params[f"{name}/wh"] = Tensor(
                    rng.uniform(-1, 1, (H, 4 * H)) / math.sqrt(H), requires_grad=True)
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                self.params[f"{name}/b"] = Tensor(b, requires_grad=True)
            feat = 2 * H
        self.params["fc1/w"] = _glorot(rng, (feat, cfg.hidden_units), feat, cfg.hidden_units, "fc1")
        self.params["fc1/b"] = Tensor(np.zeros(cfg.hidden_units), requires_grad=True)
        self.params["fc2/w"] = _glorot(rng, (cfg.hidden_units, 2), cfg.hidden_units, 2, "fc2")
        self.params["fc2/b"] = Tensor(np.zeros(2), requires_grad=True)

    # -- forward -----------------------------------------------------------
    def parameters(self):
        return list(self.params.values())

    def _apply_bn(self, name, x, axes, training):
        return ad.batch_norm(x, self.params[f"{name}/gamma"], self.params[f"{name}/beta"],
                             self.buffers[name], axes, training,
                             momentum=self.config.bn_momentum)

    def features(self, x, training=False):
        """Local feature extraction: ``(batch, T/8, features)``."""
        cfg = self.config
        pool = ad.avg_pool if cfg.pooling == "avg" else ad.max_pool
        if cfg.variant == "time":
            h = x.reshape(x.shape[0], x.shape[1], 1)
            h = self._apply_bn("bn_in", h, (0, 1), training)
            conv, time_axis = ad.conv1d, 1
        else:
            h = morlet_frontend(x, self.params["cwt/log_beta"], self.scales,
                                self.kernel_times, cfg.fs, cfg.T_B)
            h = self._apply_bn("bn_in", h, (0, 2), training)
            conv, time_axis = ad.conv2d, 2
        for blk in range(N_BLOCKS):
            for j in range(2):
                name = f"block{blk}/conv{j}"
                h = conv(h, self.params[f"{name}/w"])
                h = self._apply_bn(f"{name}/bn", h, tuple(range(h.ndim - 1)), training)
                h = ad.relu(h)
            h = pool(h, axis=time_axis, size=2)
        if cfg.variant == "cwt":
            B, S, Tc, F = h.shape
            h = ad.transpose(h, (0, 2, 1, 3)).reshape(B, Tc, S * F)
        return h

    def _blstm(self, layer, h):
        p = self.params
        fw = ad.lstm(h, p[f"blstm{layer}/fw/wx"], p[f"blstm{layer}/fw/wh"], p[f"blstm{layer}/fw/b"])
        bw = ad.lstm(h, p[f"blstm{layer}/bw/wx"], p[f"blstm{layer}/bw/wh"], p[f"blstm{layer}/bw/b"],
                     reverse=True)
        return ad.concat([fw, bw], axis=-1)

    def forward(self, x, training=False, rng=None):
        """Class probabilities ``(batch, T/8, 2)`` for segments ``(batch, length)``."""
        cfg = self.config
        x = ad.tensor.as_tensor(x)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != cfg.input_length:
            raise ValueError(
                f"expected segments of {cfg.input_length} samples, got shape {x.shape}")
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        h = self.features(x, training)
        if h.shape[1] != cfg.output_length:
            raise AssertionError(f"feature length {h.shape[1]} != T/8 = {cfg.output_length}")
        h = ad.dropout(h, cfg.drop_rate_1, training, rng)
        h = self._blstm(0, h)
        h = ad.dropout(h, cfg.drop_rate_2, training, rng)
        h = self._blstm(1, h)
        h = ad.dropout(h, cfg.drop_rate_2, training, rng)
        h = ad.relu(ad.dense(h, self.params["fc1/w"], self.params["fc1/b"]))
        logits = ad.dense(h, self.params["fc2/w"], self.params["fc2/b"])
        return ad.softmax(logits, axis=-1)

    __call__ = forward

    def predict_proba(self, x, batch_size=32):
        """Class-1 probabilities ``(batch, T/8)`` in inference mode."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = []
        with ad.no_grad():
            for i in range(0, x.shape[0], batch_size):
                out.append(self.forward(x[i:i + batch_size]).data[..., 1])
        return np.concatenate(out, axis=0)

    @property
    def beta(self):
        if self.config.variant != "cwt":
            return None
        return float(np.exp(self.params["cwt/log_beta"].data))

    # -- state -------------------------------------------------------------
    def state_arrays(self):
        arrays = {f"param:{k}": v.data for k, v in self.params.items()}
        for k, st in self.buffers.items():
            arrays[f"buffer:{k}/mean"] = st["mean"]
            arrays[f"buffer:{k}/var"] = st["var"]
        return arrays

    def load_state_arrays(self, arrays):
        for k, v in self.params.items():
            a = arrays[f"param:{k}"]
            if a.shape != v.data.shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {v.data.shape}")
            v.data = np.array(a, dtype=np.float64)
        for k, st in self.buffers.items():
            st["mean"] = np.array(arrays[f"buffer:{k}/mean"], dtype=np.float64)
            st["var"] = np.array(arrays[f"buffer:{k}/var"], dtype=np.float64)

    def copy_state(self):
        return {k: np.array(v, copy=True) for k, v in self.state_arrays().items()}

    def save(self, prefix, meta=None, optimizer_step=0):
        doc = {"model_config": self.config.to_dict()}
        doc.update(meta or {})
        return ad.save_checkpoint(prefix, self.state_arrays(), doc, optimizer_step)

    @classmethod
    def load(cls, prefix):
        arrays, meta, _ = ad.load_checkpoint(prefix)
        net = cls(ModelConfig.from_dict(meta["model_config"]))
        net.load_state_arrays(arrays)
        return net, meta

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))


def build(config=None, seed=0):
    return REDNetwork(config, seed)
