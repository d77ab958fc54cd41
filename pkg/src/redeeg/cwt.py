"""Continuous wavelet transform with truncated complex Morlet wavelets."""
from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

__all__ = ["CwtConfig", "Spectrogram", "scale_grid", "kernel_half_width",
           "kernel_times", "morlet_kernel", "cwt", "write_spectrogram",
           "read_spectrogram"]

SPEC_MAGIC = b"REDCWT1\0"


@dataclass(frozen=True)
class CwtConfig:
    f_min: float = 0.5
    f_max: float = 30.0
    n_scales: int = 32
    beta: float = 0.5
    eta: float = 1.5
    border: int = 1000

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError(f"need 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.n_scales < 2:
            raise ValueError("n_scales must be at least 2")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.eta >= 1:
            raise ValueError("eta must be >= 1")
        if self.border < 0:
            raise ValueError("border must be non-negative")


@dataclass
class Spectrogram:
    real: np.ndarray
    imag: np.ndarray
    scales: np.ndarray
    fs: float

    @property
    def frequencies(self):
        return 1.0 / self.scales

    @property
    def magnitude(self):
        return np.hypot(self.real, self.imag)


def scale_grid(config):
    """Geometric scales, increasing; scale ``s`` has central frequency ``1/s``."""
    return np.geomspace(1.0 / config.f_max, 1.0 / config.f_min, config.n_scales)


def kernel_half_width(scale, beta, eta, fs):
    """Half support in samples of the truncated wavelet at ``scale``."""
    return int(math.floor(eta * scale * math.sqrt(4.5 * beta) * fs + 1e-9))


def kernel_times(scale, beta, eta, fs):
    h = kernel_half_width(scale, beta, eta, fs)
    return np.arange(-h, h + 1) / fs


def morlet_kernel(scale, beta, eta, fs, t=None):
    """Complex Morlet wavelet with unit normalization, sampled on its support.

    ``t`` overrides the sample times, which lets a trainable width reuse
    the support fixed at initialization.
    """
    if t is None:
        t = kernel_times(scale, beta, eta, fs)
    return np.exp(2j * np.pi * t / scale) * np.exp(-t ** 2 / (beta * scale ** 2))


def _n_workers():
    try:
        return max(1, int(os.environ.get("RED_THREADS", "1")))
    except ValueError:
        return 1


def cwt(samples, fs, config=CwtConfig(), method="direct"):
    """Transform a padded segment; returns the central ``len - 2*border`` samples.

    Each row is ``sum_tau x[tau] * conj(psi_s)(t - tau) / fs``, the Riemann
    sum of the wavelet convolution integral.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    border = config.border
    n_out = x.size - 2 * border
    if n_out <= 0:
        raise ValueError(f"segment of {x.size} samples is too short for border {border}")
    scales = scale_grid(config)
    need = kernel_half_width(scales[-1], config.beta, config.eta, fs)
    if need > border:
        raise ValueError(
            f"border of {border} samples is insufficient: the widest wavelet "
            f"needs T_B >= {need} samples")
    if method not in ("direct", "fft"):
        raise ValueError(f"unknown method {method!r}")
    conv = np.convolve if method == "direct" else fftconvolve

    def row(s):
        k = np.conj(morlet_kernel(s, config.beta, config.eta, fs))
        h = (k.size - 1) // 2
        seg = x[border - h:border + n_out + h]
        return conv(seg, k, mode="valid") / fs

    workers = _n_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, scales))
    else:
        rows = [row(s) for s in scales]
    out = np.stack(rows)
    return Spectrogram(out.real.copy(), out.imag.copy(), scales, float(fs))


def write_spectrogram(path, spec, extra=None):
    """JSON header followed by float64 real and imaginary planes."""
    header = {"shape": list(spec.real.shape), "fs": spec.fs,
              "scales": [float(s) for s in spec.scales], "dtype": "<f8"}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SPEC_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(spec.real, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spec.imag, dtype="<f8").tobytes())


def read_spectrogram(path):
    with open(path, "rb") as fh:
        if fh.read(8) != SPEC_MAGIC:
            raise ValueError(f"{path}: not a spectrogram dump")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        shape = tuple(header["shape"])
        size = int(np.prod(shape))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 2 * size:
        raise ValueError(f"{path}: expected {2 * size} values, found {data.size}")
    return Spectrogram(data[:size].reshape(shape).copy(), data[size:].reshape(shape).copy(),
                       np.array(header["scales"]), header["fs"])

