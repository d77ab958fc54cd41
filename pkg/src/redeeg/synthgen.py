"""Synthetic N2-like EEG with exact spindle and K-complex annotations.

Background is 1/f noise plus a band-limited 4-7 Hz theta component.
Spindles are Gaussian-windowed 11-16 Hz bursts; K-complexes are a
negative Gaussian lobe followed by a smaller positive rebound.  Events of
both types are placed without overlap, and each annotation is exactly the
support of the injected waveform.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .sigio import EventList, Recording, Signal, read_recording, tile_epochs, write_recording

__all__ = ["EventSpec", "SynthConfig", "generate", "kcomplex_template", "spindle_waveform",
           "generate_corpus", "read_corpus"]

MAX_PLACEMENT_TRIES = 200


@dataclass
class EventSpec:
    rate_per_min: float
    freq_range: tuple
    duration_range: tuple
    amplitude_range: tuple

    def __post_init__(self):
        for name in ("freq_range", "duration_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi, got {(lo, hi)}")
            setattr(self, name, (float(lo), float(hi)))
        if self.rate_per_min < 0:
            raise ValueError("event rate must be non-negative")


def _default_spindle():
    return EventSpec(4.0, (11.0, 16.0), (0.5, 2.0), (20.0, 40.0))


def _default_kcomplex():
    return EventSpec(2.0, (0.5, 2.0), (0.5, 1.5), (70.0, 130.0))


@dataclass
class SynthConfig:
    fs: float = 200.0
    duration_sec: float = 600.0
    theta_amplitude: float = 8.0
    noise_level: float = 10.0
    spindle: EventSpec = field(default_factory=_default_spindle)
    kcomplex: EventSpec = field(default_factory=_default_kcomplex)
    min_gap_sec: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.spindle, dict):
            self.spindle = EventSpec(**self.spindle)
        if isinstance(self.kcomplex, dict):
            self.kcomplex = EventSpec(**self.kcomplex)
        if not self.fs > 0 or not self.duration_sec > 0:
            raise ValueError("fs and duration_sec must be positive")
        if self.min_gap_sec < 0:
            raise ValueError("min_gap_sec must be non-negative")
        sp, kc = self.spindle, self.kcomplex
        if sp.freq_range[0] < 11.0 or sp.freq_range[1] > 16.0:
            raise ValueError("spindle frequencies must lie within 11-16 Hz")
        if sp.duration_range[0] < 0.5 or sp.duration_range[1] > 2.0:
            raise ValueError("spindle durations must lie within 0.5-2 s")
        if kc.freq_range[0] < 0.5 or kc.freq_range[1] > 2.0:
            raise ValueError("K-complex frequencies must lie within 0.5-2 Hz")
        if kc.duration_range[0] < 0.5 or kc.duration_range[1] > 1.5:
            raise ValueError("K-complex durations must lie within 0.5-1.5 s")
        if sp.freq_range[1] >= self.fs / 2:
            raise ValueError("sampling rate too low for spindle frequencies")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def _pink_noise(n, rng):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _theta(n, fs, rng):
    sos = sps.butter(4, [4.0, 7.0], btype="bandpass", fs=fs, output="sos")
    x = sps.sosfiltfilt(sos, rng.standard_normal(n))
    return x / (x.std() * np.sqrt(2))


def spindle_waveform(duration, freq, amplitude, fs, phase=0.0):
    """Sinusoid under a Gaussian window spanning ``[0, duration)``."""
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    sigma = duration / 5.0
    win = np.exp(-0.5 * ((t - duration / 2) / sigma) ** 2)
    return amplitude * win * np.sin(2 * np.pi * freq * t + phase)


def kcomplex_template(duration, amplitude, fs):
    """Biphasic wave: negative lobe over ~2/3 of the support, rebound after."""
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    c1, s1 = duration / 3.0, duration / 9.0
    c2, s2 = 5.0 * duration / 6.0, duration / 14.0
    w = (-np.exp(-0.5 * ((t - c1) / s1) ** 2)
         + 0.45 * np.exp(-0.5 * ((t - c2) / s2) ** 2))
    return amplitude * w


def _place(n_events, durations, total, occupied, gap, rng):
    placed = []
    for d in durations[:n_events]:
        for _ in range(MAX_PLACEMENT_TRIES):
            s = rng.uniform(gap, total - d - gap)
            if all(s + d + gap <= a or s >= b + gap for a, b in occupied):
                occupied.append((s, s + d))
                placed.append((s, s + d))
                break
        else:
            raise ValueError(
                "cannot place events without overlap: event density is infeasible "
                f"({len(occupied)} events placed in {total:.1f} s)")
    return sorted(placed)


def generate(config=None, name=""):
    """Build one :class:`Recording` with ``spindle`` and ``kcomplex`` annotations."""
    cfg = config if config is not None else SynthConfig()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    fs = cfg.fs
    n = int(round(cfg.duration_sec * fs))
    total = n / fs
    x = cfg.noise_level * _pink_noise(n, rng) + cfg.theta_amplitude * _theta(n, fs, rng)

    minutes = total / 60.0
    n_kc = int(rng.poisson(cfg.kcomplex.rate_per_min * minutes))
    n_sp = int(rng.poisson(cfg.spindle.rate_per_min * minutes))
    kc_dur = rng.uniform(*cfg.kcomplex.duration_range, size=n_kc)
    # dominant period of the template tracks its duration; keep it inside the band
    lo_f, hi_f = cfg.kcomplex.freq_range
    kc_dur = np.clip(kc_dur, 1.0 / hi_f, 1.0 / lo_f)
    sp_dur = rng.uniform(*cfg.spindle.duration_range, size=n_sp)
    occupied = []
    kcs = _place(n_kc, kc_dur, total, occupied, cfg.min_gap_sec, rng)
    sps_ = _place(n_sp, sp_dur, total, occupied, cfg.min_gap_sec, rng)

    kc_events, sp_events = [], []
    for s, e in kcs:
        i0 = int(round(s * fs))
        w = kcomplex_template(e - s, rng.uniform(*cfg.kcomplex.amplitude_range), fs)
        x[i0:i0 + w.size] += w
        kc_events.append((i0 / fs, (i0 + w.size) / fs))
    for s, e in sps_:
        i0 = int(round(s * fs))
        w = spindle_waveform(e - s, rng.uniform(*cfg.spindle.freq_range),
                             rng.uniform(*cfg.spindle.amplitude_range), fs,
                             rng.uniform(0, 2 * np.pi))
        x[i0:i0 + w.size] += w
        sp_events.append((i0 / fs, (i0 + w.size) / fs))

    return Recording(Signal(x, fs), tile_epochs(total),
                     {"spindle": EventList(sp_events), "kcomplex": EventList(kc_events)},
                     name=name)


def generate_corpus(out_dir, seed=0, n_train=8, n_val=3, n_test=4, config=None):
    """Write a train/val/test corpus and its manifest ``corpus.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = config if config is not None else SynthConfig()
    children = np.random.SeedSequence(seed).generate_state(n_train + n_val + n_test)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    entries = []
    for i, (split, child) in enumerate(zip(splits, children)):
        name = f"rec{i:02d}"
        cfg = SynthConfig.from_dict({**base.to_dict(), "seed": int(child)})
        rec = generate(cfg, name=name)
        write_recording(out / f"{name}.json", rec)
        entries.append({"name": name, "split": split, "manifest": f"{name}.json"})
    doc = {"seed": int(seed), "synth_config": base.to_dict(), "recordings": entries}
    path = out / "corpus.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_corpus(path, splits=None):
    """Recordings of a corpus manifest as ``{split: [Recording, ...]}``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    out = {}
    for e in doc["recordings"]:
        if splits is not None and e["split"] not in splits:
            continue
        out.setdefault(e["split"], []).append(read_recording(path.parent / e["manifest"]))
    return out
