"""Signals, event lists, recordings: preprocessing chain and file formats.

File formats
------------
Signal (binary)
    16-byte header: magic ``b"REDSIG1\\0"`` then the sampling rate as a
    little-endian float64, followed by little-endian float32 samples.
Signal (CSV)
    First line ``# fs=<Hz>``, then one sample per row.
Events
    CSV with header ``start_sec,end_sec``, one event per row, 6 decimals.
Recording manifest
    JSON object ``{"signal": path, "epochs": [[s, e], ...],
    "annotations": {event_type: path}}``; paths relative to the manifest.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

SIGNAL_MAGIC = b"REDSIG1\0"
EPOCH_SEC = 20.0
CLIP_VALUE = 10.0

__all__ = [
    "FormatError", "Signal", "EventList", "Recording",
    "bandpass", "lowpass", "resample", "normalize", "global_std", "preprocess",
    "events_to_mask", "mask_to_events", "tile_epochs",
    "read_signal", "write_signal", "read_events", "write_events",
    "read_recording", "write_recording",
]


class FormatError(ValueError):
    """Malformed signal, event or manifest file."""


@dataclass
class Signal:
    """Uniformly sampled single-channel time series."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.fs = float(self.fs)
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal contains NaN or Inf samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.fs


class EventList:
    """Sorted, non-overlapping list of ``(start_sec, end_sec)`` intervals.

    Touching intervals (``end == next start``) are allowed.
    """

    def __init__(self, events=()):
        arr = np.asarray(list(events) if not isinstance(events, np.ndarray) else events,
                         dtype=np.float64)
        if arr.size == 0:
            arr = np.zeros((0, 2))
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"events must have shape (n, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("event bounds must be finite")
        bad = np.flatnonzero(arr[:, 0] >= arr[:, 1])
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"event {i} has start >= end: {tuple(arr[i])}")
        if arr.shape[0] > 1:
            if np.any(np.diff(arr[:, 0]) < 0):
                raise ValueError("events are not sorted by start time")
            ov = np.flatnonzero(arr[1:, 0] < arr[:-1, 1])
            if ov.size:
                i = int(ov[0])
                raise ValueError(f"events {i} and {i + 1} overlap")
        self._arr = arr
        self._arr.setflags(write=False)

    @property
    def array(self):
        return self._arr

    @property
    def starts(self):
        return self._arr[:, 0]

    @property
    def ends(self):
        return self._arr[:, 1]

    @property
    def durations(self):
        return self._arr[:, 1] - self._arr[:, 0]

    def __len__(self):
        return self._arr.shape[0]

    def __iter__(self):
        return (tuple(map(float, row)) for row in self._arr)

    def __getitem__(self, i):
        return tuple(map(float, self._arr[i]))

    def __eq__(self, other):
        if not isinstance(other, EventList):
            return NotImplemented
        return self._arr.shape == other._arr.shape and np.array_equal(self._arr, other._arr)

    def __repr__(self):
        return f"EventList({self.to_list()!r})"

    def to_list(self):
        return [tuple(map(float, row)) for row in self._arr]

    def within(self, start, end):
        """Events intersecting ``[start, end)``, unclipped."""
        keep = (self._arr[:, 1] > start) & (self._arr[:, 0] < end)
        return EventList(self._arr[keep])


@dataclass
class Recording:
    """A signal with its analysis epochs and per-type annotations."""

    signal: Signal
    epochs: list = field(default_factory=list)
    annotations: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        dur = self.signal.duration
        tol = 0.5 / self.signal.fs
        self.epochs = [(float(s), float(e)) for s, e in self.epochs]
        for s, e in self.epochs:
            if s < -tol or e > dur + tol or s >= e:
                raise ValueError(f"epoch ({s}, {e}) outside signal of {dur:.3f} s")
        for kind, ev in list(self.annotations.items()):
            if not isinstance(ev, EventList):
                ev = EventList(ev)
                self.annotations[kind] = ev
            if len(ev) and (ev.starts[0] < -tol or ev.ends[-1] > dur + tol):
                raise ValueError(f"{kind} annotations extend beyond the signal")


def tile_epochs(duration, epoch_sec=EPOCH_SEC):
    """Consecutive whole epochs covering ``[0, duration)``."""
    n = int(math.floor(duration / epoch_sec + 1e-9))
    return [(i * epoch_sec, (i + 1) * epoch_sec) for i in range(n)]


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _check_band(lo, hi, fs):
    if not (0 < lo < hi < fs / 2):
        raise ValueError(
            f"invalid band [{lo}, {hi}] Hz for fs={fs} Hz: need 0 < lo < hi < fs/2")


def bandpass(sig, lo=0.3, hi=35.0, order=3):
    """Zero-phase Butterworth band-pass (forward-backward, second-order sections)."""
    _check_band(lo, hi, sig.fs)
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=sig.fs, output="sos")
    if sig.samples.size == 0:
        return Signal(sig.samples.copy(), sig.fs)
    return Signal(sps.sosfiltfilt(sos, sig.samples), sig.fs)


def lowpass(samples, cutoff, fs, order=3):
    """Zero-phase Butterworth low-pass on a raw sample array."""
    if not 0 < cutoff < fs / 2:
        raise ValueError(f"invalid cut-off {cutoff} Hz for fs={fs} Hz")
    sos = sps.butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    samples = np.asarray(samples, dtype=np.float64)
    padlen = min(3 * (2 * len(sos) + 1), samples.size - 1)
    return sps.sosfiltfilt(sos, samples, padlen=max(padlen, 0))


def _polyphase_kernel(up, down, half_zeros=10, kaiser_beta=5.0):
    """Same Kaiser-windowed sinc as scipy's default, with unit DC gain per phase."""
    m = max(up, down)
    h = sps.firwin(2 * half_zeros * m + 1, 1.0 / m, window=("kaiser", kaiser_beta))
    for r in range(up):
        h[r::up] /= h[r::up].sum() * up
    return h


def resample(sig, target_fs=200.0):
    """Polyphase windowed-sinc resampling to ``target_fs``."""
    if not target_fs > 0:
        raise ValueError(f"target sampling rate must be positive, got {target_fs}")
    if float(target_fs) == sig.fs:
        return Signal(sig.samples.copy(), sig.fs)
    ratio = Fraction(float(target_fs) / sig.fs).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    out = sps.resample_poly(sig.samples, up, down, window=_polyphase_kernel(up, down),
                            padtype="line")
    return Signal(out, float(target_fs))


def normalize(sig, global_std, clip=CLIP_VALUE):
    """Divide by a corpus-wide standard deviation and clip to ``[-clip, clip]``."""
    if not global_std > 0:
        raise ValueError(f"global_std must be positive, got {global_std}")
    return Signal(np.clip(sig.samples / global_std, -clip, clip), sig.fs)


def global_std(signals):
    """Standard deviation of the concatenation of all given signals.

    Feed it every non-testing recording, never a single one.
    """
    signals = list(signals)
    if not signals:
        raise ValueError("global_std needs at least one signal")
    cat = np.concatenate([s.samples for s in signals])
    std = float(np.std(cat))
    if not std > 0:
        raise ValueError("signals have zero variance")
    return std


def preprocess(sig, std=None, lo=0.3, hi=35.0, target_fs=200.0):
    """Band-pass then resample; also normalize when ``std`` is given."""
    out = resample(bandpass(sig, lo, hi), target_fs)
    if std is not None:
        out = normalize(out, std)
    return out


# ---------------------------------------------------------------------------
# events <-> sample masks
# ---------------------------------------------------------------------------

def _sample_index(t, fs):
    # first sample whose time is >= t, robust to float noise
    return int(math.ceil(t * fs - 1e-6))


def events_to_mask(events, n_samples, fs, offset_sec=0.0):
    """Boolean mask of samples ``k`` with ``start <= offset + k/fs < end``."""
    mask = np.zeros(n_samples, dtype=bool)
    for s, e in events:
        i0 = max(_sample_index(s - offset_sec, fs), 0)
        i1 = min(_sample_index(e - offset_sec, fs), n_samples)
        if i1 > i0:
            mask[i0:i1] = True
    return mask


def mask_to_events(mask, fs, offset_sec=0.0):
    """Maximal runs of True samples as ``[first/fs, (last+1)/fs)`` events."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return EventList()
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return EventList(np.column_stack([starts / fs + offset_sec, ends / fs + offset_sec]))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def write_signal(path, sig):
    """Write a signal; ``.csv`` paths use the text fallback."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# fs={sig.fs!r}\n")
            for v in sig.samples:
                fh.write(f"{float(np.float32(v))!r}\n")
        return
    with open(path, "wb") as fh:
        fh.write(SIGNAL_MAGIC)
        fh.write(struct.pack("<d", sig.fs))
        fh.write(sig.samples.astype("<f4").tobytes())


def read_signal(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:8] == SIGNAL_MAGIC:
            if len(head) < 16:
                raise FormatError(f"{path}: truncated header")
            (fs,) = struct.unpack("<d", head[8:16])
            raw = fh.read()
            if len(raw) % 4:
                raise FormatError(f"{path}: payload is not a whole number of float32 samples")
            return Signal(np.frombuffer(raw, dtype="<f4").astype(np.float64), fs)
    return _read_signal_csv(path)


def _read_signal_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# fs="):
        raise FormatError(f"{path}:1: expected '# fs=<Hz>' header")
    try:
        fs = float(lines[0][5:])
    except ValueError:
        raise FormatError(f"{path}:1: bad sampling rate {lines[0][5:]!r}") from None
    vals = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad sample {line!r}") from None
    try:
        return Signal(np.array(vals), fs)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_events(path, events):
    with open(path, "w", newline="\n") as fh:
        fh.write("start_sec,end_sec\n")
        for s, e in events:
            fh.write(f"{s:.6f},{e:.6f}\n")


def read_events(path):
    """Parse an event CSV, validating order and overlap row by row."""
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        return EventList()
    if lines[0].replace(" ", "") != "start_sec,end_sec":
        raise FormatError(f"{path}:1: expected header 'start_sec,end_sec'")
    prev_end = -math.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            s, e = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
        if not (math.isfinite(s) and math.isfinite(e)):
            raise FormatError(f"{path}:{lineno}: non-finite bound")
        if s >= e:
            raise FormatError(f"{path}:{lineno}: start {s} is not before end {e}")
        if rows and s < rows[-1][0]:
            raise FormatError(f"{path}:{lineno}: events not sorted by start")
        if s < prev_end:
            raise FormatError(f"{path}:{lineno}: event overlaps the previous one")
        rows.append((s, e))
        prev_end = e
    return EventList(rows)


def write_recording(manifest_path, rec, signal_name=None):
    """Write signal, annotations and a manifest next to ``manifest_path``."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    stem = manifest_path.stem
    signal_name = signal_name or f"{stem}.sig"
    write_signal(base / signal_name, rec.signal)
    ann = {}
    for kind, ev in sorted(rec.annotations.items()):
        fname = f"{stem}_{kind}.csv"
        write_events(base / fname, ev)
        ann[kind] = fname
    doc = {"name": rec.name or stem, "signal": signal_name,
           "epochs": [[s, e] for s, e in rec.epochs], "annotations": ann}
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_recording(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}:{exc.lineno}: {exc.msg}") from None
    for key in ("signal", "epochs"):
        if key not in doc:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    base = manifest_path.parent
    sig = read_signal(base / doc["signal"])
    ann = {k: read_events(base / v) for k, v in doc.get("annotations", {}).items()}
    return Recording(sig, [tuple(e) for e in doc["epochs"]], ann,
                     name=doc.get("name", manifest_path.stem))
