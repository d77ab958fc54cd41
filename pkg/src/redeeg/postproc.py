"""Event-specific postprocessing of predicted events."""
from __future__ import annotations

import numpy as np

from .sigio import EventList, lowpass

__all__ = ["spindle_rules", "kcomplex_rules", "merge_close", "drop_shorter", "postprocess",
           "negative_peaks"]

# durations are compared with this slack so re-applying a rule to its own
# output is a no-op despite float rounding of cropped bounds
_TOL = 1e-9

SPINDLE_MIN_GAP = 0.3
SPINDLE_MIN_DUR = 0.3
SPINDLE_MAX_DUR = 5.0
SPINDLE_CROP_DUR = 3.0
KC_MIN_DUR = 0.3
KC_LOWPASS_HZ = 4.0
KC_START_GUARD = 0.05
KC_END_GUARD = 0.2
KC_CONTEXT = 0.5


def merge_close(events, min_gap):
    """Merge consecutive events separated by less than ``min_gap`` seconds."""
    out = []
    for s, e in events:
        if out and s - out[-1][1] < min_gap:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return EventList(out)


def drop_shorter(events, min_dur):
    return EventList([(s, e) for s, e in events if e - s >= min_dur - _TOL])


def spindle_rules(events):
    """Merge gaps < 0.3 s, drop < 0.3 s and > 5 s, crop (3, 5] s to the central 3 s."""
    ev = merge_close(events, SPINDLE_MIN_GAP)
    ev = drop_shorter(ev, SPINDLE_MIN_DUR)
    out = []
    for s, e in ev:
        d = e - s
        if d > SPINDLE_MAX_DUR + _TOL:
            continue
        if d > SPINDLE_CROP_DUR + _TOL:
            mid = 0.5 * (s + e)
            s, e = mid - SPINDLE_CROP_DUR / 2, mid + SPINDLE_CROP_DUR / 2
        out.append((s, e))
    return EventList(out)


def negative_peaks(x):
    """Indices of strict local minima with negative value."""
    x = np.asarray(x)
    if x.size < 3:
        return np.zeros(0, dtype=int)
    core = x[1:-1]
    idx = np.flatnonzero((core < x[:-2]) & (core < x[2:]) & (core < 0)) + 1
    return idx


def _split_points(filtered, fs, t0, t1, offset):
    """Split times for one event given its low-passed samples.

    ``filtered[k]`` is the value at time ``offset + k/fs``.
    """
    peaks = negative_peaks(filtered)
    times = offset + peaks / fs
    keep = (times - t0 >= KC_START_GUARD) & (t1 - times >= KC_END_GUARD)
    peaks, times = peaks[keep], times[keep]
    if peaks.size < 2:
        return []
    reps = []
    cluster = [0]
    for k in range(1, peaks.size):
        between = filtered[peaks[cluster[-1]]:peaks[k] + 1]
        if np.any(between > 0):
            reps.append(float(np.mean(times[cluster])))
            cluster = [k]
        else:
            cluster.append(k)
    reps.append(float(np.mean(times[cluster])))
    return [0.5 * (a + b) for a, b in zip(reps[:-1], reps[1:])]


def kcomplex_rules(events, signal):
    """Drop < 0.3 s, then split predictions holding several K-complex troughs.

    ``signal`` is the (preprocessed) recording the events refer to.
    """
    fs = signal.fs
    x = signal.samples
    n = x.size
    out = []
    for s, e in drop_shorter(events, KC_MIN_DUR):
        c0 = max(int(np.floor((s - KC_CONTEXT) * fs)), 0)
        c1 = min(int(np.ceil((e + KC_CONTEXT) * fs)) + 1, n)
        if c1 - c0 < 4:
            out.append((s, e))
            continue
        filt = lowpass(x[c0:c1], KC_LOWPASS_HZ, fs)
        i0 = max(int(np.ceil(s * fs - 1e-6)), c0)
        i1 = min(int(np.floor(e * fs + 1e-6)) + 1, c1)
        seg = filt[i0 - c0:i1 - c0]
        cuts = _split_points(seg, fs, s, e, i0 / fs)
        bounds = [s] + cuts + [e]
        out.extend(zip(bounds[:-1], bounds[1:]))
    return EventList(out)


def postprocess(events, event_type, signal=None):
    if event_type == "spindle":
        return spindle_rules(events)
    if event_type == "kcomplex":
        if signal is None:
            raise ValueError("kcomplex postprocessing needs the signal")
        return kcomplex_rules(events, signal)
    raise ValueError(f"unknown event type {event_type!r}; use 'spindle' or 'kcomplex'")
