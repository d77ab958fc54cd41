"""Whole-recording inference: stitched segment predictions, thresholding, tuning."""
from __future__ import annotations

import numpy as np

from . import evalkit, postproc
from .redmodel import DOWNSAMPLING
from .sigio import mask_to_events
from .trainer import extract_segment

__all__ = ["segment_offsets", "stitch_owners", "predict_recording", "upsample_probs",
           "threshold_events", "detect_events", "threshold_grid", "tune_threshold"]


def segment_offsets(n_samples, T):
    """Stride-T/2 segment starts; a final segment is right-aligned if needed."""
    if n_samples < T:
        raise ValueError(f"recording of {n_samples} samples is shorter than one segment ({T})")
    n = (n_samples // DOWNSAMPLING) * DOWNSAMPLING
    half = T // 2
    offsets = list(range(0, n - T + 1, half))
    if offsets[-1] + T < n:
        offsets.append(n - T)
    return offsets


def stitch_owners(offsets, T, n_coarse):
    """Segment index owning each coarse step (central halves; edges from outer halves)."""
    Tc = T // DOWNSAMPLING
    q = Tc // 4
    owner = np.full(n_coarse, -1, dtype=int)
    for k, off in enumerate(offsets):
        c0 = off // DOWNSAMPLING
        lo = c0 if k == 0 else c0 + q
        hi = c0 + Tc if k == len(offsets) - 1 else c0 + Tc - q
        owner[lo:hi] = k  # later segments take overlapping steps
    return owner


def predict_recording(segment_fn, samples, T, border=0, batch_size=32):
    """Coarse class-1 probabilities over the whole recording.

    ``segment_fn`` maps a batch ``(B, T + 2*border)`` to ``(B, T/8)``
    probabilities; a :class:`~redeeg.redmodel.REDNetwork` can be passed
    directly.  Length of the result is ``len(samples) // 8``.
    """
    if hasattr(segment_fn, "predict_proba"):
        segment_fn = segment_fn.predict_proba
    samples = np.asarray(samples, dtype=np.float64)
    offsets = segment_offsets(samples.size, T)
    n_coarse = samples.size // DOWNSAMPLING
    owner = stitch_owners(offsets, T, n_coarse)
    if np.any(owner < 0):
        raise AssertionError("stitching left coarse steps uncovered")
    Tc = T // DOWNSAMPLING
    out = np.empty(n_coarse)
    for b0 in range(0, len(offsets), batch_size):
        chunk = offsets[b0:b0 + batch_size]
        X = np.stack([extract_segment(samples, off, T, border) for off in chunk])
        P = np.asarray(segment_fn(X))
        if P.shape != (len(chunk), Tc):
            raise ValueError(f"segment predictor returned {P.shape}, expected {(len(chunk), Tc)}")
        for j, off in enumerate(chunk):
            k = b0 + j
            c0 = off // DOWNSAMPLING
            steps = np.flatnonzero(owner[c0:c0 + Tc] == k)
            out[c0 + steps] = P[j, steps]
    return out


def upsample_probs(probs, factor=DOWNSAMPLING):
    """Piecewise-linear upsampling whose first and last samples equal the endpoints."""
    probs = np.asarray(probs, dtype=np.float64)
    L = probs.size
    if L < 2:
        raise ValueError("need at least two coarse values to interpolate")
    pos = np.linspace(0.0, L - 1.0, factor * L)
    return np.interp(pos, np.arange(L), probs)


def threshold_events(probs, threshold, fs):
    """Maximal runs with ``p > threshold`` as events in seconds."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return mask_to_events(np.asarray(probs) > threshold, fs)


def detect_events(coarse_probs, threshold, signal, event_type=None):
    """Upsample, threshold and (optionally) postprocess one recording."""
    fine = upsample_probs(coarse_probs)
    events = threshold_events(fine, threshold, signal.fs)
    if event_type is not None:
        events = postproc.postprocess(events, event_type, signal)
    return events


def threshold_grid(step=0.02):
    n = int(round(1.0 / step))
    return np.round(np.arange(1, n) * step, 10)


def tune_threshold(coarse_probs, signals, truths, event_type, grid=None,
                   iou_grid=evalkit.DEFAULT_IOU_GRID):
    """Grid-search the output threshold maximizing mean AF1 over recordings.

    Ties go to the candidate closest to 0.5.  Returns ``(best, scores)``
    where ``scores`` maps each candidate to its mean AF1.
    """
    grid = threshold_grid() if grid is None else np.asarray(grid)
    if not len(coarse_probs):
        raise ValueError("need at least one annotated recording")
    fines = [upsample_probs(p) for p in coarse_probs]
    scores = {}
    for mu in grid:
        vals = []
        for fine, sig, truth in zip(fines, signals, truths):
            ev = threshold_events(fine, float(mu), sig.fs)
            ev = postproc.postprocess(ev, event_type, sig)
            vals.append(evalkit.af1(truth, ev, iou_grid)[1])
        scores[float(mu)] = float(np.mean(vals))
    top = max(scores.values())
    best = min((mu for mu, v in scores.items() if v >= top - 1e-12),
               key=lambda mu: (abs(mu - 0.5), mu))
    return best, scores
