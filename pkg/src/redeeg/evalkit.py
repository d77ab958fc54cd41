"""By-event evaluation: IoU matching, precision/recall/F1, AF1, Welch's t-test."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .sigio import EventList

__all__ = ["MatchResult", "iou", "iou_matrix", "match_events", "metrics", "af1",
           "evaluate", "aggregate", "welch_ttest", "DEFAULT_IOU_GRID", "DEFAULT_IOU"]

DEFAULT_IOU = 0.2
DEFAULT_IOU_GRID = tuple(np.round(np.arange(1, 20) * 0.05, 2))


@dataclass
class MatchResult:
    """One-to-one pairing of truth and predicted events.

    ``pairs`` holds ``(truth_index, pred_index, iou)`` with ``iou > 0``.
    """

    pairs: list
    n_truth: int
    n_pred: int
    unmatched_truth: list = field(default_factory=list)
    unmatched_pred: list = field(default_factory=list)

    @property
    def ious(self):
        return np.array([p[2] for p in self.pairs], dtype=float)

    @property
    def total_iou(self):
        return float(sum(p[2] for p in self.pairs))


def iou(a, b):
    """Intersection over union of two intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def _as_events(ev):
    return ev if isinstance(ev, EventList) else EventList(ev)


def iou_matrix(truth, pred):
    t, p = _as_events(truth).array, _as_events(pred).array
    if t.size == 0 or p.size == 0:
        return np.zeros((t.shape[0], p.shape[0]))
    inter = (np.minimum(t[:, None, 1], p[None, :, 1])
             - np.maximum(t[:, None, 0], p[None, :, 0]))
    inter = np.maximum(inter, 0.0)
    union = (np.maximum(t[:, None, 1], p[None, :, 1])
             - np.minimum(t[:, None, 0], p[None, :, 0]))
    return np.where(inter > 0, inter / union, 0.0)


def _components(overlap):
    """Connected components of the bipartite overlap graph."""
    nt, npred = overlap.shape
    parent = list(range(nt + npred))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(overlap)):
        ri, rj = find(i), find(nt + j)
        if ri != rj:
            parent[ri] = rj
    groups = {}
    for i in range(nt):
        groups.setdefault(find(i), ([], []))[0].append(i)
    for j in range(npred):
        groups.setdefault(find(nt + j), ([], []))[1].append(j)
    return [g for g in groups.values() if g[0] and g[1]]


def match_events(truth, pred):
    """Maximum total-IoU one-to-one matching over positive-IoU pairs."""
    truth, pred = _as_events(truth), _as_events(pred)
    M = iou_matrix(truth, pred)
    pairs = []
    for ti, pj in _components(M > 0):
        sub = M[np.ix_(ti, pj)]
        rows, cols = linear_sum_assignment(sub, maximize=True)
        for r, c in zip(rows, cols):
            if sub[r, c] > 0:
                pairs.append((ti[r], pj[c], float(sub[r, c])))
    pairs.sort()
    mt = {p[0] for p in pairs}
    mp = {p[1] for p in pairs}
    return MatchResult(pairs, len(truth), len(pred),
                       [i for i in range(len(truth)) if i not in mt],
                       [j for j in range(len(pred)) if j not in mp])


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return recall, precision, f1


def metrics(match, iou_threshold=DEFAULT_IOU):
    """TP/FP/FN and recall, precision, F1 at one IoU threshold."""
    if not 0 <= iou_threshold <= 1:
        raise ValueError(f"IoU threshold must be in [0, 1], got {iou_threshold}")
    tp = int(sum(1 for p in match.pairs if p[2] >= iou_threshold))
    fn = match.n_truth - tp
    fp = match.n_pred - tp
    recall, precision, f1 = _prf(tp, fp, fn)
    return {"tp": tp, "fp": fp, "fn": fn, "recall": recall, "precision": precision, "f1": f1}


def af1(truth, pred, iou_grid=DEFAULT_IOU_GRID, match=None):
    """F1-vs-IoU-threshold curve on one fixed matching, and its mean (AF1)."""
    grid = np.asarray(iou_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
        raise ValueError("IoU grid must be non-empty, increasing and within [0, 1]")
    if match is None:
        match = match_events(truth, pred)
    curve = np.array([metrics(match, float(t))["f1"] for t in grid])
    return curve, float(curve.mean())


def evaluate(truth, pred, iou_threshold=DEFAULT_IOU, iou_grid=DEFAULT_IOU_GRID):
    """Full report for one recording."""
    match = match_events(truth, pred)
    rep = metrics(match, iou_threshold)
    curve, a = af1(truth, pred, iou_grid, match=match)
    rep.update({"iou_threshold": float(iou_threshold), "af1": a,
                "iou_grid": [float(t) for t in iou_grid],
                "f1_curve": [float(v) for v in curve],
                "n_truth": match.n_truth, "n_pred": match.n_pred,
                "tp_candidate_ious": [p[2] for p in match.pairs]})
    return rep


_AVERAGED = ("recall", "precision", "f1", "af1")


def aggregate(reports):
    """Unweighted mean over recordings of each scalar metric and the F1 curve."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one recording")
    out = {k: float(np.mean([r[k] for r in reports])) for k in _AVERAGED if k in reports[0]}
    if "f1_curve" in reports[0]:
        out["f1_curve"] = [float(v) for v in np.mean([r["f1_curve"] for r in reports], axis=0)]
        out["iou_grid"] = reports[0]["iou_grid"]
    for k in ("tp", "fp", "fn"):
        if k in reports[0]:
            out[k] = int(sum(r[k] for r in reports))
    out["n_recordings"] = len(reports)
    return out


def welch_ttest(a, b):
    """Welch's unequal-variance t-test; returns ``(t, dof, two-sided p)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 or vb == 0:
        raise ValueError("degenerate sample: zero variance")
    sa, sb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), dof)
    return float(t), float(dof), float(min(p, 1.0))
