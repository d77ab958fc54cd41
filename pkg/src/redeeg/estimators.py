"""scikit-learn style wrappers around the preprocessing, CWT and detector."""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import detector, evalkit
from .cwt import CwtConfig, cwt
from .redmodel import ModelConfig, REDNetwork
from .sigio import Recording, global_std, normalize, preprocess
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

__all__ = ["Preprocessor", "MorletCWT", "REDDetector", "check_recordings"]

EVENT_TYPES = ("spindle", "kcomplex")


def check_recordings(X, event_type=None, name="X"):
    """Validate a non-empty sequence of :class:`Recording` objects.

    When ``event_type`` is given, every recording must carry annotations
    of that type.
    """
    if isinstance(X, Recording):
        X = [X]
    try:
        X = list(X)
    except TypeError:
        raise TypeError(f"{name} must be a sequence of Recording objects") from None
    if not X:
        raise ValueError(f"{name} is empty")
    for i, r in enumerate(X):
        if not isinstance(r, Recording):
            raise TypeError(f"{name}[{i}] is {type(r).__name__}, expected Recording")
        if event_type is not None and event_type not in r.annotations:
            raise ValueError(f"{name}[{i}] ({r.name}) has no {event_type!r} annotations")
    return X


def _check_event_type(event_type):
    if event_type not in EVENT_TYPES:
        raise ValueError(f"event_type must be one of {EVENT_TYPES}, got {event_type!r}")


class Preprocessor(BaseEstimator, TransformerMixin):
    """Band-pass, resample and normalize recordings by a corpus-wide std.

    ``fit`` estimates the standard deviation of the filtered, resampled
    concatenation of the given recordings; pass every non-test recording.

    Attributes
    ----------
    std_ : float
    """

    def __init__(self, lo=0.3, hi=35.0, target_fs=200.0, clip=10.0):
        self.lo = lo
        self.hi = hi
        self.target_fs = target_fs
        self.clip = clip

    def _filtered(self, rec):
        return preprocess(rec.signal, None, self.lo, self.hi, self.target_fs)

    def fit(self, X, y=None):
        X = check_recordings(X)
        self.std_ = global_std([self._filtered(r) for r in X])
        return self

    def transform(self, X):
        check_is_fitted(self, "std_")
        out = []
        for r in check_recordings(X):
            sig = normalize(self._filtered(r), self.std_, self.clip)
            out.append(Recording(sig, r.epochs, dict(r.annotations), r.name))
        return out


class MorletCWT(BaseEstimator, TransformerMixin):
    """Complex Morlet scalogram of border-padded segments (rows of ``X``).

    ``transform`` returns a complex array ``(n_segments, n_scales, n_out)``
    with ``n_out = n_samples - 2 * border``.
    """

    def __init__(self, fs=200.0, f_min=0.5, f_max=30.0, n_scales=32, beta=0.5, eta=1.5,
                 border=1000, method="fft"):
        self.fs = fs
        self.f_min = f_min
        self.f_max = f_max
        self.n_scales = n_scales
        self.beta = beta
        self.eta = eta
        self.border = border
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.config_ = CwtConfig(self.f_min, self.f_max, self.n_scales, self.beta, self.eta,
                                 self.border)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        out = []
        for row in X:
            spec = cwt(row, self.fs, self.config_, method=self.method)
            out.append(spec.real + 1j * spec.imag)
        return np.stack(out)


class REDDetector(BaseEstimator):
    """Train a RED network and detect events in whole recordings.

    Parameters
    ----------
    event_type : {"spindle", "kcomplex"}
    model_config : dict, optional
        :class:`~redeeg.redmodel.ModelConfig` fields; defaults otherwise.
    train_config : dict, optional
        :class:`~redeeg.trainer.TrainConfig` fields.
    threshold : float, optional
        Fixed output threshold.  When None it is tuned after training.
    tune_on : {"all", "val", "train"}
        Which recordings the threshold search scores.
    preprocess : bool
        Run :class:`Preprocessor` on every input.  Disable when recordings
        are already filtered and normalized.
    seed : int
        Weight initialization seed.

    Attributes
    ----------
    network_ : REDNetwork
    preprocessor_ : Preprocessor or None
    threshold_ : float
    tuning_scores_ : dict
    train_result_ : TrainResult
    """

    def __init__(self, event_type="spindle", model_config=None, train_config=None,
                 threshold=None, tune_on="all", preprocess=True, seed=0):
        self.event_type = event_type
        self.model_config = model_config
        self.train_config = train_config
        self.threshold = threshold
        self.tune_on = tune_on
        self.preprocess = preprocess
        self.seed = seed

    def _prep(self, X):
        if self.preprocessor_ is None:
            return list(X)
        return self.preprocessor_.transform(X)

    def fit(self, X, y=None, X_val=None, log_path=None):
        """Train on ``X`` with early stopping on ``X_val``, then tune the threshold."""
        _check_event_type(self.event_type)
        if self.tune_on not in ("val", "train", "all"):
            raise ValueError(f"tune_on must be 'val', 'train' or 'all', got {self.tune_on!r}")
        X = check_recordings(X, self.event_type)
        if X_val is None:
            raise ValueError("REDDetector.fit needs validation recordings (X_val)")
        X_val = check_recordings(X_val, self.event_type, "X_val")
        if self.preprocess:
            self.preprocessor_ = Preprocessor().fit(X + X_val)
        else:
            self.preprocessor_ = None
        tr, va = self._prep(X), self._prep(X_val)
        mcfg = ModelConfig.from_dict(dict(self.model_config or {}))
        tcfg = TrainConfig.from_dict(dict(self.train_config or {}))
        self.network_ = REDNetwork(mcfg, seed=self.seed)
        self.train_result_ = train(self.network_, tr, va, self.event_type, tcfg, log_path)
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
            self.tuning_scores_ = {}
        else:
            tune_set = {"val": va, "train": tr, "all": tr + va}[self.tune_on]
            self.threshold_, self.tuning_scores_ = self._tune(tune_set)
        return self

    def _coarse(self, recs):
        cfg = self.network_.config
        return [detector.predict_recording(self.network_, r.signal.samples, cfg.T, cfg.border)
                for r in recs]

    def _tune(self, recs):
        probs = self._coarse(recs)
        return detector.tune_threshold(probs, [r.signal for r in recs],
                                       [r.annotations[self.event_type] for r in recs],
                                       self.event_type)

    def tune(self, X):
        """Re-tune the output threshold on annotated recordings ``X``."""
        check_is_fitted(self, "network_")
        X = check_recordings(X, self.event_type)
        self.threshold_, self.tuning_scores_ = self._tune(self._prep(X))
        return self

    def predict_proba(self, X):
        """Coarse class-1 probabilities, one array per recording (8 samples per step)."""
        check_is_fitted(self, "network_")
        return self._coarse(self._prep(check_recordings(X)))

    def predict(self, X, threshold=None):
        """Postprocessed :class:`EventList` per recording."""
        check_is_fitted(self, "network_")
        mu = self.threshold_ if threshold is None else float(threshold)
        recs = self._prep(check_recordings(X))
        return [detector.detect_events(p, mu, r.signal, self.event_type)
                for p, r in zip(self._coarse(recs), recs)]

    def score(self, X, y=None, iou_threshold=evalkit.DEFAULT_IOU):
        """Mean by-event F1 at ``iou_threshold`` over recordings."""
        X = check_recordings(X, self.event_type)
        preds = self.predict(X)
        return float(np.mean([
            evalkit.metrics(evalkit.match_events(r.annotations[self.event_type], p),
                            iou_threshold)["f1"] for r, p in zip(X, preds)]))

    # -- persistence ------------------------------------------------------
    def save(self, prefix):
        check_is_fitted(self, "network_")
        meta = {"event_type": self.event_type, "threshold": self.threshold_,
                "global_std": None if self.preprocessor_ is None else self.preprocessor_.std_,
                "train_config": TrainConfig.from_dict(dict(self.train_config or {})).to_dict(),
                "seed": self.seed}
        return self.network_.save(prefix, meta)

    @classmethod
    def load(cls, prefix):
        net, meta = REDNetwork.load(prefix)
        est = cls(event_type=meta["event_type"], model_config=net.config.to_dict(),
                  train_config=meta.get("train_config"), preprocess=meta["global_std"] is not None,
                  seed=meta.get("seed", 0))
        est.network_ = net
        est.threshold_ = meta["threshold"]
        est.tuning_scores_ = {}
        if meta["global_std"] is None:
            est.preprocessor_ = None
        else:
            est.preprocessor_ = Preprocessor()
            est.preprocessor_.std_ = float(meta["global_std"])
        return est
