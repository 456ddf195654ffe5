"""scikit-learn style front end over the training and evaluation routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .errors import ShapeMismatch
from .metrics import made_k
from .model import PnSNet, prepare
from .nn import ParamStore
from .scene import Scene
from .train import evaluate, predict_all, train


def check_scenes(X, t_h=None, t_f=None):
    """Validate a scene collection and return it as a list.

    All scenes must share one horizon; ``t_h``/``t_f`` additionally pin it
    (used at prediction time to match the fitted network).
    """
    if isinstance(X, Scene):
        raise TypeError("expected a sequence of Scene objects, got a single Scene")
    scenes = list(X)
    if not scenes:
        raise ValueError("found 0 scenes; at least 1 is required")
    for i, s in enumerate(scenes):
        if not isinstance(s, Scene):
            raise TypeError(f"element {i} is {type(s).__name__}, not Scene")
    horizons = {(s.t_h, s.t_f) for s in scenes}
    if len(horizons) > 1:
        raise ShapeMismatch(f"scenes mix horizons {sorted(horizons)}")
    got = horizons.pop()
    want = (t_h if t_h is not None else got[0], t_f if t_f is not None else got[1])
    if got != want:
        raise ShapeMismatch(f"scenes have (t_h, t_f)={got}, model expects {want}")
    return scenes


class PnSPredictor(BaseEstimator):
    """Multimodal trajectory predictor with optional predecessor tracing.

    ``fit`` takes a list of scenes (each carries its own ground-truth
    future); ``predict`` returns world-frame modes ``(S, M, t_f, 2)`` sorted
    by descending mode probability.
    """

    def __init__(self, hidden=64, k=2, n_modes=20, pt_enabled=True, attention="temporal", lam=0.5,
                 tau=1.0, categorical_pns=False, metric="l2", filter_dmax=None, filter_fov=None, lr=1e-3,
                 epochs=30, batch_size=32, patience=5, val_fraction=0.1, seed=0):
        self.hidden = hidden
        self.k = k
        self.n_modes = n_modes
        self.pt_enabled = pt_enabled
        self.attention = attention
        self.lam = lam
        self.tau = tau
        self.categorical_pns = categorical_pns
        self.metric = metric
        self.filter_dmax = filter_dmax
        self.filter_fov = filter_fov
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def _config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None):
        scenes = check_scenes(X)
        result = train(self._config(), scenes)
        self.net_ = result.net
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.t_h_, self.t_f_ = scenes[0].t_h, scenes[0].t_f
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(f"This {type(self).__name__} instance is not fitted yet; call fit first.")

    def _predict(self, X):
        self._check_fitted()
        scenes = check_scenes(X, self.t_h_, self.t_f_)
        items = [prepare(s, self.net_.cfg) for s in scenes]
        return predict_all(self.net_, items)

    def predict_mixture(self, X):
        """Raw mixture output: ``mu`` (world frame), ``b``, ``pi`` and per-scene ``empty`` flags."""
        return self._predict(X)

    def predict(self, X):
        pred = self._predict(X)
        order = np.argsort(-pred["pi"], axis=1, kind="stable")
        return np.take_along_axis(pred["mu"], order[:, :, None, None], axis=1)

    def score(self, X, y=None, k=5):
        """Negative mADE_k, so that larger is better."""
        pred = self._predict(X)
        gt = np.stack([s.successor_future for s in X])
        k = min(k, pred["mu"].shape[1])
        return -float(made_k(pred["mu"], gt, k, pred["pi"]).mean())

    def evaluate(self, X, ks=(5, 10), truth=None):
        self._check_fitted()
        return evaluate(self.net_, check_scenes(X, self.t_h_, self.t_f_), ks, truth=truth)

    def save(self, path):
        self._check_fitted()
        self.net_.store.save(path, {"config": self.net_.cfg.to_dict(), "t_h": self.t_h_, "t_f": self.t_f_})

    @classmethod
    def load(cls, path):
        values, header = ParamStore.read(path)
        meta = header["meta"]
        cfg = TrainConfig.from_dict(meta["config"])
        est = cls(**{k: getattr(cfg, k) for k in cls._get_param_names()})
        net = PnSNet(cfg, meta["t_f"], rng=np.random.default_rng(0))
        net.store.load_values(values)
        est.net_, est.t_h_, est.t_f_ = net, meta["t_h"], meta["t_f"]
        est.history_, est.best_epoch_ = [], None
        return est
