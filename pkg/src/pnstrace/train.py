"""Optimisation, evaluation and the ablation runner."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import Divergence
from .metrics import made_k, mfde_k
from .model import PnSNet, collate, prepare

log = logging.getLogger(__name__)


# -- optimiser -------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of a dict of arrays."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# -- training --------------------------------------------------------------

LOSS_KEYS = ("l_pns", "l_cls", "l_nll", "total")


@dataclass
class TrainResult:
    net: PnSNet
    history: list  # one dict per epoch
    best_epoch: int

    def loss_curve_csv(self):
        rows = ["epoch,l_pns,l_cls,l_nll,total"]
        for h in self.history:
            rows.append(",".join([str(h["epoch"])] + [repr(h[k]) for k in LOSS_KEYS]))
        return "\n".join(rows) + "\n"


def _batches(items, order, batch_size):
    for i in range(0, len(order), batch_size):
        yield collate([items[j] for j in order[i:i + batch_size]])


def predict_all(net, items, batch_size=256):
    """Stacked world-frame predictions for prepared scenes."""
    outs = [net.predict_arrays(b) for b in _batches(items, np.arange(len(items)), batch_size)]
    res = {k: np.concatenate([o[k] for o in outs]) for k in ("mu", "b", "pi", "empty")}
    if "probs" in outs[0]:
        # candidate counts differ between batches
        res["probs"] = [row for o in outs for row in o["probs"]]
    return res


def _val_made(net, items, k):
    pred = predict_all(net, items)
    gt = np.stack([it["future"] + it["offset"] for it in items])
    return float(made_k(pred["mu"], gt, k, pred["pi"]).mean())


def train(cfg, scenes, val_scenes=None):
    """Fit a fresh network with Adam on the lam-weighted objective.

    The step size is ``lr * lr_decay ** (epoch - 1)``. A validation split of ``cfg.val_fraction`` is held out unless
    ``val_scenes`` is given; the parameters with the lowest validation mADE
    are kept and training stops after ``cfg.patience`` epochs without
    improvement.
    """
    if not scenes:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    scenes = list(scenes)
    if val_scenes is None and cfg.val_fraction > 0 and len(scenes) >= 10:
        perm = rng.permutation(len(scenes))
        n_val = max(1, int(round(cfg.val_fraction * len(scenes))))
        val_scenes = [scenes[i] for i in np.sort(perm[:n_val])]
        scenes = [scenes[i] for i in np.sort(perm[n_val:])]
    items = [prepare(s, cfg) for s in scenes]
    val_items = [prepare(s, cfg) for s in val_scenes] if val_scenes else []
    net = PnSNet(cfg, scenes[0].t_f, rng=np.random.default_rng(cfg.seed))
    store = net.store
    state = AdamState()
    val_k = min(5, cfg.n_modes)
    history, best, best_epoch, best_values, stale = [], np.inf, 0, store.copy_values(), 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        for batch in _batches(items, rng.permutation(len(items)), cfg.batch_size):
            store.zero_grad()
            try:
                bundle, _ = net.loss(batch)
            except FloatingPointError as exc:
                raise Divergence(f"non-finite activations at epoch {epoch}: {exc}") from exc
            vals = bundle.values()
            if not np.isfinite(vals["total"]):
                raise Divergence(f"non-finite loss at epoch {epoch}: {vals}")
            bundle.total.backward()
            adam_step(store.values(), store.grads(), state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            for k in LOSS_KEYS:
                sums[k] += vals[k] * batch.size
        rec = {"epoch": epoch, **{k: sums[k] / len(items) for k in LOSS_KEYS}}
        if val_items:
            rec["val_made"] = _val_made(net, val_items, val_k)
            score = rec["val_made"]
        else:
            score = rec["total"]
        history.append(rec)
        log.info("epoch %d %s", epoch, rec)
        if score < best:
            best, best_epoch, best_values, stale = score, epoch, store.copy_values(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    store.load_values(best_values)
    return TrainResult(net, history, best_epoch)


# -- evaluation ------------------------------------------------------------


@dataclass
class EvalReport:
    n_scenes: int
    made: dict  # K -> metres
    mfde: dict  # K -> metres
    pred_accuracy: float | None
    truth_accuracy: float | None
    empty_rate: float
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self):
        return {
            "n_scenes": self.n_scenes,
            "made": {str(k): v for k, v in self.made.items()},
            "mfde": {str(k): v for k, v in self.mfde.items()},
            "pred_accuracy": self.pred_accuracy,
            "truth_accuracy": self.truth_accuracy,
            "empty_rate": self.empty_rate,
        }

    def to_text(self):
        lines = [f"{'K':>4} {'mADE':>9} {'mFDE':>9}"]
        for k in self.made:
            lines.append(f"{k:>4} {self.made[k]:9.4f} {self.mfde[k]:9.4f}")
        fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
        lines.append(f"scenes {self.n_scenes}  predecessor-acc {fmt(self.pred_accuracy)}  "
                     f"truth-acc {fmt(self.truth_accuracy)}  empty-rate {self.empty_rate:.4f}")
        return "\n".join(lines) + "\n"


def _argmax_accuracy(probs, targets):
    hits = total = 0
    for p, tgt in zip(probs, targets):
        valid = tgt >= 0
        if p is None or not valid.any():
            continue
        n = len(p[0]) if len(p) else 0
        pred = np.argmax(np.asarray(p)[:, :n], axis=1)
        hits += int((pred[valid] == tgt[valid]).sum())
        total += int(valid.sum())
    return hits / total if total else None


def evaluate(net, scenes, ks=(5, 10), truth=None, predictions=None):
    """mADE_K / mFDE_K for each K plus predecessor top-1 accuracy.

    Accuracy compares the argmax of the predicted distribution with the
    nearest-trace labels; ``truth`` (per-scene arrays of planted predecessor
    indices, -1 for none) adds an accuracy against those. ``predictions``
    injects precomputed world-frame ``(S, M, t_f, 2)`` trajectories with
    mode probabilities, bypassing the network.
    """
    start = time.perf_counter()
    cfg = net.cfg if net is not None else None
    items = [prepare(s, cfg) for s in scenes] if cfg is not None else None
    gt = np.stack([s.successor_future for s in scenes])
    if predictions is None:
        pred = predict_all(net, items)
        mu, pi = pred["mu"], pred["pi"]
        probs = pred.get("probs")
        empty = pred["empty"]
    else:
        mu, pi = predictions
        probs, empty = None, np.zeros(len(scenes), dtype=bool)
    made = {k: float(made_k(mu, gt, k, pi).mean()) for k in ks}
    mfde = {k: float(mfde_k(mu, gt, k, pi).mean()) for k in ks}
    pred_acc = truth_acc = None
    if probs is not None:
        label_idx = []
        for it in items:
            lab = it["labels"]
            label_idx.append(np.where(lab.any(axis=1), lab.argmax(axis=1), -1))
        pred_acc = _argmax_accuracy(probs, label_idx)
        if truth is not None:
            truth_acc = _argmax_accuracy(probs, [np.asarray(t) for t in truth])
    return EvalReport(len(scenes), made, mfde, pred_acc, truth_acc, float(np.mean(empty)),
                      time.perf_counter() - start)


# -- ablations -------------------------------------------------------------

AXES = {
    "pt": ("pt_enabled", (True, False)),
    "k": ("k", (1, 2, 3)),
    "metric": ("metric", ("l1", "l2")),
    "lambda": ("lam", (0.1, 0.5, 1.0)),
    "filter": ("filter", (False, True)),
}


def _variant(cfg, field_name, value):
    if field_name == "filter":
        return cfg.replace(filter_dmax=20.0 if value else None, filter_fov=90.0 if value else None)
    return cfg.replace(**{field_name: value})


def ablation_run(base, axes, train_scenes, test_scenes, seeds=(0, 1, 2), ks=(5, 10), truth=None):
    """Train every variant along each axis under identical seeds and budget.

    Returns rows ``{"axis", "value", "made", "mfde", "pred_accuracy",
    "per_seed"}`` with metrics averaged over seeds.
    """
    rows = []
    for axis in axes:
        field_name, values = AXES[axis]
        for value in values:
            cfg = _variant(base, field_name, value)
            reports = []
            for seed in seeds:
                res = train(cfg.replace(seed=seed), train_scenes)
                reports.append(evaluate(res.net, test_scenes, ks, truth=truth))
            accs = [r.pred_accuracy for r in reports if r.pred_accuracy is not None]
            rows.append({
                "axis": axis,
                "value": value,
                "made": {k: float(np.mean([r.made[k] for r in reports])) for k in ks},
                "mfde": {k: float(np.mean([r.mfde[k] for r in reports])) for k in ks},
                "pred_accuracy": float(np.mean(accs)) if accs else None,
                "per_seed": [r.to_dict() for r in reports],
            })
    return rows


def format_ablation(rows, ks=(5, 10)):
    head = f"{'axis':<8}{'value':>8}" + "".join(f"{'mADE_' + str(k):>10}{'mFDE_' + str(k):>10}" for k in ks)
    lines = [head]
    for r in rows:
        v = {True: "on", False: "off"}.get(r["value"], r["value"]) if isinstance(r["value"], bool) else r["value"]
        lines.append(f"{r['axis']:<8}{str(v):>8}" + "".join(f"{r['made'][k]:10.4f}{r['mfde'][k]:10.4f}" for k in ks))
    return "\n".join(lines) + "\n"
