"""Laplace mixture decoder and the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .nn import gru_params, gru_step, linear, mlp_forward, mlp_layers

SCALE_EPS = 1e-3
LOG2 = float(np.log(2.0))


@dataclass
class LaplaceMixture:
    """Numpy view of one scene's predicted mixture."""

    mu: np.ndarray  # (M, t_f, 2)
    b: np.ndarray  # (M, t_f, 2)
    mode_probs: np.ndarray  # (M,)

    @property
    def n_modes(self):
        return self.mu.shape[0]

    def to_dict(self):
        return {"mu": self.mu.tolist(), "b": self.b.tolist(), "mode_probs": self.mode_probs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"], float), np.asarray(d["b"], float), np.asarray(d["mode_probs"], float))


def positive_scale(raw):
    """ELU(x) + 1 + eps; strictly above eps for every finite input."""
    # add 1 first so a saturated elu gives exactly eps instead of rounding below it
    return (ad.elu(raw) + 1.0) + SCALE_EPS


def decode(h_i, agg, h0, store, n_modes, prefix="dec"):
    """Decode a ``(B, M, t_f, 2)`` Laplace mixture and ``(B, M)`` mode probabilities.

    ``h_i`` are the successor's per-step encodings ``(B, t_f, d)``; ``agg`` the
    top-K predecessor aggregate ``(B, t_f, K(d+1))`` or None when tracing is
    disabled; ``h0`` the successor's final observed state ``(B, d)`` which
    seeds the decoder GRU. Locations are accumulated step offsets.
    """
    B, t_f, _ = h_i.shape
    x = h_i if agg is None else ad.concat([h_i, agg], axis=-1)
    layers = mlp_layers(store, f"{prefix}.mlp")
    if x.shape[-1] != layers[0][0].shape[0]:
        raise ShapeMismatch(f"decoder input width {x.shape[-1]} vs {layers[0][0].shape[0]}")
    x = mlp_forward(x, layers)
    gp = gru_params(store, f"{prefix}.gru")
    h = h0
    states = []
    for t in range(t_f):
        h = gru_step(x[:, t], h, gp)
        states.append(h)
    hs = ad.stack(states, axis=1)  # (B, t_f, d)
    steps = ad.reshape(linear(hs, store[f"{prefix}.loc.w"], store[f"{prefix}.loc.b"]), (B, t_f, n_modes, 2))
    cum = np.tril(np.ones((t_f, t_f)))
    loc = ad.reshape(ad.matmul(cum, ad.reshape(steps, (B, t_f, n_modes * 2))), (B, t_f, n_modes, 2))
    raw = ad.reshape(linear(hs, store[f"{prefix}.scale.w"], store[f"{prefix}.scale.b"]), (B, t_f, n_modes, 2))
    mu = ad.transpose(loc, (0, 2, 1, 3))
    b = ad.transpose(positive_scale(raw), (0, 2, 1, 3))
    logits = linear(h, store[f"{prefix}.pi.w"], store[f"{prefix}.pi.b"])
    pi = ad.masked_softmax(logits, None, axis=-1)
    return mu, b, pi


def best_mode(mu, y):
    """Mode with the smallest summed per-step L2 error; ties go to the lower index.

    ``mu``: ``(..., M, t_f, 2)``; ``y``: ``(..., t_f, 2)``.
    """
    err = np.sqrt(((np.asarray(mu) - np.asarray(y)[..., None, :, :]) ** 2).sum(-1)).sum(-1)
    return np.argmin(err, axis=-1)


def laplace_nll(mu, b, y):
    """Mean over steps of the summed per-coordinate Laplace NLL.

    ``mu`` and ``b`` are the selected mode ``(..., t_f, 2)``; returns ``(...)``.
    """
    mu, b = ad.as_tensor(mu), ad.as_tensor(b)
    t_f = mu.shape[-2]
    terms = ad.log(b) + LOG2 + ad.tabs(ad.as_tensor(y) - mu) / b
    return terms.sum(axis=(-2, -1)) * (1.0 / t_f)


def soft_targets(mu, y, tau=1.0):
    """softmax(-final displacement / tau) over modes; a constant (no gradient)."""
    mu = np.asarray(mu)
    disp = np.sqrt(((mu[..., -1, :] - np.asarray(y)[..., None, -1, :]) ** 2).sum(-1))
    z = -disp / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cls_loss(target, pi_hat):
    """Cross-entropy ``-sum(target * log pi_hat)`` with pi_hat floored at 1e-12."""
    target = np.asarray(target, dtype=np.float64)
    return -(ad.log(ad.clip_min(ad.as_tensor(pi_hat), 1e-12)) * target).sum(axis=-1)


@dataclass
class LossBundle:
    l_pns: object
    l_cls: object
    l_nll: object
    total: object
    lam: float

    def values(self):
        return {k: float(ad.as_tensor(getattr(self, k)).data) for k in ("l_pns", "l_cls", "l_nll", "total")}


def total_loss(l_pns, l_cls, l_nll, lam=0.5):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    total = ad.as_tensor(l_pns) * lam + l_cls + l_nll
    return LossBundle(l_pns, l_cls, l_nll, total, lam)
