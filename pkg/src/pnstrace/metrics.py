"""Displacement metrics over ranked prediction modes."""

from __future__ import annotations

import numpy as np

from .errors import KExceedsM


def rank_modes(mode_probs):
    """Mode indices by probability descending, ties by index ascending."""
    return np.argsort(-np.asarray(mode_probs), axis=-1, kind="stable")


def _top_k(pred, mode_probs, k):
    pred = np.asarray(pred, dtype=np.float64)
    m = pred.shape[-3]
    if k > m:
        raise KExceedsM(f"K={k} exceeds the {m} predicted modes")
    if mode_probs is None:
        order = np.broadcast_to(np.arange(m), pred.shape[:-3] + (m,))
    else:
        order = rank_modes(mode_probs)
    idx = order[..., :k]
    return np.take_along_axis(pred, idx[..., None, None], axis=-3)


def displacement(pred, gt):
    """Per-mode, per-step L2 error ``(..., M, t_f)``."""
    diff = np.asarray(pred) - np.asarray(gt)[..., None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def made_k(pred, gt, k, mode_probs=None):
    """Minimum over the top-K modes of the mean per-step L2 error."""
    return displacement(_top_k(pred, mode_probs, k), gt).mean(-1).min(-1)


def mfde_k(pred, gt, k, mode_probs=None):
    """Minimum over the top-K modes of the final-step L2 error."""
    return displacement(_top_k(pred, mode_probs, k), gt)[..., -1].min(-1)
