"""Predecessor tracing: which neighbours does the successor follow?

Per future step the model scores every candidate neighbour with a
cross-attention + MLP head and normalises the scores into a distribution.
During training the target distribution is a one-hot label of the neighbour
whose observed trace lies closest to the successor's future position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import gru_params, gru_step, mlp_forward, mlp_layers, scaled_dot_attention

METRICS = ("l1", "l2")


# -- ground-truth labels -----------------------------------------------------


def _point_distance(diff, metric):
    if metric == "l2":
        return np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])
    if metric == "l1":
        return np.abs(diff[..., 0]) + np.abs(diff[..., 1])
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def trace_distances(successor_future, obs_positions, obs_presence, metric="l2"):
    """Distance from each future successor position to each neighbour's observed trace.

    Returns a ``(t_f, N)`` array; the trace distance is the minimum over the
    neighbour's present observed steps (``inf`` if it has none).
    """
    fut = np.asarray(successor_future, dtype=np.float64)
    diff = fut[:, None, None, :] - np.asarray(obs_positions, dtype=np.float64)[None]
    d = _point_distance(diff, metric)
    d = np.where(np.asarray(obs_presence, dtype=bool)[None], d, np.inf)
    return d.min(axis=2)


def label_predecessors(successor_future, obs_positions, obs_presence, candidate_mask, metric="l2"):
    """One-hot ``(t_f, N)`` labels of the nearest-trace candidate per future step.

    Ties go to the lowest agent index. Rows are all zero when no candidate
    exists. Also returns the labelled index per step (-1 if none) and its
    trace distance.
    """
    dist = trace_distances(successor_future, obs_positions, obs_presence, metric)
    cand = np.asarray(candidate_mask, dtype=bool)
    dist = np.where(cand[None, :], dist, np.inf)
    t_f, n = dist.shape
    labels = np.zeros((t_f, n))
    if not cand.any():
        return labels, np.full(t_f, -1), np.full(t_f, np.nan)
    idx = np.argmin(dist, axis=1)
    labels[np.arange(t_f), idx] = 1.0
    return labels, idx, dist[np.arange(t_f), idx]


def label_scene(scene, metric="l2", candidate_mask=None):
    if candidate_mask is None:
        candidate_mask = scene.neighbor_mask()
    pos, pres = scene.observed
    return label_predecessors(scene.successor_future, pos, pres, candidate_mask, metric)


# -- candidate thresholding ----------------------------------------------------


def last_observed(scene):
    """Index of each agent's last present observed step (-1 if never observed)."""
    _, pres = scene.observed
    t_h = scene.t_h
    rev = pres[:, ::-1]
    last = t_h - 1 - np.argmax(rev, axis=1)
    return np.where(pres.any(axis=1), last, -1)


def candidate_filter(scene, d_max=20.0, fov=90.0, base_mask=None):
    """Keep candidates within ``d_max`` metres and ``+-fov`` degrees of the successor heading.

    Heading comes from the successor's last two observed positions; with zero
    motion the angular constraint is dropped.
    """
    mask = scene.neighbor_mask() if base_mask is None else np.array(base_mask, dtype=bool)
    i, t_h = scene.target_index, scene.t_h
    here = scene.positions[i, t_h - 1]
    heading = here - scene.positions[i, t_h - 2]
    moving = float(np.hypot(*heading)) > 0.0
    last = last_observed(scene)
    for a in np.flatnonzero(mask):
        rel = scene.positions[a, last[a]] - here
        dist = float(np.hypot(*rel))
        if dist > d_max:
            mask[a] = False
            continue
        if moving and dist > 0.0:
            cross = heading[0] * rel[1] - heading[1] * rel[0]
            dot = heading[0] * rel[0] + heading[1] * rel[1]
            if abs(np.degrees(np.arctan2(cross, dot))) > fov:
                mask[a] = False
    return mask


# -- differentiable tracing head ---------------------------------------------


def relation_encodings(h_final, t_f, store, prefix="rel"):
    """Unroll a dedicated GRU ``t_f`` steps from each agent's final observed state.

    The GRU input is a learned constant, so the result depends only on the
    observation window. ``h_final`` has shape ``(..., d)``; the output
    ``(..., t_f, d)``.
    """
    params = gru_params(store, f"{prefix}.gru")
    c = store[f"{prefix}.input"]
    h = h_final
    out = []
    for _ in range(t_f):
        h = gru_step(c, h, params)
        out.append(h)
    return ad.stack(out, axis=-2)


def influence_logit(h_i, h_p, s_ip, layers):
    """MLP over ``[h_i, h_p, s_ip]`` returning one unbounded score per pair."""
    x = ad.concat([h_i, h_p, s_ip], axis=-1)
    return mlp_forward(x, layers)[..., 0]


def influence_logits(rel_i, rel, succ_seq, store, prefix="trace", attention="temporal"):
    """Scores ``(B, t_f, N)`` for every (step, candidate) pair.

    ``rel_i``: successor relation encodings ``(B, t_f, d)``; ``rel``: all
    agents ``(B, N, t_f, d)``; ``succ_seq``: the successor's observed hidden
    sequence ``(B, t_h, d)``. Queries come from the candidate encoding; keys
    and values from the successor, either its whole observed sequence
    (``temporal``) or its encoding at the same step (``single``).
    """
    B, N, t_f, d = rel.shape
    Wq, Wk, Wv = (store[f"{prefix}.W{n}"] for n in "qkv")
    q = ad.matmul(rel, Wq)
    if attention == "temporal":
        k = ad.matmul(succ_seq, Wk)
        v = ad.matmul(succ_seq, Wv)
        q2 = ad.reshape(q, (B, N * t_f, q.shape[-1]))
        s = ad.reshape(scaled_dot_attention(q2, k, v), (B, N, t_f, v.shape[-1]))
    elif attention == "single":
        k = ad.reshape(ad.matmul(rel_i, Wk), (B, 1, t_f, 1, Wk.shape[1]))
        v = ad.reshape(ad.matmul(rel_i, Wv), (B, 1, t_f, 1, Wv.shape[1]))
        q5 = ad.reshape(q, (B, N, t_f, 1, q.shape[-1]))
        s = ad.reshape(scaled_dot_attention(q5, k, v), (B, N, t_f, Wv.shape[1]))
    else:
        raise ValueError(f"unknown attention mode {attention!r}")
    hi = ad.broadcast_to(ad.reshape(rel_i, (B, 1, t_f, d)), (B, N, t_f, d))
    logits = influence_logit(hi, rel, s, mlp_layers(store, f"{prefix}.mlp"))
    return ad.transpose(logits, (0, 2, 1))


def predecessor_distribution(logits, candidate_mask):
    """Row-wise masked softmax over candidates.

    ``logits`` is ``(..., t_f, N)`` and ``candidate_mask`` ``(..., N)``.
    Returns the probability tensor and a boolean ``(...)`` flag marking
    scenes with no candidate at all (those rows are all zero).
    """
    logits = ad.as_tensor(logits)
    cand = np.asarray(candidate_mask, dtype=bool)
    probs = ad.masked_softmax(logits, cand[..., None, :], axis=-1, allow_empty=True)
    return probs, ~cand.any(axis=-1)


def topk_indices(probs, candidate_mask, k):
    """Indices ``(..., K)`` of the K most probable candidates and a validity mask.

    Ordering is by probability descending, then agent index ascending. Slots
    beyond the number of candidates are invalid.
    """
    p = np.asarray(probs, dtype=np.float64)
    cand = np.broadcast_to(np.expand_dims(np.asarray(candidate_mask, dtype=bool), -2), p.shape)
    key = np.where(cand, -p, np.inf)
    order = np.argsort(key, axis=-1, kind="stable")
    n = p.shape[-1]
    if k > n:
        pad = np.zeros(order.shape[:-1] + (k - n,), dtype=order.dtype)
        order = np.concatenate([order, pad], axis=-1)
    idx = order[..., :k]
    valid = np.arange(k) < cand.sum(axis=-1, keepdims=True)
    if ad.tracking_kinks():
        # selection and slot order flip where adjacent ranked probabilities tie
        ranked = np.take_along_axis(key, order[..., : k + 1], axis=-1)
        gaps = np.diff(ranked, axis=-1)
        gaps = gaps[np.isfinite(gaps)]
        if gaps.size:
            ad.record_margin(gaps.min())
    return idx, valid


def topk_aggregate(probs, rel, candidate_mask, k):
    """Concatenate ``(h_p, prob_p)`` for the top-K candidates at every future step.

    ``probs``: ``(B, t_f, N)``; ``rel``: ``(B, N, t_f, d)``. Output is
    ``(B, t_f, K * (d + 1))`` with invalid slots zero-filled.
    """
    B, N, t_f, d = rel.shape
    idx, valid = topk_indices(probs.data, candidate_mask, k)
    bi = np.arange(B)[:, None, None]
    ti = np.arange(t_f)[None, :, None]
    vm = valid.astype(np.float64)[..., None]
    h = ad.getitem(rel, (bi, idx, ti)) * vm
    p = ad.reshape(ad.getitem(probs, (bi, ti, idx)), (B, t_f, k, 1)) * vm
    pairs = ad.concat([h, p], axis=-1)
    return ad.reshape(pairs, (B, t_f, k * (d + 1))), idx, valid


def pns_loss(labels, probs, candidate_mask, categorical=False):
    """Cross-entropy between label rows and predicted rows, summed over steps.

    The default is per-candidate binary cross-entropy summed over candidates;
    ``categorical`` switches to ``-sum(label * log p)``. Log arguments are
    floored at 1e-12. Returns a ``(...)`` tensor (one value per scene).
    """
    y = np.asarray(labels, dtype=np.float64)
    cand = np.broadcast_to(np.expand_dims(np.asarray(candidate_mask, dtype=bool), -2), y.shape).astype(np.float64)
    probs = ad.as_tensor(probs)
    logp = ad.log(ad.clip_min(probs, 1e-12))
    terms = logp * y
    if not categorical:
        log1m = ad.log(ad.clip_min(1.0 - probs, 1e-12))
        terms = terms + log1m * (1.0 - y)
    return -(terms * cand).sum(axis=(-2, -1))


@dataclass
class PredecessorDistribution:
    probs: np.ndarray  # (t_f, N)
    candidate_mask: np.ndarray  # (N,)
    gt_labels: np.ndarray | None = None  # (t_f, N)
    empty: bool = False
