"""The predictor network: encoder, interaction block, tracing head, decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mdn import best_mode, cls_loss, decode, laplace_nll, soft_targets, total_loss
from .nn import ParamStore, gru_params, gru_step, init_gru, init_mlp, init_self_attention, mlp_forward, mlp_layers, self_attention_block
from .scene import normalize, observed_features
from .tracing import candidate_filter, influence_logits, label_scene, predecessor_distribution, pns_loss, relation_encodings, topk_aggregate

N_FEATURES = 4


@dataclass
class Batch:
    feats: np.ndarray  # (B, N, t_h, 4)
    obs_mask: np.ndarray  # (B, N, t_h) bool
    target: np.ndarray  # (B,) int
    candidates: np.ndarray  # (B, N) bool
    labels: np.ndarray  # (B, t_f, N)
    future: np.ndarray  # (B, t_f, 2) normalized successor future
    offsets: np.ndarray  # (B, 2)

    @property
    def size(self):
        return self.feats.shape[0]


def scene_candidates(scene, cfg):
    if cfg.filter is None:
        return scene.neighbor_mask()
    return candidate_filter(scene, *cfg.filter)


def prepare(scene, cfg):
    """Per-scene arrays in normalised coordinates; the inputs to :func:`collate`."""
    norm, rec = normalize(scene)
    cand = scene_candidates(norm, cfg)
    return {
        "feats": observed_features(norm),
        "obs": norm.presence[:, : scene.t_h].copy(),
        "cand": cand,
        "labels": label_scene(norm, cfg.metric, cand)[0],
        "future": norm.successor_future.copy(),
        "offset": np.asarray(rec.offset),
        "target": scene.target_index,
    }


def collate(items):
    """Pad prepared scenes to a common agent count."""
    t_h = items[0]["feats"].shape[1]
    t_f = items[0]["future"].shape[0]
    n_max = max(it["feats"].shape[0] for it in items)
    B = len(items)
    feats = np.zeros((B, n_max, t_h, N_FEATURES))
    obs = np.zeros((B, n_max, t_h), dtype=bool)
    cand = np.zeros((B, n_max), dtype=bool)
    labels = np.zeros((B, t_f, n_max))
    for b, it in enumerate(items):
        if it["feats"].shape[1] != t_h or it["future"].shape[0] != t_f:
            raise ValueError("all scenes in a batch must share t_h and t_f")
        n = it["feats"].shape[0]
        feats[b, :n] = it["feats"]
        obs[b, :n] = it["obs"]
        cand[b, :n] = it["cand"]
        labels[b, :, :n] = it["labels"]
    future = np.stack([it["future"] for it in items])
    offsets = np.stack([it["offset"] for it in items])
    target = np.array([it["target"] for it in items], dtype=int)
    return Batch(feats, obs, target, cand, labels, future, offsets)


def make_batch(scenes, cfg):
    """Normalise scenes and pad them to a common agent count."""
    return collate([prepare(s, cfg) for s in scenes])


class PnSNet:
    """Parameters plus the forward graph of the predictor."""

    def __init__(self, cfg, t_f, rng=None, store=None):
        self.cfg = cfg
        self.t_f = t_f
        if store is None:
            rng = np.random.default_rng(cfg.seed) if rng is None else rng
            store = self._init_params(rng)
        self.store = store

    def _init_params(self, rng):
        cfg, d = self.cfg, self.cfg.hidden
        s = ParamStore()
        init_mlp(s, "enc.mlp", [N_FEATURES, d, d], rng)
        init_gru(s, "enc.gru", d, d, rng)
        init_self_attention(s, "att", d, rng)
        init_gru(s, "rel.gru", d, d, rng)
        s.add("rel.input", rng.uniform(-1.0, 1.0, size=d) / np.sqrt(d))
        if cfg.pt_enabled:
            init_self_attention(s, "trace", d, rng)
            init_mlp(s, "trace.mlp", [3 * d, d, 1], rng)
            dec_in = d + cfg.k * (d + 1)
        else:
            dec_in = d
        init_mlp(s, "dec.mlp", [dec_in, d, d], rng)
        init_gru(s, "dec.gru", d, d, rng)
        m = cfg.n_modes
        s.glorot("dec.loc.w", d, 2 * m, rng)
        s.zeros("dec.loc.b", 2 * m)
        s.glorot("dec.scale.w", d, 2 * m, rng)
        s.zeros("dec.scale.b", 2 * m)
        s.glorot("dec.pi.w", d, m, rng)
        s.zeros("dec.pi.b", m)
        return s

    def shapes(self):
        return {k: list(t.data.shape) for k, t in self.store.items()}

    # forward ---------------------------------------------------------------

    def encode(self, batch):
        """Per-agent observed hidden sequence ``(B, N, t_h, d)`` after interaction."""
        s = self.store
        feats = ad.Tensor(batch.feats)
        x = mlp_forward(feats, mlp_layers(s, "enc.mlp"))
        B, N, t_h, _ = batch.feats.shape
        d = self.cfg.hidden
        gp = gru_params(s, "enc.gru")
        h = ad.Tensor(np.zeros((B, N, d)))
        seq = []
        m = batch.obs_mask.astype(np.float64)[..., None]
        for t in range(t_h):
            h_new = gru_step(x[:, :, t], h, gp)
            h = h + (h_new - h) * m[:, :, t]
            seq.append(h)
        H = ad.stack(seq, axis=1)  # (B, t_h, N, d)
        H = self_attention_block(H, np.transpose(batch.obs_mask, (0, 2, 1)), s, "att")
        return ad.transpose(H, (0, 2, 1, 3))

    def forward(self, batch):
        cfg, s = self.cfg, self.store
        B = batch.size
        bi = np.arange(B)
        seq = self.encode(batch)
        h_final = seq[:, :, -1]
        rel = relation_encodings(h_final, self.t_f, s)
        rel_i = rel[bi, batch.target]
        h0 = h_final[bi, batch.target]
        out = {"probs": None, "empty": np.zeros(B, dtype=bool)}
        agg = None
        if cfg.pt_enabled:
            seq_i = seq[bi, batch.target]
            logits = influence_logits(rel_i, rel, seq_i, s, attention=cfg.attention)
            probs, empty = predecessor_distribution(logits, batch.candidates)
            agg, idx, valid = topk_aggregate(probs, rel, batch.candidates, cfg.k)
            out.update(logits=logits, probs=probs, empty=empty, topk=idx, topk_valid=valid)
        mu, b, pi = decode(rel_i, agg, h0, s, cfg.n_modes)
        out.update(mu=mu, b=b, pi=pi)
        return out

    def loss_targets(self, mu, y):
        """Best mode index and soft mode targets; both are labels, not differentiated."""
        return best_mode(mu, y), soft_targets(mu, y, self.cfg.tau)

    def loss(self, batch, out=None, targets=None):
        """Batch-mean loss terms combined as lam * pns + cls + nll.

        ``targets`` fixes the ``(best mode, soft targets)`` pair instead of
        deriving it from the current prediction.
        """
        cfg = self.cfg
        out = self.forward(batch) if out is None else out
        y = batch.future
        bi = np.arange(batch.size)
        mu, b, pi = out["mu"], out["b"], out["pi"]
        m_star, soft = self.loss_targets(mu.data, y) if targets is None else targets
        l_nll = laplace_nll(mu[bi, m_star], b[bi, m_star], y).mean()
        l_cls = cls_loss(soft, pi).mean()
        if cfg.pt_enabled:
            l_pns = pns_loss(batch.labels, out["probs"], batch.candidates, cfg.categorical_pns).mean()
        else:
            l_pns = ad.Tensor(0.0)
        return total_loss(l_pns, l_cls, l_nll, cfg.lam), out

    def predict_arrays(self, batch):
        """Mixture parameters in world coordinates as numpy arrays."""
        out = self.forward(batch)
        mu = out["mu"].data + batch.offsets[:, None, None, :]
        res = {"mu": mu, "b": out["b"].data, "pi": out["pi"].data, "empty": out["empty"]}
        if out["probs"] is not None:
            res["probs"] = out["probs"].data
        return res
