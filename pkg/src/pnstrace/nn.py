"""Differentiable building blocks: parameter storage, MLP, GRU cell, attention.

All kernels operate on :class:`~pnstrace.autodiff.Tensor` objects in float64
and broadcast over arbitrary leading batch dimensions.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch

CHECKPOINT_FORMAT = 1


class ParamStore:
    """Named float64 parameters, each paired with a same-shaped gradient."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def glorot(self, name, fan_in, fan_out, rng):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name, *shape):
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grads(self):
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self._params.items()}

    def values(self):
        return {k: t.data for k, t in self._params.items()}

    def n_scalars(self):
        return int(sum(t.data.size for t in self._params.values()))

    def copy_values(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_values(self, values):
        for k, t in self._params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.data.shape:
                raise ShapeMismatch(f"{k}: expected {t.data.shape}, got {v.shape}")
            t.data = v.copy()

    def save(self, path, meta=None):
        arrays = {f"param/{k}": t.data for k, t in self._params.items()}
        header = {"format_version": CHECKPOINT_FORMAT, "shapes": {k: list(t.data.shape) for k, t in self._params.items()}}
        if meta is not None:
            header["meta"] = meta
        arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @staticmethod
    def read(path):
        """Return ``(values, header)`` from a checkpoint written by :meth:`save`."""
        with np.load(path) as z:
            header = json.loads(bytes(z["__header__"]).decode())
            if header.get("format_version") != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
            values = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        return values, header


# -- kernels ---------------------------------------------------------------


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} does not match weight rows {weight.shape[0]}")
    y = ad.matmul(x, weight) if x.ndim >= 2 else ad.matmul(ad.reshape(x, (1, -1)), weight)[0]
    return y if bias is None else y + bias


def init_mlp(store, prefix, sizes, rng):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = store.glorot(f"{prefix}.w{i}", n_in, n_out, rng)
        b = store.zeros(f"{prefix}.b{i}", n_out)
        layers.append((w, b))
    return layers


def mlp_layers(store, prefix):
    layers = []
    i = 0
    while f"{prefix}.w{i}" in store:
        layers.append((store[f"{prefix}.w{i}"], store[f"{prefix}.b{i}"]))
        i += 1
    return layers


def mlp_forward(x, layers):
    """Affine + ReLU on every hidden layer; the last layer is affine only."""
    for i, (w, b) in enumerate(layers):
        if x.shape[-1] != w.shape[0]:
            raise ShapeMismatch(f"layer {i}: input width {x.shape[-1]} vs weight rows {w.shape[0]}")
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = ad.relu(x)
    return x


def init_gru(store, prefix, n_in, n_hidden, rng):
    # gate blocks are laid out [z | r | n] along the output axis
    w = store.add(f"{prefix}.W", np.concatenate([_glorot(rng, n_in, n_hidden) for _ in range(3)], axis=1))
    u = store.add(f"{prefix}.U", np.concatenate([_glorot(rng, n_hidden, n_hidden) for _ in range(3)], axis=1))
    b = store.zeros(f"{prefix}.b", 3 * n_hidden)
    return {"W": w, "U": u, "b": b}


def gru_params(store, prefix):
    return {"W": store[f"{prefix}.W"], "U": store[f"{prefix}.U"], "b": store[f"{prefix}.b"]}


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def gru_step(x, h_prev, params):
    """One GRU update.

    z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * h + z * n.
    """
    W, U, b = params["W"], params["U"], params["b"]
    d = h_prev.shape[-1]
    if W.shape[1] != 3 * d or U.shape != (d, 3 * d):
        raise ShapeMismatch(f"GRU hidden size {d} does not match parameters {W.shape}, {U.shape}")
    if x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"GRU input width {x.shape[-1]} vs {W.shape[0]}")
    gx = linear(x, W, b)
    gh = linear(h_prev, U)
    z = ad.sigmoid(gx[..., :d] + gh[..., :d])
    r = ad.sigmoid(gx[..., d:2 * d] + gh[..., d:2 * d])
    n = ad.tanh(gx[..., 2 * d:] + r * gh[..., 2 * d:])
    return h_prev + z * (n - h_prev)


def softmax(logits, mask=None, axis=-1):
    """Masked softmax. Raises AllMasked if a row has no unmasked entry."""
    return ad.masked_softmax(ad.as_tensor(logits), mask, axis=axis)


def scaled_dot_attention(Q, K, V, d_k=None, key_mask=None):
    """softmax(Q K^T / sqrt(d_k)) V over the second-to-last axis of K and V."""
    if K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"{K.shape[-2]} keys but {V.shape[-2]} values")
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeMismatch(f"query width {Q.shape[-1]} vs key width {K.shape[-1]}")
    d_k = Q.shape[-1] if d_k is None else d_k
    scores = ad.matmul(Q, ad.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(d_k))
    if key_mask is not None:
        key_mask = np.expand_dims(np.asarray(key_mask, dtype=bool), -2)
    weights = ad.masked_softmax(scores, key_mask, axis=-1)
    return ad.matmul(weights, V)


def init_self_attention(store, prefix, d, rng):
    for name in ("q", "k", "v"):
        store.glorot(f"{prefix}.W{name}", d, d, rng)


def self_attention_block(H, mask, store, prefix):
    """Residual self-attention across the agent axis (second-to-last of ``H``).

    ``mask`` marks present agents with shape ``H.shape[:-1]``. Absent agents
    are excluded as keys and receive no update as queries.
    """
    mask = np.asarray(mask, dtype=bool)
    Q = ad.matmul(H, store[f"{prefix}.Wq"])
    K = ad.matmul(H, store[f"{prefix}.Wk"])
    V = ad.matmul(H, store[f"{prefix}.Wv"])
    # query rows that are themselves absent may have no present key at all
    safe = mask | ~mask.any(axis=-1, keepdims=True)
    ctx = scaled_dot_attention(Q, K, V, key_mask=safe)
    return H + ctx * mask[..., None].astype(np.float64)


# -- finite-difference harness ---------------------------------------------


def rel_error(analytic, numeric, floor=1e-8):
    """|a - n| / (|a| + |n|), with the denominator held at ``floor`` or above."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))


def grad_check(fn, tensors, step=1e-5, max_coords=None, rng=None, analytic=None):
    """Compare analytic gradients of a scalar function with central differences.

    ``fn`` takes no arguments and returns a scalar Tensor built from
    ``tensors`` (a dict of leaf tensors with ``requires_grad``). Only up to
    ``max_coords`` randomly chosen entries of each tensor are probed when set.
    ``analytic`` overrides the backward-pass gradients (used for negative
    controls). Returns the maximum relative error.

    Central differences carry rounding noise of order ``|f| * eps / step``,
    so gradients smaller than ``1e-5 * max(1, |f|)`` are compared against
    that floor instead of their own size.
    """
    for t in tensors.values():
        t.grad = None
    out = fn()
    out.backward()
    floor = 1e-5 * max(1.0, abs(out.item()))
    if analytic is None:
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in tensors.items()}
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for name, t in tensors.items():
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        a_flat = np.asarray(analytic[name]).reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            worst = max(worst, float(rel_error(a_flat[i], num, floor)))
    return worst


def directional_check(fn, tensors, rng, step=1e-5, n_dirs=4):
    """Central-difference check of the gradient along random unit directions."""
    for t in tensors.values():
        t.grad = None
    fn().backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in tensors.items()}
    originals = {k: t.data.copy() for k, t in tensors.items()}
    worst = 0.0
    for _ in range(n_dirs):
        dirs = {k: rng.standard_normal(t.data.shape) for k, t in tensors.items()}
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in dirs.values()))
        dirs = {k: v / norm for k, v in dirs.items()}
        analytic = sum(float(np.sum(grads[k] * dirs[k])) for k in tensors)
        for k, t in tensors.items():
            t.data = originals[k] + step * dirs[k]
        fp = fn().item()
        for k, t in tensors.items():
            t.data = originals[k] - step * dirs[k]
        fm = fn().item()
        for k, t in tensors.items():
            t.data = originals[k].copy()
        worst = max(worst, float(rel_error(analytic, (fp - fm) / (2 * step))))
    return worst
