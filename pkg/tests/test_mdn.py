import numpy as np
import pytest

from pnstrace import autodiff as ad
from pnstrace.errors import ShapeMismatch
from pnstrace.mdn import (LOG2, SCALE_EPS, LaplaceMixture, best_mode, cls_loss, decode, laplace_nll, positive_scale,
                          soft_targets, total_loss)
from pnstrace.nn import ParamStore, init_gru, init_mlp


def decoder_store(rng, d_in, d, t_f, m):
    s = ParamStore()
    init_mlp(s, "dec.mlp", [d_in, d, d], rng)
    init_gru(s, "dec.gru", d, d, rng)
    s.glorot("dec.loc.w", d, 2 * m, rng)
    s.zeros("dec.loc.b", 2 * m)
    s.glorot("dec.scale.w", d, 2 * m, rng)
    s.zeros("dec.scale.b", 2 * m)
    s.glorot("dec.pi.w", d, m, rng)
    s.zeros("dec.pi.b", m)
    return s


class TestScale:
    def test_strictly_above_eps(self):
        raw = ad.Tensor(np.array([-1e6, -10.0, 0.0, 3.0]))
        out = positive_scale(raw).data
        # elu saturates to -1 in floating point, so the floor is reached but never crossed
        assert np.all(out >= SCALE_EPS)
        assert np.all(out[1:] > SCALE_EPS)
        assert out[2] == 1.0 + SCALE_EPS


class TestDecode:
    def test_shapes_and_simplex(self, rng):
        B, t_f, d, m = 3, 5, 8, 4
        store = decoder_store(rng, d + 2 * (d + 1), d, t_f, m)
        mu, b, pi = decode(ad.Tensor(rng.normal(size=(B, t_f, d))), ad.Tensor(rng.normal(size=(B, t_f, 2 * (d + 1)))),
                           ad.Tensor(rng.normal(size=(B, d))), store, m)
        assert mu.shape == (B, m, t_f, 2) and b.shape == (B, m, t_f, 2) and pi.shape == (B, m)
        assert np.all(b.data > SCALE_EPS)
        np.testing.assert_allclose(pi.data.sum(-1), 1.0)

    def test_without_aggregate(self, rng):
        store = decoder_store(rng, 8, 8, 3, 2)
        mu, _, _ = decode(ad.Tensor(rng.normal(size=(1, 3, 8))), None, ad.Tensor(np.zeros((1, 8))), store, 2)
        assert mu.shape == (1, 2, 3, 2)

    def test_width_mismatch(self, rng):
        store = decoder_store(rng, 10, 8, 3, 2)
        with pytest.raises(ShapeMismatch):
            decode(ad.Tensor(rng.normal(size=(1, 3, 8))), None, ad.Tensor(np.zeros((1, 8))), store, 2)


class TestLosses:
    def test_nll_at_location(self):
        y = np.zeros((12, 2))
        assert abs(laplace_nll(y, np.ones_like(y), y).data - 2 * np.log(2)) <= 1e-9

    def test_nll_matches_density(self, rng):
        mu, b, y = rng.normal(size=(3, 2)), rng.uniform(0.5, 2, (3, 2)), rng.normal(size=(3, 2))
        dens = np.exp(-np.abs(y - mu) / b) / (2 * b)
        assert np.isclose(laplace_nll(mu, b, y).data, -np.log(dens).sum(-1).mean())
        assert np.isclose(LOG2, np.log(2))

    def test_best_mode_tie_low_index(self):
        y = np.zeros((2, 2))
        mu = np.stack([np.ones((2, 2)), -np.ones((2, 2)), np.full((2, 2), 3.0)])
        assert best_mode(mu, y) == 0

    def test_soft_targets(self, rng):
        mu = rng.normal(size=(4, 5, 6, 2))
        y = rng.normal(size=(4, 6, 2))
        t = soft_targets(mu, y)
        np.testing.assert_allclose(t.sum(-1), 1.0)
        disp = np.linalg.norm(mu[:, :, -1] - y[:, None, -1], axis=-1)
        assert np.all(np.argmax(t, -1) == np.argmin(disp, -1))

    def test_cls_uniform(self):
        target = np.eye(5)[2]
        assert abs(cls_loss(target, np.full(5, 0.2)).data - np.log(5)) <= 1e-9

    def test_total(self, rng):
        a, b, c = rng.random(3)
        bundle = total_loss(a, b, c, lam=0.5)
        assert bundle.values()["total"] == 0.5 * a + b + c

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, 1.0, lam=-0.1)


def test_mixture_round_trip(rng):
    mix = LaplaceMixture(rng.normal(size=(3, 4, 2)), rng.random((3, 4, 2)) + 0.1, np.full(3, 1 / 3))
    back = LaplaceMixture.from_dict(mix.to_dict())
    assert back.n_modes == 3
    np.testing.assert_array_equal(back.mu, mix.mu)
