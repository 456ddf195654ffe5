import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pnstrace import autodiff as ad
from pnstrace.errors import AllMasked, ShapeMismatch
from pnstrace.nn import (
    ParamStore,
    grad_check,
    gru_step,
    init_gru,
    init_mlp,
    init_self_attention,
    linear,
    mlp_forward,
    scaled_dot_attention,
    self_attention_block,
    softmax,
)

from .conftest import leaf, smooth_inputs


class TestAutodiff:
    def test_broadcast_add_gradient_sums_over_expanded_axes(self):
        a = leaf(np.ones((3, 4)))
        b = leaf(np.ones(4))
        (a + b).sum().backward()
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))
        np.testing.assert_array_equal(a.grad, np.ones((3, 4)))

    def test_shared_node_accumulates(self):
        x = leaf([2.0])
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_fancy_getitem_with_repeats(self):
        x = leaf([1.0, 2.0, 3.0])
        x[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])

    @pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4, 2)), ((2, 5, 3, 4), (4, 2)), ((2, 3, 4), (2, 4, 5))])
    def test_matmul_gradients(self, rng, shape_a, shape_b):
        a = leaf(rng.standard_normal(shape_a))
        b = leaf(rng.standard_normal(shape_b))
        w = rng.standard_normal(np.broadcast_shapes(shape_a[:-1] + (1,), shape_b[:-2] + (1, 1))[:-1] + (shape_b[-1],))
        err = grad_check(lambda: (ad.matmul(a, b) * w).sum(), {"a": a, "b": b})
        assert err < 1e-7

    def test_elementwise_gradients(self, rng):
        x = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
        y = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))

        def f():
            return (ad.log(x) * ad.tanh(y) + ad.exp(-x) / y + ad.sigmoid(x * y) - ad.elu(x - 1.2)).sum()

        assert grad_check(f, {"x": x, "y": y}) < 1e-7


class TestMLP:
    def test_zero_weights_give_zero(self, rng, store):
        layers = init_mlp(store, "m", [3, 5, 2], rng)
        for w, b in layers:
            w.data[:] = 0.0
        out = mlp_forward(ad.Tensor(rng.standard_normal((7, 3))), layers)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identity_output_layer(self, store):
        store.add("w", np.eye(2))
        store.add("b", np.zeros(2))
        out = mlp_forward(ad.Tensor([[1.0, 2.0]]), [(store["w"], store["b"])])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_shape_mismatch(self, rng, store):
        layers = init_mlp(store, "m", [3, 4, 2], rng)
        with pytest.raises(ShapeMismatch):
            mlp_forward(ad.Tensor(np.zeros((2, 5))), layers)

    def test_gradient_matches_central_differences(self, rng):
        for trial in range(5):
            def make():
                s = ParamStore()
                init_mlp(s, "m", [3, 6, 2], rng)
                for name in s:
                    s[name].data += rng.normal(0, 0.3, s[name].shape)
                x = leaf(rng.standard_normal((4, 3)))
                w = rng.standard_normal((4, 2))
                layers = [(s["m.w0"], s["m.b0"]), (s["m.w1"], s["m.b1"])]
                tensors = dict(s.items(), x=x)
                return (lambda: (mlp_forward(x, layers) * w).sum()), tensors

            fn, tensors = smooth_inputs(make)
            assert grad_check(fn, tensors) < 1e-4


class TestGRU:
    def test_zero_params_and_state(self, rng, store):
        p = init_gru(store, "g", 3, 4, rng)
        for t in p.values():
            t.data[:] = 0.0
        h = gru_step(ad.Tensor(rng.standard_normal((2, 3))), ad.Tensor(np.zeros((2, 4))), p)
        np.testing.assert_array_equal(h.data, 0.0)

    def test_from_zero_state_stays_in_open_unit_interval(self, rng, store):
        p = init_gru(store, "g", 3, 4, rng)
        for t in p.values():
            t.data[:] = rng.normal(0, 1.0, t.shape)
        h = gru_step(ad.Tensor(rng.normal(0, 2.0, (50, 3))), ad.Tensor(np.zeros((50, 4))), p)
        assert np.all(np.abs(h.data) < 1.0)

    def test_gate_convention(self, store):
        d = 2
        p = init_gru(store, "g", 1, d, np.random.default_rng(0))
        x, h = np.array([[0.7]]), np.array([[0.3, -0.2]])
        W, U, b = p["W"].data, p["U"].data, p["b"].data
        sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
        z = sig(x @ W[:, :d] + h @ U[:, :d] + b[:d])
        r = sig(x @ W[:, d:2 * d] + h @ U[:, d:2 * d] + b[d:2 * d])
        n = np.tanh(x @ W[:, 2 * d:] + r * (h @ U[:, 2 * d:]) + b[2 * d:])
        expected = (1 - z) * h + z * n
        np.testing.assert_allclose(gru_step(ad.Tensor(x), ad.Tensor(h), p).data, expected, rtol=1e-13)

    def test_shape_mismatch(self, rng, store):
        p = init_gru(store, "g", 3, 4, rng)
        with pytest.raises(ShapeMismatch):
            gru_step(ad.Tensor(np.zeros((1, 3))), ad.Tensor(np.zeros((1, 5))), p)

    def test_gradient_matches_central_differences(self, rng):
        for trial in range(5):
            s = ParamStore()
            p = init_gru(s, "g", 3, 4, rng)
            s["g.b"].data += rng.normal(0, 0.5, 12)
            x = leaf(rng.standard_normal((2, 3)))
            h = leaf(rng.standard_normal((2, 4)) * 0.5)
            w = rng.standard_normal((2, 4))
            tensors = dict(s.items(), x=x, h=h)
            assert grad_check(lambda: (gru_step(x, h, p) * w).sum(), tensors) < 1e-4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([1.0, 1.0, 1.0]).data, [1 / 3] * 3, atol=1e-15)

    def test_log_two(self):
        np.testing.assert_allclose(softmax([0.0, np.log(2.0)]).data, [1 / 3, 2 / 3], atol=1e-15)

    def test_masked_middle(self):
        p = softmax([5.0, 9.0, 5.0], mask=[True, False, True]).data
        assert p[1] == 0.0
        np.testing.assert_allclose(p, [0.5, 0.0, 0.5], atol=1e-15)

    def test_all_masked_raises(self):
        with pytest.raises(AllMasked):
            softmax([1.0, 2.0], mask=[False, False])

    def test_extreme_logits_are_stable(self):
        p = softmax([1000.0, 0.0, -1000.0]).data
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
        st.data(),
    )
    def test_simplex_under_any_mask(self, logits, data):
        mask = data.draw(hnp.arrays(bool, logits.shape))
        if not mask.any():
            mask[data.draw(st.integers(0, len(mask) - 1))] = True
        p = softmax(logits, mask=mask).data
        assert np.all(p[~mask] == 0.0)
        assert np.all(p[mask] >= 0.0)
        assert abs(p.sum() - 1.0) < 1e-12


class TestAttention:
    def test_single_key_returns_value(self, rng):
        V = rng.standard_normal((1, 3))
        for _ in range(5):
            Q = ad.Tensor(rng.standard_normal((4, 2)))
            out = scaled_dot_attention(Q, ad.Tensor(rng.standard_normal((1, 2))), ad.Tensor(V))
            np.testing.assert_allclose(out.data, np.repeat(V, 4, axis=0), atol=1e-15)

    def test_identical_keys_average_values(self, rng):
        K = np.tile(rng.standard_normal((1, 3)), (5, 1))
        V = rng.standard_normal((5, 2))
        out = scaled_dot_attention(ad.Tensor(rng.standard_normal((2, 3))), ad.Tensor(K), ad.Tensor(V))
        np.testing.assert_allclose(out.data, np.tile(V.mean(0), (2, 1)), atol=1e-14)

    def test_matches_direct_formula(self, rng):
        Q, K, V = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 2))
        s = Q @ K.T / 2.0
        w = np.exp(s - s.max(1, keepdims=True))
        w /= w.sum(1, keepdims=True)
        out = scaled_dot_attention(ad.Tensor(Q), ad.Tensor(K), ad.Tensor(V))
        np.testing.assert_allclose(out.data, w @ V, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            scaled_dot_attention(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 3))), ad.Tensor(np.zeros((3, 2))))

    def test_gradient(self, rng):
        for _ in range(5):
            Q, K, V = (leaf(rng.standard_normal(s)) for s in [(2, 3, 4), (2, 5, 4), (2, 5, 3)])
            w = rng.standard_normal((2, 3, 3))
            err = grad_check(lambda: (scaled_dot_attention(Q, K, V) * w).sum(), {"Q": Q, "K": K, "V": V})
            assert err < 1e-4


class TestSelfAttentionBlock:
    def _store(self, rng, d=4):
        s = ParamStore()
        init_self_attention(s, "att", d, rng)
        return s

    def test_single_agent_adds_value_projection(self, rng):
        s = self._store(rng)
        H = rng.standard_normal((1, 4))
        out = self_attention_block(ad.Tensor(H), np.ones(1, bool), s, "att")
        np.testing.assert_allclose(out.data, H + H @ s["att.Wv"].data, rtol=1e-13)

    def test_permutation_equivariance(self, rng):
        s = self._store(rng)
        H = rng.standard_normal((2, 6, 4))
        mask = rng.random((2, 6)) < 0.7
        mask[:, 0] = True
        perm = rng.permutation(6)
        out = self_attention_block(ad.Tensor(H), mask, s, "att").data
        out_p = self_attention_block(ad.Tensor(H[:, perm]), mask[:, perm], s, "att").data
        np.testing.assert_allclose(out_p, out[:, perm], rtol=1e-12, atol=1e-14)

    def test_masked_agent_unchanged_and_padding_ignored(self, rng):
        s = self._store(rng)
        H = rng.standard_normal((5, 4))
        mask = np.array([True, False, True, True, False])
        out = self_attention_block(ad.Tensor(H), mask, s, "att").data
        np.testing.assert_array_equal(out[~mask], H[~mask])
        H2 = H.copy()
        H2[~mask] = rng.normal(0, 100, (2, 4))
        out2 = self_attention_block(ad.Tensor(H2), mask, s, "att").data
        np.testing.assert_array_equal(out2[mask], out[mask])


class TestGradCheck:
    def test_linear_is_exact(self, rng):
        x = leaf(rng.standard_normal((3, 4)))
        w = leaf(rng.standard_normal((4, 2)))
        b = leaf(rng.standard_normal(2))
        c = rng.standard_normal((3, 2))
        assert grad_check(lambda: (linear(x, w, b) * c).sum(), {"x": x, "w": w, "b": b}) < 1e-9

    def test_detects_corrupted_gradient(self, rng):
        x = leaf(rng.standard_normal((3, 4)))
        w = leaf(rng.standard_normal((4, 2)))
        fn = lambda: ad.tanh(linear(x, w)).sum()  # noqa: E731
        fn().backward()
        bad = {"x": x.grad * 1.1, "w": w.grad}
        assert grad_check(fn, {"x": x, "w": w}, analytic=bad) > 1e-2


class TestParamStore:
    def test_duplicate_name(self, store):
        store.zeros("a", 2)
        with pytest.raises(KeyError):
            store.zeros("a", 2)

    def test_grad_shapes_match(self, rng, store):
        init_mlp(store, "m", [2, 3, 1], rng)
        for name, t in store.items():
            assert store.grads()[name].shape == t.shape

    def test_checkpoint_roundtrip(self, rng, store, tmp_path):
        init_mlp(store, "m", [2, 3, 1], rng)
        path = tmp_path / "ckpt.npz"
        store.save(path, meta={"note": "x"})
        values, header = ParamStore.read(path)
        assert header["format_version"] == 1
        assert header["shapes"]["m.w0"] == [2, 3]
        assert header["meta"] == {"note": "x"}
        for name, t in store.items():
            np.testing.assert_array_equal(values[name], t.data)
