import numpy as np
import pytest

from helpers import finite_difference_check
from voxloop import autodiff as ad
from voxloop.errors import FormatError, ShapeError
from voxloop.layers import (Linear, MLP, MultiHeadAttention, assign_parameters,
                            load_checkpoint, save_checkpoint)


def reference_attention(q, k, v, mha):
    """Plain-numpy multi-head attention used as an independent oracle."""
    def lin(x, layer):
        return x @ layer.weight.data + layer.bias.data

    b, n, d = q.shape
    m = k.shape[1]
    h, dh = mha.heads, mha.head_dim
    qh = lin(q, mha.wq).reshape(b, n, h, dh).transpose(0, 2, 1, 3)
    kh = lin(k, mha.wk).reshape(b, m, h, dh).transpose(0, 2, 1, 3)
    vh = lin(v, mha.wv).reshape(b, m, h, dh).transpose(0, 2, 1, 3)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    out = (attn @ vh).transpose(0, 2, 1, 3).reshape(b, n, d)
    return lin(out, mha.wo)


class TestLinearMLP:
    def test_linear_shapes_and_bias(self):
        layer = Linear(3, 5, np.random.default_rng(0))
        x = ad.Tensor(np.zeros((2, 3)))
        np.testing.assert_allclose(layer(x).data, np.zeros((2, 5)))

    def test_mlp_gradcheck(self):
        rng = np.random.default_rng(3)
        mlp = MLP([4, 8, 2], rng)
        x = rng.standard_normal((5, 4))
        y = rng.standard_normal((5, 2))

        def loss():
            return ad.mse(mlp(ad.Tensor(x)), ad.Tensor(y))

        finite_difference_check(loss, mlp.parameters("mlp"), rtol=1e-4)


class TestMultiHeadAttention:
    def test_indivisible_heads_rejected(self):
        with pytest.raises(ShapeError):
            MultiHeadAttention(10, 4, np.random.default_rng(0))

    def test_single_token_identity_weighting(self):
        # One key: softmax over a single column is 1, so the output is the
        # projected value row regardless of query content.
        rng = np.random.default_rng(1)
        mha = MultiHeadAttention(8, 2, rng)
        q = ad.Tensor(rng.standard_normal((1, 1, 8)))
        v = ad.Tensor(rng.standard_normal((1, 1, 8)))
        out = mha(q, q, v).data
        vh = (v.data @ mha.wv.weight.data + mha.wv.bias.data)
        expected = vh @ mha.wo.weight.data + mha.wo.bias.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_zero_queries_give_uniform_attention(self):
        rng = np.random.default_rng(2)
        mha = MultiHeadAttention(8, 2, rng)
        zeros = ad.Tensor(np.zeros((1, 5, 8)))
        v = ad.Tensor(rng.standard_normal((1, 5, 8)))
        out = mha(zeros, zeros, v).data
        vh = v.data @ mha.wv.weight.data + mha.wv.bias.data
        expected = np.repeat(vh.mean(axis=1, keepdims=True), 5, axis=1)
        expected = expected @ mha.wo.weight.data + mha.wo.bias.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_reference_forward(self):
        rng = np.random.default_rng(7)
        mha = MultiHeadAttention(8, 2, rng)
        q = rng.standard_normal((1, 4, 8))
        out = mha(ad.Tensor(q), ad.Tensor(q), ad.Tensor(q)).data
        np.testing.assert_allclose(out, reference_attention(q, q, q, mha),
                                   atol=1e-12)

    def test_cross_attention_shapes(self):
        rng = np.random.default_rng(8)
        mha = MultiHeadAttention(8, 4, rng)
        q = ad.Tensor(rng.standard_normal((3, 4, 8)))
        kv = ad.Tensor(rng.standard_normal((3, 6, 8)))
        assert mha(q, kv, kv).shape == (3, 4, 8)

    def test_end_to_end_gradcheck(self):
        rng = np.random.default_rng(9)
        mha = MultiHeadAttention(8, 2, rng)
        x = rng.standard_normal((2, 3, 8))
        y = rng.standard_normal((2, 3, 8))

        def loss():
            return ad.mse(mha(ad.Tensor(x), ad.Tensor(x), ad.Tensor(x)),
                          ad.Tensor(y))

        finite_difference_check(loss, mha.parameters("mha"), rtol=1e-4,
                                max_entries=12)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        mlp = MLP([3, 4, 2], rng)
        params = mlp.parameters("m")
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, {"note": "test"})
        values, meta = load_checkpoint(path)
        assert meta["note"] == "test"
        for name, tensor in params.items():
            np.testing.assert_array_equal(values[name], tensor.data)

    def test_assign_rejects_mismatch(self, tmp_path):
        rng = np.random.default_rng(12)
        mlp = MLP([3, 4, 2], rng)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, mlp.parameters("m"))
        values, _ = load_checkpoint(path)
        other = MLP([3, 5, 2], rng)
        with pytest.raises(FormatError):
            assign_parameters(other.parameters("m"), values)

    def test_missing_version_rejected(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, **{"param/x": np.zeros(3)})
        with pytest.raises(FormatError):
            load_checkpoint(path)
