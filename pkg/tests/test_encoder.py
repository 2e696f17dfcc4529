import numpy as np
import pytest

from ergbias import autodiff as ad
from ergbias.autodiff import Tensor
from ergbias.corpus import Document
from ergbias.encoder import (FILE_BACKED, OOV, TRAINABLE_LOOKUP, BiLstm, EmbeddingProvider, contextualize,
                             embed_document, sentence_start_embedding, sentence_start_rows)
from ergbias.gradcheck import analytic_gradients, numeric_gradient, relative_error


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_oracle(x, w_in, w_h, b, order):
    """Plain numpy LSTM with gates (i, f, o, g) in that column order."""
    h_dim = w_h.shape[0]
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    out = {}
    for t in order:
        z = x[t] @ w_in + h @ w_h + b[0]
        i, f, o = sigmoid(z[:h_dim]), sigmoid(z[h_dim:2 * h_dim]), sigmoid(z[2 * h_dim:3 * h_dim])
        g = np.tanh(z[3 * h_dim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return np.stack([out[t] for t in range(len(order))])


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestEmbeddingProvider:
    def test_same_token_same_row(self, rng):
        p = EmbeddingProvider(TRAINABLE_LOOKUP, 4, rng, vocab=["t"])
        emb = embed_document(p, Document("d", ("t", "t"), ((0, 2),)))
        assert emb.shape == (2, 4)
        np.testing.assert_array_equal(emb.values[0], emb.values[1])

    def test_unknown_token_uses_oov_row(self, rng):
        p = EmbeddingProvider(TRAINABLE_LOOKUP, 4, rng, vocab=["a"])
        emb = p.embed(Document("d", ("zzz", "a"), ((0, 2),)))
        np.testing.assert_array_equal(emb.values[0], p.table.values[p.vocab[OOV]])
        assert p.vocab[OOV] == 0

    def test_file_backed_row_mismatch(self, rng):
        p = EmbeddingProvider(FILE_BACKED, 3, rng, matrices={"doc-7": np.zeros((5, 3))})
        with pytest.raises(ValueError, match="doc-7"):
            p.embed(Document("doc-7", ("w",) * 6, ((0, 6),)))

    def test_file_backed_serves_matrix(self, rng):
        m = rng.normal(size=(3, 2))
        p = EmbeddingProvider(FILE_BACKED, 2, rng, matrices={"a": m})
        np.testing.assert_array_equal(p.embed(Document("a", ("w",) * 3, ((0, 3),))).values, m)

    def test_from_file(self, rng, tmp_path):
        ad.save_checkpoint(tmp_path / "e.json", {"a": np.ones((2, 3)), "b": np.zeros((4, 3))})
        p = EmbeddingProvider.from_file(tmp_path / "e.json", rng)
        assert p.mode == FILE_BACKED and p.dim == 3 and set(p.matrices) == {"a", "b"}

    def test_relation_rows(self, rng):
        p = EmbeddingProvider(TRAINABLE_LOOKUP, 5, rng, vocab=["before", "x"])
        assert p.relations.shape == (8, 5) and p.relations.requires_grad
        np.testing.assert_array_equal(p.relations.values[1], p.table.values[p.vocab["before"]])

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            EmbeddingProvider("bert", 4, rng)


class TestContextualize:
    def test_zero_weights_give_zero_rows(self, rng):
        enc = BiLstm(3, 2, rng)
        for p in enc.named_parameters().values():
            p.values[...] = 0.0
        out = contextualize(enc, Tensor(rng.normal(size=(4, 3))))
        assert out.shape == (4, 4)
        np.testing.assert_array_equal(out.values, 0.0)

    def test_single_token(self, rng):
        enc = BiLstm(3, 2, rng)
        x = rng.normal(size=(1, 3))
        out = contextualize(enc, Tensor(x)).values
        f, b = enc.forward_dir, enc.backward_dir
        np.testing.assert_allclose(out[0, :2], lstm_oracle(x, f.w_input.values, f.w_hidden.values, f.bias.values, [0])[0])
        np.testing.assert_allclose(out[0, 2:], lstm_oracle(x, b.w_input.values, b.w_hidden.values, b.bias.values, [0])[0])

    def test_matches_explicit_oracle(self, rng):
        enc = BiLstm(3, 4, rng)
        x = rng.normal(size=(3, 3))
        out = contextualize(enc, Tensor(x)).values
        f, b = enc.forward_dir, enc.backward_dir
        np.testing.assert_allclose(out[:, :4], lstm_oracle(x, f.w_input.values, f.w_hidden.values, f.bias.values, [0, 1, 2]), atol=1e-12)
        np.testing.assert_allclose(out[:, 4:], lstm_oracle(x, b.w_input.values, b.w_hidden.values, b.bias.values, [2, 1, 0]), atol=1e-12)

    def test_reversal_swaps_halves(self, rng):
        enc = BiLstm(3, 2, rng)
        swapped = BiLstm(3, 2, rng)
        swapped.forward_dir, swapped.backward_dir = enc.backward_dir, enc.forward_dir
        x = rng.normal(size=(3, 3))
        out = contextualize(enc, Tensor(x)).values
        rev = contextualize(swapped, Tensor(x[::-1].copy())).values[::-1]
        np.testing.assert_allclose(rev[:, :2], out[:, 2:], atol=1e-12)
        np.testing.assert_allclose(rev[:, 2:], out[:, :2], atol=1e-12)

    def test_forget_bias_initialized_to_one(self, rng):
        enc = BiLstm(3, 2, rng)
        np.testing.assert_array_equal(enc.forward_dir.bias.values, [[0, 0, 1, 1, 0, 0, 0, 0]])

    def test_width_mismatch(self, rng):
        with pytest.raises(ad.ShapeError):
            contextualize(BiLstm(3, 2, rng), Tensor(np.zeros((2, 4))))

    def test_every_row_depends_on_every_input(self, rng):
        enc = BiLstm(3, 3, rng)
        x = rng.normal(size=(5, 3))
        base = contextualize(enc, Tensor(x)).values
        for j in range(5):
            bumped = x.copy()
            bumped[j] += 1e-3
            diff = np.abs(contextualize(enc, Tensor(bumped)).values - base).sum(axis=1)
            assert np.all(diff > 0), f"perturbing row {j} left some output row unchanged"

    def test_gradients_reach_lookup_rows_and_lstm(self, rng):
        p = EmbeddingProvider(TRAINABLE_LOOKUP, 3, rng, vocab=["a", "b"])
        enc = BiLstm(3, 2, rng)
        doc = Document("d", ("a", "b", "a"), ((0, 3),))
        w = Tensor(rng.normal(size=(3, 4)))
        ad.backward(ad.sum(ad.mul(contextualize(enc, p.embed(doc)), w)))
        assert np.abs(p.table.grad[p.vocab["a"]]).sum() > 0
        assert np.abs(p.table.grad[p.vocab["b"]]).sum() > 0
        assert np.all(p.table.grad[p.vocab[OOV]] == 0)
        for name, t in enc.named_parameters().items():
            assert np.abs(t.grad).sum() > 0, name

    def test_finite_differences(self, rng):
        enc = BiLstm(2, 2, rng)
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        params = {"x": x, **enc.named_parameters()}

        def loss():
            return ad.sum(ad.mul(contextualize(enc, x), w))

        analytic = analytic_gradients(loss, params)
        for name, t in params.items():
            assert relative_error(analytic[name], numeric_gradient(loss, t, 1e-5), 1e-7).max() < 1e-4, name


class TestSentenceStart:
    def doc(self):
        return Document("d", tuple(f"t{i}" for i in range(12)), ((0, 4), (4, 9), (9, 12)))

    def test_row_of_first_token(self, rng):
        ctx = Tensor(rng.normal(size=(12, 3)))
        np.testing.assert_array_equal(sentence_start_embedding(ctx, self.doc(), 1).values, ctx.values[[4]])
        np.testing.assert_array_equal(sentence_start_embedding(ctx, self.doc(), 0).values, ctx.values[[0]])
        assert sentence_start_rows(self.doc()) == [0, 4, 9]

    def test_distinct_sentences_distinct_vectors(self, rng):
        p = EmbeddingProvider(TRAINABLE_LOOKUP, 4, rng, vocab=[f"t{i}" for i in range(12)])
        enc = BiLstm(4, 3, rng)
        ctx = contextualize(enc, p.embed(self.doc()))
        a = sentence_start_embedding(ctx, self.doc(), 0).values
        b = sentence_start_embedding(ctx, self.doc(), 1).values
        assert not np.allclose(a, b)

    def test_empty_sentence_rejected(self, rng):
        doc = Document("d", ("w",) * 4, ((0, 2), (2, 2), (2, 4)))
        with pytest.raises(ValueError, match="empty"):
            sentence_start_embedding(Tensor(np.zeros((4, 2))), doc, 1)
        with pytest.raises(ValueError, match="empty"):
            sentence_start_rows(doc)
