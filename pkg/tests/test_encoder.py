import numpy as np
import pytest

from spanrel import autodiff as ad
from spanrel.encoder import (UNK_TOKEN, EmptySentence, Encoder, EncoderConfig,
                             IndexOutOfRange, build_vocab,
                             load_pretrained_vectors)
from spanrel.optim import Parameters, grad_check


def tiny_config(**kwargs):
    defaults = dict(embed_dim=6, bilstm_layers=1, bilstm_hidden=4, attn_layers=0,
                    attn_heads=2, dropout=0.0, mlp_hidden=8, mlp_layers=1)
    defaults.update(kwargs)
    return EncoderConfig(**defaults)


def make_encoder(config=None, tokens=("a", "b", "c", "d", "e")):
    config = config or tiny_config()
    vocab = build_vocab([list(tokens)])
    enc = Encoder(config, vocab)
    params = Parameters()
    enc.init_params(params, np.random.default_rng(0))
    return enc, params


def run_encoder(enc, params, tokens, train=False, rng=None):
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    return enc.run(g, bound, tokens, train=train, rng=rng)


def test_vocab_unk_at_zero():
    vocab = build_vocab([["b", "a", "b"]])
    assert vocab[UNK_TOKEN] == 0
    assert set(vocab) == {UNK_TOKEN, "a", "b"}


def test_embed_shapes_and_unk():
    enc, params = make_encoder()
    out = run_encoder(enc, params, ["a", "b", "zzz", "c", "d"])
    assert out.c.shape == (5, 6)
    table = params.get("shared/embed/table")
    np.testing.assert_array_equal(out.c.data[2], table[0])  # unknown -> UNK row


def test_embed_deterministic_in_eval():
    enc, params = make_encoder()
    a = run_encoder(enc, params, ["a", "b"]).c.data
    b = run_encoder(enc, params, ["a", "b"]).c.data
    np.testing.assert_array_equal(a, b)


def test_empty_sentence_rejected():
    enc, params = make_encoder()
    with pytest.raises(EmptySentence):
        run_encoder(enc, params, [])


def test_default_bilstm_output_width():
    # default hidden size 256 per direction -> u is n x 512
    config = EncoderConfig(embed_dim=16, bilstm_layers=1, dropout=0.0)
    vocab = build_vocab([["a", "b", "c", "d", "e"]])
    enc = Encoder(config, vocab)
    params = Parameters()
    enc.init_params(params, np.random.default_rng(0))
    out = run_encoder(enc, params, ["a", "b", "c", "d", "e"])
    assert out.u.shape == (5, 512)


def test_zero_lstm_weights_give_zero_output():
    enc, params = make_encoder()
    for name in params.names():
        if "/lstm" in name:
            params.get(name)[...] = 0.0
    out = run_encoder(enc, params, ["a", "b", "c"])
    np.testing.assert_array_equal(out.u.data, np.zeros((3, 8)))


def test_attention_maps_shape_and_row_sums():
    config = tiny_config(embed_dim=8, attn_layers=2, attn_heads=4)
    enc, params = make_encoder(config, tokens=tuple("abcdefg"))
    out = run_encoder(enc, params, list("abcdefg"))
    maps = out.attention_arrays()
    assert len(maps) == 8  # 2 layers x 4 heads
    for m in maps:
        assert m.shape == (7, 7)
        np.testing.assert_allclose(m.sum(axis=1), np.ones(7), atol=1e-9)


def test_no_attention_layers_no_maps():
    enc, params = make_encoder()
    assert run_encoder(enc, params, ["a", "b"]).attention_arrays() == []


def test_embed_dim_divisibility_enforced():
    with pytest.raises(ValueError):
        EncoderConfig(embed_dim=7, attn_layers=1, attn_heads=2)


def test_span_vector_single_token_equals_embedding():
    enc, params = make_encoder()
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    out = enc.run(g, bound, ["a", "b", "c"])
    z = enc.span_vector(out, 1, 1)
    d = enc.config.embed_dim
    np.testing.assert_allclose(z.data[:d], out.c.data[1], atol=1e-12)
    np.testing.assert_allclose(z.data[d:d + 8], out.u.data[1], atol=1e-12)
    assert z.size == enc.z_dim


def test_span_vector_zero_attention_vector_gives_mean():
    enc, params = make_encoder()
    params.get("shared/span_attn/w")[...] = 0.0
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    out = enc.run(g, bound, ["a", "b", "c", "d"])
    z = enc.span_vector(out, 0, 2)
    d = enc.config.embed_dim
    np.testing.assert_allclose(z.data[:d], out.c.data[0:3].mean(axis=0), atol=1e-12)


def test_span_attention_weights_sum_to_one():
    enc, params = make_encoder()
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    out = enc.run(g, bound, ["a", "b", "c", "d", "e"])
    for b in range(5):
        for e in range(b, 5):
            alpha = ad.softmax(out.token_scores[b:e + 1])
            assert alpha.data.min() >= 0
            assert abs(alpha.data.sum() - 1.0) < 1e-9


def test_span_vector_index_out_of_range():
    enc, params = make_encoder()
    g = ad.Graph()
    bound = ad.BoundParams(g, params)
    out = enc.run(g, bound, ["a", "b"])
    with pytest.raises(IndexOutOfRange):
        enc.span_vector(out, 1, 2)


def test_no_cross_sentence_leakage():
    enc, params = make_encoder()
    first = run_encoder(enc, params, ["a", "b", "c"]).u.data
    second = run_encoder(enc, params, ["d", "e"]).u.data
    # same sentences encoded in the other order give identical results
    second_again = run_encoder(enc, params, ["d", "e"]).u.data
    first_again = run_encoder(enc, params, ["a", "b", "c"]).u.data
    np.testing.assert_array_equal(first, first_again)
    np.testing.assert_array_equal(second, second_again)


def test_pretrained_vectors_loaded(tmp_path):
    path = tmp_path / "vecs.txt"
    path.write_text("a 1 2 3\nb 4 5 6\nbroken 1 2\n")
    vectors = load_pretrained_vectors(path, 3)
    assert set(vectors) == {"a", "b"}
    config = tiny_config(embed_dim=3, pretrained_vectors=str(path))
    vocab = build_vocab([["a", "c"]])
    enc = Encoder(config, vocab)
    params = Parameters()
    enc.init_params(params, np.random.default_rng(0))
    table = params.get("shared/embed/table")
    np.testing.assert_array_equal(table[vocab["a"]], [1, 2, 3])


def test_encoder_gradients_flow_everywhere():
    """grad_check through span_representation reaches every parameter group."""
    config = tiny_config(embed_dim=4, bilstm_hidden=3, attn_layers=1, attn_heads=2)
    vocab = build_vocab([["a", "b", "c"]])
    enc = Encoder(config, vocab)
    params = Parameters()
    enc.init_params(params, np.random.default_rng(1))
    tokens = ["a", "b", "c"]

    def loss_fn(p):
        g = ad.Graph()
        bound = ad.BoundParams(g, p)
        out = enc.run(g, bound, tokens)
        z1 = enc.span_vector(out, 0, 2)
        z2 = enc.span_vector(out, 1, 1)
        return ad.reduce_mean(ad.tanh(ad.concat([z1, z2])))

    err = grad_check(loss_fn, params)
    assert err < 1e-3

    # every parameter group actually receives gradient somewhere
    loss = loss_fn(params)
    grads = ad.parameter_gradients(loss.graph, loss, params.names(), params)
    for name in ("shared/span_attn/w", "shared/embed/table",
                 "shared/lstm0/fw/w_x", "shared/attn0/h0/wq"):
        assert np.abs(grads[name]).sum() > 0, name
