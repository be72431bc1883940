"""Token and span encoding.

Tokens are embedded (optionally from pretrained text vectors), passed through
an optional stack of multi-head self-attention layers whose per-head n-by-n
softmax maps are recorded for later analysis, then through a stacked BiLSTM.
A span (b, e) is represented by concatenating a learned attention-weighted
average of the token embeddings inside the span with the contextual vectors
at its two boundary positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .optim import Parameters, embedding_init, glorot_uniform

UNK_TOKEN = "<unk>"


class EmptySentence(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class NoAttentionLayers(ValueError):
    pass


@dataclass
class EncoderConfig:
    embed_dim: int = 100
    bilstm_layers: int = 3
    bilstm_hidden: int = 256  # per direction
    attn_layers: int = 0
    attn_heads: int = 4
    dropout: float = 0.5
    mlp_hidden: int = 128
    mlp_layers: int = 2
    pretrained_vectors: str | None = None
    trainable_embeddings: bool = True

    def __post_init__(self):
        if self.attn_layers > 0 and self.embed_dim % self.attn_heads != 0:
            raise ValueError("embed_dim must be divisible by attn_heads")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**data)


def build_vocab(token_lists, min_count: int = 1) -> dict[str, int]:
    """Token -> index map with the unknown token at index 0."""
    counts: dict[str, int] = {}
    for tokens in token_lists:
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = {UNK_TOKEN: 0}
    for tok in sorted(counts):
        if counts[tok] >= min_count and tok != UNK_TOKEN:
            vocab[tok] = len(vocab)
    return vocab


def load_pretrained_vectors(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    """Read a text embedding file: one line per token, token then floats."""
    vectors = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.rstrip().split(" ")
        if len(parts) != dim + 1:
            continue
        vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    return vectors


@dataclass
class EncodedSentence:
    c: ad.Value  # n x embed_dim token representations
    u: ad.Value  # n x 2*hidden contextual representations
    token_scores: ad.Value  # n, content-attention scores per token
    attention_maps: list[list[ad.Value]] = field(default_factory=list)  # [layer][head]

    def attention_arrays(self) -> list[np.ndarray]:
        """Flattened per-head map data in (layer, head) order."""
        return [m.data for layer in self.attention_maps for m in layer]


class Encoder:
    """Trainable token/span encoder; parameters live under the given prefix."""

    def __init__(self, config: EncoderConfig, vocab: dict[str, int],
                 prefix: str = "shared/"):
        if UNK_TOKEN not in vocab or vocab[UNK_TOKEN] != 0:
            raise ValueError(f"vocab must map {UNK_TOKEN!r} to index 0")
        self.config = config
        self.vocab = vocab
        self.prefix = prefix

    @property
    def z_dim(self) -> int:
        # content part + contextual vectors at both boundaries
        return self.config.embed_dim + 4 * self.config.bilstm_hidden

    def token_ids(self, tokens: list[str]) -> np.ndarray:
        unk = self.vocab[UNK_TOKEN]
        return np.array([self.vocab.get(t, unk) for t in tokens], dtype=np.intp)

    # -- parameter setup ----------------------------------------------------

    def init_params(self, params: Parameters, rng: np.random.Generator) -> None:
        cfg = self.config
        table = embedding_init(rng, (len(self.vocab), cfg.embed_dim))
        if cfg.pretrained_vectors:
            vectors = load_pretrained_vectors(cfg.pretrained_vectors, cfg.embed_dim)
            for token, idx in self.vocab.items():
                if token in vectors:
                    table[idx] = vectors[token]
        params.add(self.prefix + "embed/table", table)

        d = cfg.embed_dim
        dh = d // cfg.attn_heads if cfg.attn_layers else 0
        for layer in range(cfg.attn_layers):
            for head in range(cfg.attn_heads):
                base = f"{self.prefix}attn{layer}/h{head}/"
                params.add(base + "wq", glorot_uniform(rng, (d, dh)))
                params.add(base + "wk", glorot_uniform(rng, (d, dh)))
                params.add(base + "wv", glorot_uniform(rng, (d, dh)))
            params.add(f"{self.prefix}attn{layer}/wo", glorot_uniform(rng, (d, d)))
            params.add(f"{self.prefix}attn{layer}/bo", np.zeros(d))

        h = cfg.bilstm_hidden
        in_dim = d
        for layer in range(cfg.bilstm_layers):
            for direction in ("fw", "bw"):
                base = f"{self.prefix}lstm{layer}/{direction}/"
                params.add(base + "w_x", glorot_uniform(rng, (in_dim, 4 * h)))
                params.add(base + "w_h", glorot_uniform(rng, (h, 4 * h)))
                bias = np.zeros(4 * h)
                bias[h:2 * h] = 1.0  # forget gate bias
                params.add(base + "b", bias)
            in_dim = 2 * h

        params.add(self.prefix + "span_attn/w", glorot_uniform(rng, (d,)))

    def frozen_param_names(self) -> set[str]:
        if not self.config.trainable_embeddings:
            return {self.prefix + "embed/table"}
        return set()

    # -- forward ------------------------------------------------------------

    def embed_tokens(self, g: ad.Graph, bound: ad.BoundParams, tokens: list[str],
                     train: bool = False, rng=None) -> ad.Value:
        if not tokens:
            raise EmptySentence("cannot encode an empty token list")
        ids = self.token_ids(tokens)
        name = self.prefix + "embed/table"
        if self.config.trainable_embeddings:
            table = bound[name]
        else:
            table = g.constant(bound.params.get(name))
        c = ad.embedding_lookup(table, ids)
        return ad.dropout(c, self.config.dropout, train, rng)

    def _attention_layer(self, g, bound, x: ad.Value, layer: int, train, rng):
        cfg = self.config
        dh = cfg.embed_dim // cfg.attn_heads
        inv_sqrt = 1.0 / np.sqrt(dh)
        heads = []
        maps = []
        for head in range(cfg.attn_heads):
            base = f"{self.prefix}attn{layer}/h{head}/"
            q = ad.matmul(x, bound[base + "wq"])
            k = ad.matmul(x, bound[base + "wk"])
            v = ad.matmul(x, bound[base + "wv"])
            scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
            attn = ad.softmax(scores, axis=-1)
            maps.append(attn)
            heads.append(ad.matmul(attn, v))
        merged = ad.concat(heads, axis=1)
        out = ad.add(ad.matmul(merged, bound[f"{self.prefix}attn{layer}/wo"]),
                     bound[f"{self.prefix}attn{layer}/bo"])
        out = ad.dropout(out, cfg.dropout, train, rng)
        return ad.add(x, out), maps

    def _lstm_direction(self, g, bound, x: ad.Value, layer: int, direction: str):
        cfg = self.config
        h_size = cfg.bilstm_hidden
        n = x.shape[0]
        base = f"{self.prefix}lstm{layer}/{direction}/"
        xw = ad.add(ad.matmul(x, bound[base + "w_x"]), bound[base + "b"])  # n x 4h
        w_h = bound[base + "w_h"]
        order = range(n) if direction == "fw" else range(n - 1, -1, -1)
        h_prev = g.constant(np.zeros(h_size))
        c_prev = g.constant(np.zeros(h_size))
        outputs: list[ad.Value | None] = [None] * n
        for t in order:
            gates = ad.add(xw[t], ad.matmul(h_prev, w_h))  # (4h,)
            i_g = ad.sigmoid(gates[0:h_size])
            f_g = ad.sigmoid(gates[h_size:2 * h_size])
            g_g = ad.tanh(gates[2 * h_size:3 * h_size])
            o_g = ad.sigmoid(gates[3 * h_size:4 * h_size])
            c_prev = ad.add(ad.mul(f_g, c_prev), ad.mul(i_g, g_g))
            h_prev = ad.mul(o_g, ad.tanh(c_prev))
            outputs[t] = h_prev
        return ad.stack_rows(outputs)

    def contextualize(self, g: ad.Graph, bound: ad.BoundParams, c: ad.Value,
                      train: bool = False, rng=None):
        """Self-attention stack (recording maps) followed by the BiLSTM."""
        cfg = self.config
        x = c
        maps: list[list[ad.Value]] = []
        for layer in range(cfg.attn_layers):
            x, layer_maps = self._attention_layer(g, bound, x, layer, train, rng)
            maps.append(layer_maps)
        for layer in range(cfg.bilstm_layers):
            fw = self._lstm_direction(g, bound, x, layer, "fw")
            bw = self._lstm_direction(g, bound, x, layer, "bw")
            x = ad.concat([fw, bw], axis=1)
            if layer < cfg.bilstm_layers - 1:
                x = ad.dropout(x, cfg.dropout, train, rng)
        return x, maps

    def run(self, g: ad.Graph, bound: ad.BoundParams, tokens: list[str],
            train: bool = False, rng=None) -> EncodedSentence:
        c = self.embed_tokens(g, bound, tokens, train, rng)
        u, maps = self.contextualize(g, bound, c, train, rng)
        token_scores = ad.matmul(c, bound[self.prefix + "span_attn/w"])  # (n,)
        return EncodedSentence(c=c, u=u, token_scores=token_scores,
                               attention_maps=maps)

    def span_vector(self, enc: EncodedSentence, b: int, e: int) -> ad.Value:
        """z = [weighted content average ; u_b ; u_e] for inclusive (b, e)."""
        n = enc.c.shape[0]
        if not (0 <= b <= e < n):
            raise IndexOutOfRange(f"span ({b}, {e}) outside sentence of length {n}")
        alpha = ad.softmax(enc.token_scores[b:e + 1])
        zc = ad.matmul(alpha, enc.c[b:e + 1])
        return ad.concat([zc, enc.u[b], enc.u[e]])
