"""Task-agnostic span/relation scoring.

The pipeline per instance: enumerate candidate spans, classify each over the
task's span labels plus the index-0 "not a span" sentinel, keep the top
K = ceil(ratio * n) candidates (or a fixed count) by lowest sentinel
probability, score every ordered pair of kept spans over the relation labels
plus the "no relation" sentinel, and reduce to one of two losses: independent
per-pair cross-entropy, or antecedent-set likelihood for coreference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import Encoder, EncoderConfig
from .optim import Parameters, glorot_uniform
from .schema import SentenceInstance, TaskSchema


@dataclass
class SpanCandidate:
    b: int
    e: int
    index: int  # row in the candidate matrix
    label_logits: np.ndarray  # |L|+1
    label_probs: np.ndarray
    neg_prob: float

    def argmax_label(self) -> int:
        return int(np.argmax(self.label_probs))


@dataclass
class ScoredPair:
    head: int  # index into the kept-candidate list
    tail: int
    scores: np.ndarray  # |R|+1 logits

    def argmax_label(self) -> int:
        return int(np.argmax(self.scores))


def enumerate_spans(n: int, schema: TaskSchema,
                    gold: list[tuple[int, int]] | None = None) -> list[tuple[int, int]]:
    """All (b, e) with width <= the task bound, in (b, e) order.

    In gold-span mode the gold boundaries are the candidate set.
    """
    if n < 1:
        raise ValueError("sentence must have at least one token")
    if schema.gold_span_mode:
        if gold is None:
            raise ValueError("gold-span mode needs the gold boundaries")
        return sorted(set(gold))
    limit = n if schema.max_span_length is None else min(schema.max_span_length, n)
    return [(b, e) for b in range(n) for e in range(b, min(b + limit, n))]


def prune_count(schema: TaskSchema, n: int, n_candidates: int) -> int:
    """K: fixed override if set, else max(1, ceil(ratio * n)), capped."""
    if schema.pruning_fixed is not None:
        k = schema.pruning_fixed
    elif schema.pruning_ratio is not None:
        k = max(1, math.ceil(schema.pruning_ratio * n))
    else:
        k = n_candidates
    return min(k, n_candidates)


def prune_spans(candidates: list[SpanCandidate], schema: TaskSchema,
                n: int) -> list[SpanCandidate]:
    """Keep the K candidates with the lowest sentinel probability.

    Ties break toward earlier (b, e); the kept list stays in (b, e) order.
    """
    k = prune_count(schema, n, len(candidates))
    ranked = sorted(candidates, key=lambda c: (c.neg_prob, c.b, c.e))
    kept = sorted(ranked[:k], key=lambda c: (c.b, c.e))
    return kept


# ---------------------------------------------------------------------------
# loss building blocks


def cross_entropy_mean(logits: ad.Value, gold: np.ndarray) -> ad.Value:
    """Mean negative log-softmax of the gold class per row."""
    g = logits.graph
    n, n_classes = logits.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), gold] = 1.0
    logp = ad.log(ad.softmax(logits, axis=-1))
    return ad.scale(ad.reduce_sum(ad.mul(logp, g.constant(onehot))), -1.0 / n)


def antecedent_nll(scores: ad.Value, gold_positions: set[int]) -> ad.Value:
    """-log sum of softmax probabilities at the gold positions.

    `scores` is a 1-D vector whose position 0 is the dummy antecedent.
    """
    probs = ad.softmax(scores)
    mask = np.zeros(scores.size)
    for pos in gold_positions:
        mask[pos] = 1.0
    picked = ad.reduce_sum(ad.mul(probs, scores.graph.constant(mask)))
    return ad.scale(ad.log(picked), -1.0)


# ---------------------------------------------------------------------------
# task heads


class MLP:
    """Fixed-depth relu MLP with dropout on hidden layers."""

    def __init__(self, prefix: str, in_dim: int, hidden: int, layers: int,
                 out_dim: int, dropout: float):
        self.prefix = prefix
        self.in_dim = in_dim
        self.hidden = hidden
        self.layers = layers
        self.out_dim = out_dim
        self.dropout = dropout

    def init_params(self, params: Parameters, rng: np.random.Generator) -> None:
        in_dim = self.in_dim
        for i in range(self.layers):
            params.add(f"{self.prefix}l{i}/w", glorot_uniform(rng, (in_dim, self.hidden)))
            # small positive bias: keeps relu units off the exact kink at init
            params.add(f"{self.prefix}l{i}/b", np.full(self.hidden, 0.01))
            in_dim = self.hidden
        params.add(f"{self.prefix}out/w", glorot_uniform(rng, (in_dim, self.out_dim)))
        params.add(f"{self.prefix}out/b", np.zeros(self.out_dim))

    def apply(self, bound: ad.BoundParams, x: ad.Value, train: bool = False,
              rng=None) -> ad.Value:
        h = x
        for i in range(self.layers):
            h = ad.relu(ad.add(ad.matmul(h, bound[f"{self.prefix}l{i}/w"]),
                               bound[f"{self.prefix}l{i}/b"]))
            h = ad.dropout(h, self.dropout, train, rng)
        return ad.add(ad.matmul(h, bound[f"{self.prefix}out/w"]),
                      bound[f"{self.prefix}out/b"])


class TaskHead:
    """Per-task label predictors: span classifier plus optional pair scorer."""

    def __init__(self, task: str, schema: TaskSchema, z_dim: int, config: EncoderConfig):
        self.task = task
        self.schema = schema
        prefix = f"head/{task}/"
        self.span_mlp = MLP(prefix + "span/", z_dim, config.mlp_hidden,
                            config.mlp_layers, len(schema.span_label_list()),
                            config.dropout)
        self.rel_mlp = None
        if schema.relation_labels:
            self.rel_mlp = MLP(prefix + "rel/", 3 * z_dim, config.mlp_hidden,
                               config.mlp_layers, len(schema.relation_label_list()),
                               config.dropout)

    def init_params(self, params: Parameters, rng) -> None:
        self.span_mlp.init_params(params, rng)
        if self.rel_mlp is not None:
            self.rel_mlp.init_params(params, rng)

    def param_prefix(self) -> str:
        return f"head/{self.task}/"


@dataclass
class ForwardResult:
    loss: ad.Value | None
    candidates: list[SpanCandidate]
    kept: list[SpanCandidate]
    pairs: list[ScoredPair]
    pair_probs: np.ndarray | None  # P x (|R|+1)
    antecedent_scores: list[np.ndarray] = field(default_factory=list)  # coref decode
    attention_maps: list[np.ndarray] = field(default_factory=list)
    pruned_gold_relations: int = 0
    dummy_fallbacks: int = 0
    span_loss: float = 0.0
    rel_loss: float = 0.0


class SpanRelModel:
    """Shared encoder plus one TaskHead per task."""

    def __init__(self, config: EncoderConfig, vocab: dict[str, int],
                 schemas: dict[str, TaskSchema]):
        self.config = config
        self.encoder = Encoder(config, vocab)
        self.heads = {task: TaskHead(task, schema, self.encoder.z_dim, config)
                      for task, schema in schemas.items()}
        self.schemas = dict(schemas)

    def init_params(self, rng: np.random.Generator) -> Parameters:
        params = Parameters()
        self.encoder.init_params(params, rng)
        for task in sorted(self.heads):
            self.heads[task].init_params(params, rng)
        return params

    def active_prefixes(self, task: str) -> list[str]:
        return ["shared/", f"head/{task}/"]

    def trainable_names(self, params: Parameters, task: str) -> list[str]:
        frozen = self.encoder.frozen_param_names()
        view = params.subset(self.active_prefixes(task))
        return [n for n in view.names() if n not in frozen]

    # -- forward pass --------------------------------------------------------

    def forward(self, g: ad.Graph, bound: ad.BoundParams, inst: SentenceInstance,
                train: bool = False, rng=None, compute_loss: bool = True) -> ForwardResult:
        schema = self.schemas[inst.task]
        head = self.heads[inst.task]
        n = len(inst.tokens)

        enc = self.encoder.run(g, bound, inst.tokens, train, rng)
        boundaries = enumerate_spans(n, schema, gold=inst.gold_candidates())
        if not boundaries:  # gold-span mode with an unannotated sentence
            return ForwardResult(loss=None, candidates=[], kept=[], pairs=[],
                                 pair_probs=None,
                                 attention_maps=enc.attention_arrays())
        z_rows = [self.encoder.span_vector(enc, b, e) for b, e in boundaries]
        z_matrix = ad.stack_rows(z_rows)

        span_logits = head.span_mlp.apply(bound, z_matrix, train, rng)
        span_probs = ad.softmax(span_logits, axis=-1)
        candidates = [
            SpanCandidate(b=b, e=e, index=i,
                          label_logits=span_logits.data[i],
                          label_probs=span_probs.data[i],
                          neg_prob=float(span_probs.data[i, 0]))
            for i, (b, e) in enumerate(boundaries)
        ]

        gold_span_label = {(b, e): li for b, e, li in reversed(inst.gold_spans)}
        gold_labels = np.array(
            [gold_span_label.get((c.b, c.e), 0) for c in candidates], dtype=np.intp)

        loss = None
        span_loss_term = None
        if compute_loss:
            span_loss_term = cross_entropy_mean(span_logits, gold_labels)
            loss = span_loss_term

        result = ForwardResult(loss=loss, candidates=candidates, kept=[], pairs=[],
                               pair_probs=None,
                               attention_maps=enc.attention_arrays())
        if span_loss_term is not None:
            result.span_loss = span_loss_term.item()

        if not schema.relation_labels:
            return result

        kept = prune_spans(candidates, schema, n)
        result.kept = kept
        k = len(kept)
        pair_index = [(j, t) for j in range(k) for t in range(k) if j != t]
        assert len(pair_index) == k * (k - 1)
        if schema.pruning_ratio is not None:
            assert len(pair_index) <= math.ceil(schema.pruning_ratio * n) ** 2

        if not pair_index:
            return result

        kept_rows = np.array([c.index for c in kept], dtype=np.intp)
        z_kept = ad.embedding_lookup(z_matrix, kept_rows)
        j_rows = ad.embedding_lookup(z_kept, np.array([j for j, _ in pair_index]))
        t_rows = ad.embedding_lookup(z_kept, np.array([t for _, t in pair_index]))
        feats = ad.concat([j_rows, t_rows, ad.mul(j_rows, t_rows)], axis=1)
        rel_logits = head.rel_mlp.apply(bound, feats, train, rng)
        rel_probs_data = ad.softmax(rel_logits, axis=-1).data

        result.pairs = [ScoredPair(head=j, tail=t, scores=rel_logits.data[p])
                        for p, (j, t) in enumerate(pair_index)]
        result.pair_probs = rel_probs_data

        kept_pos = {(c.b, c.e): pos for pos, c in enumerate(kept)}
        row_of_pair = {pair: row for row, pair in enumerate(pair_index)}

        if schema.loss_mode == "head":
            rel_term, scores_np = self._head_loss(
                rel_logits, kept, kept_pos, row_of_pair, inst, schema, result)
            result.antecedent_scores = scores_np
        else:
            rel_term = self._pairwise_loss(
                rel_logits, pair_index, kept_pos, inst, result) if compute_loss else None

        if compute_loss and rel_term is not None:
            result.rel_loss = rel_term.item()
            result.loss = ad.add(loss, rel_term)
        return result

    def _pairwise_loss(self, rel_logits: ad.Value, pair_index, kept_pos, inst,
                       result: ForwardResult) -> ad.Value:
        gold_by_boundary = {}
        for h, t, li in inst.gold_relations:
            hb, he, _ = inst.gold_spans[h]
            tb, te, _ = inst.gold_spans[t]
            gold_by_boundary[((hb, he), (tb, te))] = li

        kept_boundary = {pos: be for be, pos in kept_pos.items()}
        gold_labels = np.zeros(len(pair_index), dtype=np.intp)
        matched = set()
        for row, (j, t) in enumerate(pair_index):
            key = (kept_boundary[j], kept_boundary[t])
            if key in gold_by_boundary:
                gold_labels[row] = gold_by_boundary[key]
                matched.add(key)
        result.pruned_gold_relations = len(gold_by_boundary) - len(matched)
        return cross_entropy_mean(rel_logits, gold_labels)

    def _head_loss(self, rel_logits: ad.Value, kept, kept_pos, row_of_pair,
                   inst, schema: TaskSchema, result: ForwardResult):
        """Antecedent likelihood over kept spans in document order."""
        g = rel_logits.graph
        rel_index = 1  # single real relation label for head-mode tasks
        cluster_of = _gold_clusters(inst)

        terms = []
        scores_np: list[np.ndarray] = []
        zero = g.constant(np.zeros(1))
        for j in range(len(kept)):
            rows = [row_of_pair[(j, t)] for t in range(j)]
            if rows:
                picked = ad.embedding_lookup(rel_logits, np.array(rows, dtype=np.intp))
                scalars = picked[:, rel_index]
                scores = ad.concat([zero, scalars])
            else:
                scores = zero
            scores_np.append(scores.data.copy())

            gold = self._gold_antecedents(j, kept, cluster_of, inst, result)
            terms.append(antecedent_nll(scores, gold))
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(total, term)
        return ad.scale(total, 1.0 / len(terms)), scores_np

    def _gold_antecedents(self, j, kept, cluster_of, inst,
                          result: ForwardResult) -> set[int]:
        """Positions (1-based; 0 = dummy) of gold antecedents among kept spans."""
        me = (kept[j].b, kept[j].e)
        cluster = cluster_of.get(me)
        if cluster is None:
            return {0}
        gold = {t + 1 for t in range(j) if cluster_of.get((kept[t].b, kept[t].e)) == cluster}
        if gold:
            return gold
        # does an earlier gold mention of this cluster exist at all?
        earlier = [be for be, cl in cluster_of.items() if cl == cluster and be < me]
        if earlier:
            result.dummy_fallbacks += 1
        return {0}


def _gold_clusters(inst: SentenceInstance) -> dict[tuple[int, int], int]:
    """Union-find the gold coreference links into cluster ids per boundary."""
    parent = list(range(len(inst.gold_spans)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for h, t, _ in inst.gold_relations:
        rh, rt = find(h), find(t)
        if rh != rt:
            parent[rh] = rt

    roots = {i: find(i) for i in range(len(inst.gold_spans))}
    linked = {r for r in roots.values() if sum(1 for v in roots.values() if v == r) > 1}
    out = {}
    for i, (b, e, _li) in enumerate(inst.gold_spans):
        root = roots[i]
        if root in linked:
            out[(b, e)] = root
    return out
