"""Turn span and pair scores into task-valid outputs.

Four inference procedures: generic thresholding by the sentinel labels,
greedy antecedent linking for coreference, greedy top-down splitting for
constituency trees, and per-word head selection for dependencies. All of
them are pure functions over the score arrays carried by ForwardResult.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import brat
from .model import ForwardResult, ScoredPair, SpanCandidate
from .schema import SentenceInstance, TaskSchema


@dataclass
class Tree:
    """Labeled constituency node over inclusive token span (b, e)."""
    label: str
    b: int
    e: int
    children: list["Tree"] = field(default_factory=list)

    def brackets(self) -> list[tuple[int, int, str]]:
        out = [(self.b, self.e, self.label)]
        for child in self.children:
            out.extend(child.brackets())
        return out


@dataclass
class Prediction:
    spans: list[tuple[int, int, str]] = field(default_factory=list)
    relations: list[tuple[int, int, str]] = field(default_factory=list)  # span indices
    clusters: list[frozenset[tuple[int, int]]] | None = None
    tree: Tree | None = None
    attachments: dict[int, tuple[int, str]] | None = None  # dep: token -> (head, label)


# ---------------------------------------------------------------------------
# generic


def decode_generic(candidates: list[SpanCandidate], kept: list[SpanCandidate],
                   pairs: list[ScoredPair], schema: TaskSchema) -> Prediction:
    """Spans whose argmax label is real; relations likewise, endpoints kept."""
    span_labels = schema.span_label_list()
    rel_labels = schema.relation_label_list()
    spans = []
    span_index: dict[tuple[int, int], int] = {}
    for cand in candidates:
        label = cand.argmax_label()
        if label != 0:
            span_index[(cand.b, cand.e)] = len(spans)
            spans.append((cand.b, cand.e, span_labels[label]))
    relations = []
    for pair in pairs:
        label = pair.argmax_label()
        if label == 0:
            continue
        head = (kept[pair.head].b, kept[pair.head].e)
        tail = (kept[pair.tail].b, kept[pair.tail].e)
        if head in span_index and tail in span_index:
            relations.append((span_index[head], span_index[tail], rel_labels[label]))
    return Prediction(spans=spans, relations=relations)


# ---------------------------------------------------------------------------
# coreference


def decode_coref(kept: list[SpanCandidate],
                 antecedent_scores: list[np.ndarray]) -> Prediction:
    """Link each span to its best-scoring earlier span (or the dummy).

    Position 0 of each score vector is the dummy antecedent; links only point
    backward, so the link graph is acyclic. Clusters are the connected
    components; singletons are discarded.
    """
    links: list[tuple[int, int]] = []
    for j, scores in enumerate(antecedent_scores):
        choice = int(np.argmax(scores))
        if choice != 0:
            links.append((j, choice - 1))

    parent = list(range(len(kept)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in links:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    members: dict[int, list[int]] = {}
    for i in range(len(kept)):
        members.setdefault(find(i), []).append(i)

    clusters = [frozenset((kept[i].b, kept[i].e) for i in group)
                for group in members.values() if len(group) > 1]
    clusters.sort(key=lambda c: sorted(c))

    spans = []
    span_index = {}
    relations = []
    for j, k in links:
        for idx in (k, j):
            be = (kept[idx].b, kept[idx].e)
            if be not in span_index:
                span_index[be] = len(spans)
                spans.append((be[0], be[1], "mention"))
        relations.append((span_index[(kept[j].b, kept[j].e)],
                          span_index[(kept[k].b, kept[k].e)], "coref"))
    return Prediction(spans=spans, relations=relations, clusters=clusters)


# ---------------------------------------------------------------------------
# constituency


def span_score_matrix(candidates: list[SpanCandidate], n: int) -> np.ndarray:
    """Dense (n, n, |L|+1) logit tensor; entry [b, e] for spans b <= e."""
    n_classes = candidates[0].label_logits.shape[0]
    scores = np.full((n, n, n_classes), -np.inf)
    for cand in candidates:
        scores[cand.b, cand.e] = cand.label_logits
    return scores


def decode_constituency(scores: np.ndarray, n: int, labels: list[str]) -> Tree:
    """Greedy top-down split decoding over per-span label scores.

    The root takes its best real label; internal spans may take the index-0
    sentinel, which collapses the node and splices its children upward. The
    split point maximizes the sum of the children's best scores (any label).
    Returns the tree root; output brackets never cross and cover (0, n-1).
    """

    def best_any(b, e) -> float:
        return float(np.max(scores[b, e]))

    def walk(b, e, is_root) -> list[Tree]:
        vec = scores[b, e]
        if is_root:
            label_idx = 1 + int(np.argmax(vec[1:]))
        else:
            label_idx = int(np.argmax(vec))
        if b == e:
            children = []
        else:
            split_gains = [best_any(b, m) + best_any(m + 1, e) for m in range(b, e)]
            m = b + int(np.argmax(split_gains))
            children = walk(b, m, False) + walk(m + 1, e, False)
        if label_idx == 0:
            return children  # unlabeled: splice grandchildren into the parent
        return [Tree(labels[label_idx], b, e, children)]

    return walk(0, n - 1, True)[0]


# ---------------------------------------------------------------------------
# dependency


def pair_prob_tensor(kept: list[SpanCandidate], pairs: list[ScoredPair],
                     pair_probs: np.ndarray, n: int) -> np.ndarray:
    """Dense (n, n, |R|+1) tensor of pair probabilities indexed by word."""
    n_classes = pair_probs.shape[1]
    tensor = np.zeros((n, n, n_classes))
    for row, pair in enumerate(pairs):
        j = kept[pair.head].b
        k = kept[pair.tail].b
        tensor[j, k] = pair_probs[row]
    return tensor


def decode_dependency(probs: np.ndarray, n: int, rel_labels: list[str],
                      root_label: str = "root") -> Prediction:
    """Attach every word to its highest-probability head.

    `probs[j, k]` are the relation probabilities of head word j and dependent
    word k (index 0 = no relation). A word attaches to the virtual root when
    the sentinel outweighs the best real label at its best head. Ties break
    toward the lowest head index and lowest label index.
    """
    attachments: dict[int, tuple[int, str]] = {}
    for k in range(n):
        best_j, best_prob, best_label = -1, -1.0, 0
        for j in range(n):
            if j == k:
                continue
            real = probs[j, k, 1:]
            label = 1 + int(np.argmax(real))
            prob = float(real[label - 1])
            if prob > best_prob:
                best_j, best_prob, best_label = j, prob, label
        if best_j < 0 or probs[best_j, k, 0] > best_prob:
            attachments[k] = (-1, root_label)
        else:
            attachments[k] = (best_j, rel_labels[best_label])

    spans = [(k, k, root_label if attachments[k][0] < 0 else "word") for k in range(n)]
    relations = [(attachments[k][0], k, attachments[k][1])
                 for k in range(n) if attachments[k][0] >= 0]
    return Prediction(spans=spans, relations=relations, attachments=attachments)


# ---------------------------------------------------------------------------
# dispatch and document assembly


def decode_instance(result: ForwardResult, inst: SentenceInstance,
                    schema: TaskSchema) -> Prediction:
    n = len(inst.tokens)
    if schema.decoder == "coref":
        return decode_coref(result.kept, result.antecedent_scores)
    if schema.decoder == "constituency":
        if not result.candidates:
            return Prediction()
        scores = span_score_matrix(result.candidates, n)
        tree = decode_constituency(scores, n, schema.span_label_list())
        return Prediction(spans=tree.brackets(), tree=tree)
    if schema.decoder == "dependency":
        probs = pair_prob_tensor(result.kept, result.pairs,
                                 result.pair_probs, n) if result.pairs else \
            np.zeros((n, n, len(schema.relation_label_list())))
        return decode_dependency(probs, n, schema.relation_label_list(),
                                 schema.root_label)
    return decode_generic(result.candidates, result.kept, result.pairs, schema)


def assemble_document(doc: brat.Document, schema: TaskSchema,
                      instances: list[SentenceInstance],
                      predictions: list[Prediction]) -> brat.Document:
    """Merge per-instance predictions back into one annotated document."""
    all_spans: list[tuple[int, int, str]] = []
    all_rels: list[tuple[int, int, str]] = []
    for inst, pred in zip(instances, predictions):
        offset = (0 if inst.sentence_index is None
                  else doc.sentence_token_offset(inst.sentence_index))
        base = len(all_spans)
        all_spans.extend((b + offset, e + offset, label) for b, e, label in pred.spans)
        all_rels.extend((base + h, base + t, label) for h, t, label in pred.relations)
    return brat.replace_annotations(doc, all_spans, all_rels)
