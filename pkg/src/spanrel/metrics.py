"""Evaluation metrics over aligned gold/predicted BRAT documents.

Span F1 credits a predicted span iff its boundaries and label all match a
gold span (multiset semantics: each gold matches at most one prediction);
relation F1 requires both endpoint boundaries plus the relation label.
Dependency accuracy (LAS) is per-word over (head, label) pairs. Constituency
bracket F1 is the labeled-bracket multiset F1. Coreference reports MUC, B3,
CEAF-phi4 and their mean. Accuracy and macro F1 cover the gold-span tasks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .brat import Document
from .decoders import Tree


class DocumentMismatch(ValueError):
    pass


class MissingHead(ValueError):
    pass


@dataclass
class MetricReport:
    task: str
    metric: str
    precision: float
    recall: float
    f1: float
    support: int = 0
    per_label: dict[str, dict[str, float]] = field(default_factory=dict)
    details: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task": self.task, "metric": self.metric,
                "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "support": self.support, "per_label": self.per_label,
                "details": self.details}


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _prf(matched: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    return p, r, _f1(p, r)


def _check_aligned(gold: list[Document], pred: list[Document]) -> None:
    if len(gold) != len(pred):
        raise DocumentMismatch(f"{len(gold)} gold documents vs {len(pred)} predicted")
    for g, p in zip(gold, pred):
        if len(g.tokens()) != len(p.tokens()):
            raise DocumentMismatch(
                f"document {g.doc_id!r}: token counts differ ({len(g.tokens())} "
                f"vs {len(p.tokens())})")


def span_tuples(doc: Document) -> list[tuple[int, int, str]]:
    return [(s.token_begin, s.token_end, s.label) for s in doc.spans]


def relation_tuples(doc: Document) -> list[tuple[int, int, int, int, str]]:
    index = {s.span_id: s for s in doc.spans}
    out = []
    for r in doc.relations:
        h = index[r.head_span_id]
        t = index[r.tail_span_id]
        out.append((h.token_begin, h.token_end, t.token_begin, t.token_end, r.label))
    return out


def _multiset_report(task: str, metric: str, gold_items: list, pred_items: list,
                     label_of) -> MetricReport:
    gold_count = Counter(gold_items)
    pred_count = Counter(pred_items)
    matched = sum((gold_count & pred_count).values())
    p, r, f = _prf(matched, len(pred_items), len(gold_items))

    per_label: dict[str, dict[str, float]] = {}
    labels = {label_of(x) for x in gold_items} | {label_of(x) for x in pred_items}
    for label in sorted(labels):
        g = [x for x in gold_items if label_of(x) == label]
        pr = [x for x in pred_items if label_of(x) == label]
        m = sum((Counter(g) & Counter(pr)).values())
        lp, lr, lf = _prf(m, len(pr), len(g))
        per_label[label] = {"precision": lp, "recall": lr, "f1": lf,
                            "support": len(g)}
    return MetricReport(task=task, metric=metric, precision=p, recall=r, f1=f,
                        support=len(gold_items), per_label=per_label)


def span_f1(gold: list[Document], pred: list[Document], task: str = "") -> MetricReport:
    _check_aligned(gold, pred)
    gold_items = [(i, *t) for i, doc in enumerate(gold) for t in span_tuples(doc)]
    pred_items = [(i, *t) for i, doc in enumerate(pred) for t in span_tuples(doc)]
    return _multiset_report(task, "span_f1", gold_items, pred_items,
                            label_of=lambda x: x[-1])


def relation_f1(gold: list[Document], pred: list[Document], task: str = "") -> MetricReport:
    _check_aligned(gold, pred)
    gold_items = [(i, *t) for i, doc in enumerate(gold) for t in relation_tuples(doc)]
    pred_items = [(i, *t) for i, doc in enumerate(pred) for t in relation_tuples(doc)]
    return _multiset_report(task, "relation_f1", gold_items, pred_items,
                            label_of=lambda x: x[-1])


# ---------------------------------------------------------------------------
# dependency


def attachments_from_document(doc: Document, root_label: str = "root") -> list[tuple[int, str]]:
    """Per-word (head token index or -1, label); raises if any word lacks one."""
    n = len(doc.tokens())
    span_of_word: dict[int, str] = {}
    result: dict[int, tuple[int, str]] = {}
    for span in doc.spans:
        if span.token_begin != span.token_end:
            raise MissingHead(f"{doc.doc_id}: span {span.span_id} is not a single word")
        span_of_word[span.token_begin] = span.span_id
        if span.label == root_label:
            result[span.token_begin] = (-1, root_label)
    word_of_span = {v: k for k, v in span_of_word.items()}
    for rel in doc.relations:
        dep = word_of_span[rel.tail_span_id]
        head = word_of_span[rel.head_span_id]
        if dep in result:
            raise MissingHead(f"{doc.doc_id}: word {dep} has multiple heads")
        result[dep] = (head, rel.label)
    missing = [k for k in range(n) if k not in result]
    if missing:
        raise MissingHead(f"{doc.doc_id}: words {missing[:5]} have no head")
    return [result[k] for k in range(n)]


def las(gold: list[Document], pred: list[Document]) -> float:
    """Labeled attachment score: per-word (head, label) accuracy."""
    _check_aligned(gold, pred)
    correct = total = 0
    for g, p in zip(gold, pred):
        ga = attachments_from_document(g)
        pa = attachments_from_document(p)
        total += len(ga)
        correct += sum(1 for a, b in zip(ga, pa) if a == b)
    if total == 0:
        raise MissingHead("no words to score")
    return correct / total


# ---------------------------------------------------------------------------
# constituency


def _brackets(item) -> list[tuple[int, int, str]]:
    if isinstance(item, Tree):
        return item.brackets()
    if isinstance(item, Document):
        return span_tuples(item)
    raise TypeError(f"cannot extract brackets from {type(item).__name__}")


def bracket_f1(gold, pred, task: str = "") -> MetricReport:
    """Labeled-bracket multiset F1 over aligned trees or documents."""
    if len(gold) != len(pred):
        raise DocumentMismatch(f"{len(gold)} gold items vs {len(pred)} predicted")
    gold_items = [(i, *b) for i, t in enumerate(gold) for b in _brackets(t)]
    pred_items = [(i, *b) for i, t in enumerate(pred) for b in _brackets(t)]
    report = _multiset_report(task, "bracket_f1", gold_items, pred_items,
                              label_of=lambda x: x[-1])
    return report


# ---------------------------------------------------------------------------
# coreference


def clusters_from_document(doc: Document) -> list[frozenset[tuple[int, int]]]:
    """Connected components of coreference links, as boundary sets."""
    spans = {s.span_id: (s.token_begin, s.token_end) for s in doc.spans}
    parent = {sid: sid for sid in spans}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for rel in doc.relations:
        ra, rb = find(rel.head_span_id), find(rel.tail_span_id)
        if ra != rb:
            parent[ra] = rb
    groups: dict[str, set] = {}
    for sid in spans:
        groups.setdefault(find(sid), set()).add(spans[sid])
    return sorted((frozenset(g) for g in groups.values() if len(g) > 1),
                  key=lambda c: sorted(c))


def _muc_counts(keys, responses) -> tuple[int, int]:
    mapping = {m: i for i, resp in enumerate(responses) for m in resp}
    num = den = 0
    for key in keys:
        if len(key) < 2:
            continue
        den += len(key) - 1
        partitions = {mapping[m] for m in key if m in mapping}
        missing = sum(1 for m in key if m not in mapping)
        num += len(key) - len(partitions) - missing
    return num, den


def _b_cubed_counts(keys, responses) -> tuple[float, int]:
    """Sum over mentions of |key ∩ resp| / |key|, plus the mention count."""
    resp_of = {m: resp for resp in responses for m in resp}
    num = 0.0
    count = 0
    for key in keys:
        for mention in key:
            count += 1
            resp = resp_of.get(mention, frozenset())
            num += len(key & resp) / len(key)
    return num, count


def _ceaf_phi4_counts(keys, responses) -> tuple[float, int, int]:
    if not keys or not responses:
        return 0.0, len(responses), len(keys)
    sim = np.zeros((len(keys), len(responses)))
    for i, key in enumerate(keys):
        for j, resp in enumerate(responses):
            sim[i, j] = 2 * len(key & resp) / (len(key) + len(resp))
    rows, cols = linear_sum_assignment(-sim)
    total = float(sim[rows, cols].sum())
    # phi4(c, c) = 1, so each side's denominator is its cluster count
    return total, len(responses), len(keys)


def coref_avg_f1(gold_clusters: list[list[frozenset]],
                 pred_clusters: list[list[frozenset]],
                 task: str = "Coref") -> MetricReport:
    """MUC, B3, CEAF-phi4 aggregated over documents, and their mean F1."""
    if len(gold_clusters) != len(pred_clusters):
        raise DocumentMismatch("cluster lists differ in length")
    muc_r = [0, 0]
    muc_p = [0, 0]
    b3_r = [0.0, 0]
    b3_p = [0.0, 0]
    ceaf_num = 0.0
    ceaf_pd = 0
    ceaf_gd = 0
    for gold, pred in zip(gold_clusters, pred_clusters):
        gold = [set(c) for c in gold]
        pred = [set(c) for c in pred]
        n, d = _muc_counts(gold, pred)
        muc_r[0] += n
        muc_r[1] += d
        n, d = _muc_counts(pred, gold)
        muc_p[0] += n
        muc_p[1] += d
        n, d = _b_cubed_counts(gold, pred)
        b3_r[0] += n
        b3_r[1] += d
        n, d = _b_cubed_counts(pred, gold)
        b3_p[0] += n
        b3_p[1] += d
        n, pd, gd = _ceaf_phi4_counts(gold, pred)
        ceaf_num += n
        ceaf_pd += pd
        ceaf_gd += gd

    def ratio(num, den):
        return num / den if den else 0.0

    muc_prec, muc_rec = ratio(*muc_p), ratio(*muc_r)
    b3_prec, b3_rec = ratio(*b3_p), ratio(*b3_r)
    ceaf_prec, ceaf_rec = ratio(ceaf_num, ceaf_pd), ratio(ceaf_num, ceaf_gd)
    muc_f = _f1(muc_prec, muc_rec)
    b3_f = _f1(b3_prec, b3_rec)
    ceaf_f = _f1(ceaf_prec, ceaf_rec)
    avg = (muc_f + b3_f + ceaf_f) / 3.0
    return MetricReport(
        task=task, metric="coref_avg_f1",
        precision=(muc_prec + b3_prec + ceaf_prec) / 3.0,
        recall=(muc_rec + b3_rec + ceaf_rec) / 3.0,
        f1=avg, support=sum(len(c) for c in gold_clusters),
        details={"muc_precision": muc_prec, "muc_recall": muc_rec, "muc_f1": muc_f,
                 "b_cubed_precision": b3_prec, "b_cubed_recall": b3_rec,
                 "b_cubed_f1": b3_f, "ceaf_phi4_precision": ceaf_prec,
                 "ceaf_phi4_recall": ceaf_rec, "ceaf_phi4_f1": ceaf_f})


# ---------------------------------------------------------------------------
# accuracy and macro F1


def accuracy_and_macro_f1(gold: list[Document], pred: list[Document],
                          gold_span_mode: bool = True, mode: str = "accuracy",
                          exclude_label: str | None = None,
                          task: str = "") -> MetricReport:
    """Label accuracy on gold boundaries, or per-label macro F1 for relations.

    Accuracy scores the predicted label of every gold span boundary (missing
    predictions count as wrong). Macro F1 averages per-relation-label F1,
    skipping `exclude_label` (e.g. the catch-all class).
    """
    _check_aligned(gold, pred)
    if mode == "accuracy":
        correct = total = 0
        per_label: dict[str, dict[str, float]] = {}
        for g, p in zip(gold, pred):
            pred_label = {(s.token_begin, s.token_end): s.label for s in p.spans}
            for s in g.spans:
                total += 1
                hit = pred_label.get((s.token_begin, s.token_end)) == s.label
                correct += int(hit)
                stats = per_label.setdefault(s.label, {"support": 0, "correct": 0})
                stats["support"] += 1
                stats["correct"] += int(hit)
        acc = correct / total if total else 0.0
        for stats in per_label.values():
            stats["accuracy"] = stats["correct"] / stats["support"]
        return MetricReport(task=task, metric="accuracy", precision=acc, recall=acc,
                            f1=acc, support=total, per_label=per_label)

    if mode != "macro_f1":
        raise ValueError(f"unknown mode {mode!r}")
    report = relation_f1(gold, pred, task=task)
    labels = [lab for lab in report.per_label if lab != exclude_label]
    macro = (sum(report.per_label[lab]["f1"] for lab in labels) / len(labels)
             if labels else 0.0)
    return MetricReport(task=task, metric="macro_f1",
                        precision=macro, recall=macro, f1=macro,
                        support=report.support, per_label=report.per_label,
                        details={"micro_f1": report.f1})


# ---------------------------------------------------------------------------
# dispatch


def evaluate_documents(gold: list[Document], pred: list[Document], schema) -> MetricReport:
    """Compute the task's configured metric over aligned document lists."""
    name = schema.metric
    if name == "span_f1":
        return span_f1(gold, pred, task=schema.name)
    if name == "relation_f1":
        return relation_f1(gold, pred, task=schema.name)
    if name == "macro_f1":
        return accuracy_and_macro_f1(gold, pred, gold_span_mode=schema.gold_span_mode,
                                     mode="macro_f1",
                                     exclude_label=schema.macro_f1_exclude,
                                     task=schema.name)
    if name == "accuracy":
        return accuracy_and_macro_f1(gold, pred, gold_span_mode=schema.gold_span_mode,
                                     mode="accuracy", task=schema.name)
    if name == "las":
        value = las(gold, pred)
        return MetricReport(task=schema.name, metric="las", precision=value,
                            recall=value, f1=value,
                            support=sum(len(d.tokens()) for d in gold))
    if name == "bracket_f1":
        return bracket_f1(gold, pred, task=schema.name)
    if name == "coref_avg_f1":
        return coref_avg_f1([clusters_from_document(d) for d in gold],
                            [clusters_from_document(d) for d in pred],
                            task=schema.name)
    raise ValueError(f"unknown metric {name!r}")
