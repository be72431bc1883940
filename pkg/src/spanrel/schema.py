"""Task schemas: label sets, structural constraints, and instance extraction.

Each analysis task is described by a TaskSchema that fixes how its gold data
maps onto labeled spans and directed span-to-span relations, which loss and
decoder apply, and the task-specific hyperparameters (max span width, pruning
ratio). Classifier outputs reserve index 0 of every label space for the
"no span here" / "no relation here" sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .brat import Document

NEG_SPAN = "NEG_SPAN"
NEG_REL = "NEG_REL"

TASK_NAMES = ("NER", "RE", "Coref", "OpenIE", "SRL", "Dep", "Consti", "POS",
              "ABSA", "ORL")

LOSS_MODES = ("pairwise", "head")
DECODERS = ("generic", "coref", "constituency", "dependency", "span_only")
METRICS = ("span_f1", "relation_f1", "macro_f1", "coref_avg_f1", "las",
           "bracket_f1", "accuracy")
SCOPES = ("sentence", "document")


class UnknownTask(KeyError):
    pass


class SpanCrossesSentence(ValueError):
    pass


@dataclass(frozen=True)
class TaskSchema:
    name: str
    span_labels: tuple[str, ...] = ()
    relation_labels: tuple[str, ...] = ()
    labels_open: bool = True
    max_span_length: int | None = 10
    pruning_ratio: float | None = None
    pruning_fixed: int | None = None
    loss_mode: str = "pairwise"
    decoder: str = "generic"
    metric: str = "span_f1"
    instance_scope: str = "sentence"
    gold_span_mode: bool = False
    forbid_overlap: bool = False
    tree_constraint: str = "none"
    root_label: str = "root"
    max_document_tokens: int | None = 500
    macro_f1_exclude: str | None = None

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.instance_scope not in SCOPES:
            raise ValueError(f"unknown instance scope {self.instance_scope!r}")
        if self.loss_mode == "head" and self.decoder != "coref":
            raise ValueError("head loss is only used with the coref decoder")
        if NEG_SPAN in self.span_labels or NEG_REL in self.relation_labels:
            raise ValueError("sentinel labels cannot appear in task label sets")
        if self.pruning_ratio is not None and not (0.0 < self.pruning_ratio <= 1.0):
            raise ValueError("pruning ratio must be in (0, 1]")

    # Label index 0 is the sentinel in both spaces.
    def span_label_list(self) -> list[str]:
        return [NEG_SPAN, *self.span_labels]

    def relation_label_list(self) -> list[str]:
        return [NEG_REL, *self.relation_labels]

    def span_label_index(self, label: str) -> int:
        return self.span_label_list().index(label)

    def relation_label_index(self, label: str) -> int:
        return self.relation_label_list().index(label)

    def with_labels(self, span_labels: Iterable[str],
                    relation_labels: Iterable[str] = ()) -> "TaskSchema":
        """Frozen copy with closed, sorted label sets."""
        return replace(self, span_labels=tuple(sorted(set(span_labels))),
                       relation_labels=tuple(sorted(set(relation_labels))),
                       labels_open=False)


_BUILTIN: dict[str, TaskSchema] = {}


def _register(schema: TaskSchema) -> None:
    _BUILTIN[schema.name] = schema


_register(TaskSchema(
    name="NER", span_labels=("LOC", "MISC", "ORG", "PER"), labels_open=False,
    max_span_length=10, decoder="span_only", metric="span_f1", forbid_overlap=True))
_register(TaskSchema(
    name="RE", span_labels=("entity",), relation_labels=(), labels_open=True,
    max_span_length=5, pruning_fixed=5, decoder="generic", metric="macro_f1",
    gold_span_mode=True, macro_f1_exclude="Other"))
_register(TaskSchema(
    name="Coref", span_labels=("mention",), relation_labels=("coref",),
    labels_open=False, max_span_length=10, pruning_ratio=0.4, loss_mode="head",
    decoder="coref", metric="coref_avg_f1", instance_scope="document"))
_register(TaskSchema(
    name="OpenIE", span_labels=("argument", "predicate"), relation_labels=(),
    labels_open=True, max_span_length=30, pruning_ratio=0.8, decoder="generic",
    metric="relation_f1"))
_register(TaskSchema(
    name="SRL", span_labels=("argument", "predicate"), relation_labels=(),
    labels_open=True, max_span_length=30, pruning_ratio=1.0, decoder="generic",
    metric="relation_f1"))
_register(TaskSchema(
    name="Dep", span_labels=("root", "word"), relation_labels=(), labels_open=True,
    max_span_length=1, pruning_ratio=1.0, decoder="dependency", metric="las",
    tree_constraint="dependency"))
_register(TaskSchema(
    name="Consti", span_labels=(), labels_open=True, max_span_length=None,
    decoder="constituency", metric="bracket_f1", tree_constraint="constituency"))
_register(TaskSchema(
    name="POS", span_labels=(), labels_open=True, max_span_length=1,
    decoder="span_only", metric="accuracy", forbid_overlap=True))
_register(TaskSchema(
    name="ABSA", span_labels=("conflict", "negative", "neutral", "positive"),
    labels_open=False, max_span_length=10, decoder="span_only", metric="accuracy",
    gold_span_mode=True, forbid_overlap=True))
_register(TaskSchema(
    name="ORL", span_labels=("holder", "opinion", "target"),
    relation_labels=("holder", "target"), labels_open=False, max_span_length=30,
    pruning_ratio=0.3, decoder="generic", metric="relation_f1",
    gold_span_mode=True))


def builtin_schema(name: str) -> TaskSchema:
    try:
        return _BUILTIN[name]
    except KeyError:
        raise UnknownTask(f"unknown task {name!r}; expected one of {TASK_NAMES}") from None


def freeze_schema(schema: TaskSchema, docs: Iterable[Document]) -> TaskSchema:
    """Close an open label set by collecting the labels present in `docs`."""
    if not schema.labels_open:
        return schema
    span_labels = set(schema.span_labels)
    rel_labels = set(schema.relation_labels)
    for doc in docs:
        span_labels.update(s.label for s in doc.spans)
        rel_labels.update(r.label for r in doc.relations)
    return schema.with_labels(span_labels, rel_labels)


@dataclass
class SentenceInstance:
    """One scoring unit: a token sequence plus indexed gold annotations.

    gold_spans holds (begin, end, label_index) with inclusive token indices
    local to the instance; gold_relations holds (head, tail, label_index)
    where head/tail index into gold_spans.
    """
    tokens: list[str]
    gold_spans: list[tuple[int, int, int]]
    gold_relations: list[tuple[int, int, int]]
    task: str
    doc_id: str = ""
    sentence_index: int | None = None
    dropped_spans: int = 0
    dropped_relations: int = 0
    truncated_tokens: int = 0

    def gold_candidates(self) -> list[tuple[int, int]]:
        """Distinct gold boundaries in (b, e) order, for gold-span mode."""
        return sorted({(b, e) for b, e, _ in self.gold_spans})


def _instance_from_spans(schema: TaskSchema, tokens, spans, relations, doc_id,
                         sentence_index, truncated=0) -> SentenceInstance:
    """Assemble an instance, dropping gold spans wider than the task bound."""
    limit = schema.max_span_length
    kept: list[tuple[int, int, int]] = []
    index_of: dict[int, int] = {}
    dropped = 0
    for orig_idx, (b, e, label) in enumerate(spans):
        width = e - b + 1
        if limit is not None and width > limit:
            dropped += 1
            continue
        index_of[orig_idx] = len(kept)
        kept.append((b, e, schema.span_label_index(label)))
    rels: list[tuple[int, int, int]] = []
    dropped_rels = 0
    for head, tail, label in relations:
        if head in index_of and tail in index_of:
            rels.append((index_of[head], index_of[tail],
                         schema.relation_label_index(label)))
        else:
            dropped_rels += 1
    return SentenceInstance(tokens=list(tokens), gold_spans=kept, gold_relations=rels,
                            task=schema.name, doc_id=doc_id,
                            sentence_index=sentence_index, dropped_spans=dropped,
                            dropped_relations=dropped_rels, truncated_tokens=truncated)


def to_instances(doc: Document, schema: TaskSchema) -> list[SentenceInstance]:
    """Split a document into scoring instances according to the task scope."""
    if schema.labels_open:
        raise ValueError(f"schema {schema.name} has open labels; freeze it first")

    span_list = list(doc.spans)
    span_pos = {s.span_id: i for i, s in enumerate(span_list)}

    if schema.instance_scope == "document":
        tokens = doc.tokens()
        cap = schema.max_document_tokens
        truncated = 0
        if cap is not None and len(tokens) > cap:
            truncated = len(tokens) - cap
            tokens = tokens[:cap]
        spans = []
        keep_mask = []
        for s in span_list:
            inside = s.token_end < len(tokens)
            keep_mask.append(inside)
            if inside:
                spans.append((s.token_begin, s.token_end, s.label))
        old_to_new = {}
        j = 0
        for i, keep in enumerate(keep_mask):
            if keep:
                old_to_new[i] = j
                j += 1
        rels = [(old_to_new[span_pos[r.head_span_id]], old_to_new[span_pos[r.tail_span_id]],
                 r.label)
                for r in doc.relations
                if keep_mask[span_pos[r.head_span_id]] and keep_mask[span_pos[r.tail_span_id]]]
        inst = _instance_from_spans(schema, tokens, spans, rels, doc.doc_id, None,
                                    truncated=truncated)
        inst.dropped_spans += sum(1 for k in keep_mask if not k)
        inst.dropped_relations += len(doc.relations) - len(rels)
        return [inst]

    # Sentence-scoped: partition spans by sentence and relocalize indices.
    instances = []
    offsets = [doc.sentence_token_offset(i) for i in range(len(doc.sentences))]
    by_sentence: dict[int, list[int]] = {i: [] for i in range(len(doc.sentences))}
    for i, span in enumerate(span_list):
        by_sentence[span.sentence_index].append(i)
    sentence_of = {i: span_list[i].sentence_index for i in range(len(span_list))}
    rels_by_sentence: dict[int, list[tuple[int, int, str]]] = {i: [] for i in by_sentence}
    for rel in doc.relations:
        hi, ti = span_pos[rel.head_span_id], span_pos[rel.tail_span_id]
        if sentence_of[hi] != sentence_of[ti]:
            raise SpanCrossesSentence(
                f"{doc.doc_id}: relation {rel.rel_id} crosses sentences "
                f"{sentence_of[hi]} and {sentence_of[ti]} under sentence-scoped task "
                f"{schema.name}")
        rels_by_sentence[sentence_of[hi]].append((hi, ti, rel.label))

    for si in range(len(doc.sentences)):
        tokens = doc.sentence_tokens(si)
        local_pos = {orig: j for j, orig in enumerate(by_sentence[si])}
        spans = [(span_list[i].token_begin - offsets[si],
                  span_list[i].token_end - offsets[si], span_list[i].label)
                 for i in by_sentence[si]]
        rels = [(local_pos[h], local_pos[t], label) for h, t, label in rels_by_sentence[si]]
        instances.append(_instance_from_spans(schema, tokens, spans, rels,
                                              doc.doc_id, si))
    return instances


def schema_to_dict(schema: TaskSchema) -> dict:
    return {
        "name": schema.name,
        "span_labels": list(schema.span_labels),
        "relation_labels": list(schema.relation_labels),
        "labels_open": schema.labels_open,
        "max_span_length": schema.max_span_length,
        "pruning_ratio": schema.pruning_ratio,
        "pruning_fixed": schema.pruning_fixed,
        "loss_mode": schema.loss_mode,
        "decoder": schema.decoder,
        "metric": schema.metric,
        "instance_scope": schema.instance_scope,
        "gold_span_mode": schema.gold_span_mode,
        "forbid_overlap": schema.forbid_overlap,
        "tree_constraint": schema.tree_constraint,
        "root_label": schema.root_label,
        "max_document_tokens": schema.max_document_tokens,
        "macro_f1_exclude": schema.macro_f1_exclude,
    }


def schema_from_dict(data: dict) -> TaskSchema:
    known = set(schema_to_dict(TaskSchema(name="NER")).keys())
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown schema keys: {sorted(unknown)}")
    data = dict(data)
    for key in ("span_labels", "relation_labels"):
        if key in data:
            data[key] = tuple(data[key])
    return TaskSchema(**data)
