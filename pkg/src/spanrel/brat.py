"""BRAT standoff format: parsing, serialization, and dataset validation.

A document is a ``<name>.txt`` / ``<name>.ann`` pair. The text file holds one
pre-tokenized sentence per line; tokens are recovered by whitespace splitting
unless a ``<name>.tok`` sidecar is present (one line per sentence, tokens as
``begin:end`` character ranges). The annotation file holds span lines

    T<N><TAB><LABEL> <BEGIN> <END><TAB><SURFACE>

and relation lines

    R<N><TAB><LABEL> Arg1:T<i> Arg2:T<j>

with character offsets (not bytes) into the full text. Lines starting with
``#`` are comments. Event/attribute/normalization annotations are out of
scope.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

SPAN_LINE_RE = re.compile(r"^(T[0-9]+)\t(\S+) ([0-9]+) ([0-9]+)\t(.*)$")
REL_LINE_RE = re.compile(r"^(R[0-9]+)\t(\S+) Arg1:(T[0-9]+) Arg2:(T[0-9]+)\s*$")
TOKEN_RE = re.compile(r"\S+")


class BratError(ValueError):
    """Base class for structured standoff parsing errors."""


class MalformedLine(BratError):
    def __init__(self, line_no: int, line: str, reason: str = ""):
        self.line_no = line_no
        detail = f": {reason}" if reason else ""
        super().__init__(f"line {line_no}{detail}: {line!r}")


class DanglingReference(BratError):
    def __init__(self, rel_id: str, missing: str):
        self.rel_id = rel_id
        super().__init__(f"relation {rel_id} references missing span {missing}")


class SelfReference(BratError):
    def __init__(self, rel_id: str):
        self.rel_id = rel_id
        super().__init__(f"relation {rel_id} relates a span to itself")


class OffsetOutOfBounds(BratError):
    def __init__(self, span_id: str, begin: int, end: int, text_len: int):
        self.span_id = span_id
        super().__init__(
            f"span {span_id} range [{begin}, {end}) invalid for text of length {text_len}")


class SurfaceMismatch(BratError):
    def __init__(self, span_id: str, expected: str, found: str):
        self.span_id = span_id
        super().__init__(
            f"span {span_id}: annotated surface {expected!r} != text slice {found!r}")


class TokenAlignmentError(BratError):
    def __init__(self, span_id: str, reason: str):
        self.span_id = span_id
        super().__init__(f"span {span_id}: {reason}")


@dataclass(frozen=True)
class SpanAnnotation:
    span_id: str
    label: str
    char_begin: int
    char_end: int  # half-open
    token_begin: int  # document-level token index, inclusive
    token_end: int  # inclusive
    sentence_index: int
    surface: str


@dataclass(frozen=True)
class RelationAnnotation:
    rel_id: str
    label: str
    head_span_id: str
    tail_span_id: str


@dataclass
class Document:
    doc_id: str
    text: str
    sentences: list[list[tuple[int, int]]]  # per sentence: token char ranges
    spans: list[SpanAnnotation] = field(default_factory=list)
    relations: list[RelationAnnotation] = field(default_factory=list)

    def span_by_id(self, span_id: str) -> SpanAnnotation:
        return self._span_index()[span_id]

    def _span_index(self) -> dict[str, SpanAnnotation]:
        return {s.span_id: s for s in self.spans}

    def tokens(self) -> list[str]:
        """All tokens in document order."""
        return [self.text[b:e] for sent in self.sentences for b, e in sent]

    def sentence_tokens(self, index: int) -> list[str]:
        return [self.text[b:e] for b, e in self.sentences[index]]

    def sentence_token_offset(self, index: int) -> int:
        """Document-level index of the first token of a sentence."""
        return sum(len(s) for s in self.sentences[:index])


def tokenize_text(text: str) -> list[list[tuple[int, int]]]:
    """Whitespace-tokenize one sentence per line; offsets are into `text`."""
    sentences = []
    pos = 0
    for line in text.split("\n"):
        ranges = [(pos + m.start(), pos + m.end()) for m in TOKEN_RE.finditer(line)]
        if ranges:
            sentences.append(ranges)
        pos += len(line) + 1
    return sentences


def parse_token_sidecar(tok_content: str) -> list[list[tuple[int, int]]]:
    sentences = []
    for line in tok_content.split("\n"):
        line = line.strip()
        if not line:
            continue
        ranges = []
        for piece in line.split():
            b, _, e = piece.partition(":")
            ranges.append((int(b), int(e)))
        sentences.append(ranges)
    return sentences


def _align_span(span_id: str, begin: int, end: int,
                sentences: list[list[tuple[int, int]]]) -> tuple[int, int, int]:
    """Map a character range to (sentence, token_begin, token_end) indices."""
    offset = 0
    for si, sent in enumerate(sentences):
        if sent and begin >= sent[0][0] and end <= sent[-1][1]:
            tb = te = -1
            for ti, (b, e) in enumerate(sent):
                if b == begin:
                    tb = ti
                if e == end:
                    te = ti
            if tb < 0 or te < 0:
                raise TokenAlignmentError(
                    span_id, f"range [{begin}, {end}) does not align with token boundaries")
            if te < tb:
                raise TokenAlignmentError(span_id, "end token precedes begin token")
            return si, offset + tb, offset + te
        offset += len(sent)
    raise TokenAlignmentError(
        span_id, f"range [{begin}, {end}) does not lie within a single sentence")


def parse_document(txt_content: str, ann_content: str, doc_id: str = "",
                   tok_content: str | None = None) -> Document:
    """Parse a .txt/.ann content pair into a Document.

    Raises MalformedLine, DanglingReference, SelfReference, OffsetOutOfBounds,
    SurfaceMismatch, or TokenAlignmentError on invalid input; never returns a
    document that violates the Document invariants.
    """
    text = txt_content
    if tok_content is not None:
        sentences = parse_token_sidecar(tok_content)
    else:
        sentences = tokenize_text(text)

    spans: list[SpanAnnotation] = []
    relations: list[RelationAnnotation] = []
    seen_ids: set[str] = set()
    for line_no, raw in enumerate(ann_content.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        m = SPAN_LINE_RE.match(line)
        if m:
            span_id, label, b_s, e_s, surface = m.groups()
            if span_id in seen_ids:
                raise MalformedLine(line_no, line, f"duplicate id {span_id}")
            seen_ids.add(span_id)
            begin, end = int(b_s), int(e_s)
            if not (0 <= begin < end <= len(text)):
                raise OffsetOutOfBounds(span_id, begin, end, len(text))
            found = text[begin:end]
            if found != surface:
                raise SurfaceMismatch(span_id, surface, found)
            si, tb, te = _align_span(span_id, begin, end, sentences)
            spans.append(SpanAnnotation(span_id, label, begin, end, tb, te, si, surface))
            continue
        m = REL_LINE_RE.match(line)
        if m:
            rel_id, label, head_id, tail_id = m.groups()
            if rel_id in seen_ids:
                raise MalformedLine(line_no, line, f"duplicate id {rel_id}")
            seen_ids.add(rel_id)
            relations.append(RelationAnnotation(rel_id, label, head_id, tail_id))
            continue
        raise MalformedLine(line_no, line)

    known = {s.span_id for s in spans}
    for rel in relations:
        for ref in (rel.head_span_id, rel.tail_span_id):
            if ref not in known:
                raise DanglingReference(rel.rel_id, ref)
        if rel.head_span_id == rel.tail_span_id:
            raise SelfReference(rel.rel_id)

    return Document(doc_id=doc_id, text=text, sentences=sentences,
                    spans=spans, relations=relations)


def serialize_document(doc: Document) -> tuple[str, str]:
    """Emit (.txt content, .ann content) with ids renumbered T1../R1..

    Spans are ordered by (char_begin, char_end, label); relations by their
    endpoints' order then label, so equal-content documents serialize to
    identical bytes.
    """
    ordered_spans = sorted(doc.spans, key=lambda s: (s.char_begin, s.char_end, s.label))
    new_ids: dict[str, str] = {}
    lines = []
    for i, span in enumerate(ordered_spans, start=1):
        new_ids[span.span_id] = f"T{i}"
        lines.append(f"T{i}\t{span.label} {span.char_begin} {span.char_end}\t{span.surface}")

    span_order = {s.span_id: i for i, s in enumerate(ordered_spans)}
    ordered_rels = sorted(
        doc.relations,
        key=lambda r: (span_order[r.head_span_id], span_order[r.tail_span_id], r.label))
    for i, rel in enumerate(ordered_rels, start=1):
        head = new_ids[rel.head_span_id]
        tail = new_ids[rel.tail_span_id]
        lines.append(f"R{i}\t{rel.label} Arg1:{head} Arg2:{tail}")

    ann = "".join(line + "\n" for line in lines)
    return doc.text, ann


def document_signature(doc: Document):
    """Content identity of a document, invariant under annotation id renaming."""
    span_key = {s.span_id: (s.char_begin, s.char_end, s.label) for s in doc.spans}
    spans = tuple(sorted(span_key[s.span_id] for s in doc.spans))
    rels = tuple(sorted(
        (span_key[r.head_span_id], span_key[r.tail_span_id], r.label)
        for r in doc.relations))
    return (doc.text, tuple(tuple(s) for s in doc.sentences), spans, rels)


def replace_annotations(doc: Document, spans: list[tuple[int, int, str]],
                        relations: list[tuple[int, int, str]] = ()) -> Document:
    """New Document sharing `doc`'s text/tokenization with fresh annotations.

    Spans are (token_begin, token_end, label) document-level inclusive token
    indices; relations index into `spans`.
    """
    flat = [(si, b, e) for si, sent in enumerate(doc.sentences) for b, e in sent]
    span_objs = []
    for i, (tb, te, label) in enumerate(spans, start=1):
        si, cb, _ = flat[tb]
        sj, _, ce = flat[te]
        if si != sj:
            raise TokenAlignmentError(f"T{i}", "span crosses a sentence boundary")
        span_objs.append(SpanAnnotation(f"T{i}", label, cb, ce, tb, te, si,
                                        doc.text[cb:ce]))
    rel_objs = [RelationAnnotation(f"R{i}", label, span_objs[h].span_id,
                                   span_objs[t].span_id)
                for i, (h, t, label) in enumerate(relations, start=1)]
    return Document(doc_id=doc.doc_id, text=doc.text, sentences=doc.sentences,
                    spans=span_objs, relations=rel_objs)


def document_from_tokens(doc_id: str, sentences: list[list[str]],
                         spans: list[tuple[int, int, str]] = (),
                         relations: list[tuple[int, int, str]] = ()) -> Document:
    """Build a Document from token lists.

    `spans` are (token_begin, token_end, label) with inclusive document-level
    token indices; `relations` are (head, tail, label) indexing into `spans`.
    The text joins tokens with single spaces, one sentence per line.
    """
    lines = [" ".join(sent) for sent in sentences]
    text = "\n".join(lines) + ("\n" if lines else "")
    sentence_ranges = tokenize_text(text)
    flat = [(si, b, e) for si, sent in enumerate(sentence_ranges) for b, e in sent]
    span_objs = []
    for i, (tb, te, label) in enumerate(spans, start=1):
        si, cb, _ = flat[tb]
        sj, _, ce = flat[te]
        if si != sj:
            raise TokenAlignmentError(f"T{i}", "span crosses a sentence boundary")
        span_objs.append(SpanAnnotation(f"T{i}", label, cb, ce, tb, te, si, text[cb:ce]))
    rel_objs = [RelationAnnotation(f"R{i}", label, span_objs[h].span_id,
                                   span_objs[t].span_id)
                for i, (h, t, label) in enumerate(relations, start=1)]
    return Document(doc_id=doc_id, text=text, sentences=sentence_ranges,
                    spans=span_objs, relations=rel_objs)


# ---------------------------------------------------------------------------
# dataset-level I/O and validation


class IoError(OSError):
    pass


def load_document(base: str | Path) -> Document:
    """Load `<base>.txt` + `<base>.ann` (+ optional `<base>.tok`)."""
    base = Path(base)
    txt_path = base.with_suffix(".txt")
    ann_path = base.with_suffix(".ann")
    try:
        txt = txt_path.read_text(encoding="utf-8")
        ann = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
    except OSError as exc:
        raise IoError(str(exc)) from exc
    tok_path = base.with_suffix(".tok")
    tok = tok_path.read_text(encoding="utf-8") if tok_path.exists() else None
    return parse_document(txt, ann, doc_id=base.name, tok_content=tok)


def save_document(doc: Document, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt, ann = serialize_document(doc)
    (out_dir / f"{doc.doc_id}.txt").write_text(txt, encoding="utf-8")
    (out_dir / f"{doc.doc_id}.ann").write_text(ann, encoding="utf-8")
    return out_dir / f"{doc.doc_id}.ann"


def dataset_bases(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory} is not a directory")
    return sorted(p.with_suffix("") for p in directory.glob("*.txt"))


def load_dataset(directory: str | Path) -> list[Document]:
    return [load_document(base) for base in dataset_bases(directory)]


@dataclass(frozen=True)
class Violation:
    kind: str
    doc_id: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.doc_id}: {self.message}"


def _spans_cross(a: SpanAnnotation, b: SpanAnnotation) -> bool:
    return (a.token_begin < b.token_begin <= a.token_end < b.token_end
            or b.token_begin < a.token_begin <= b.token_end < a.token_end)


def _spans_overlap(a: SpanAnnotation, b: SpanAnnotation) -> bool:
    return a.token_begin <= b.token_end and b.token_begin <= a.token_end


def validate_document(doc: Document, schema) -> list[Violation]:
    """Schema-level checks for one parsed document."""
    out: list[Violation] = []

    if not schema.labels_open:
        allowed = set(schema.span_labels)
        for span in doc.spans:
            if span.label not in allowed:
                out.append(Violation("UnknownLabel", doc.doc_id,
                                     f"span {span.span_id} label {span.label!r}"))
        allowed_rel = set(schema.relation_labels)
        for rel in doc.relations:
            if rel.label not in allowed_rel:
                out.append(Violation("UnknownRelationLabel", doc.doc_id,
                                     f"relation {rel.rel_id} label {rel.label!r}"))

    limit = schema.max_span_length
    if limit is not None:
        for span in doc.spans:
            width = span.token_end - span.token_begin + 1
            if width > limit:
                out.append(Violation("SpanTooLong", doc.doc_id,
                                     f"span {span.span_id} has {width} tokens (limit {limit})"))

    if schema.forbid_overlap:
        spans = sorted(doc.spans, key=lambda s: (s.token_begin, s.token_end))
        for left, right in zip(spans, spans[1:]):
            if _spans_overlap(left, right):
                out.append(Violation("OverlappingSpans", doc.doc_id,
                                     f"{left.span_id} and {right.span_id} overlap"))

    if schema.tree_constraint == "dependency":
        parents: dict[str, int] = {}
        for span in doc.spans:
            parents[span.span_id] = 1 if span.label == schema.root_label else 0
        for rel in doc.relations:
            parents[rel.tail_span_id] = parents.get(rel.tail_span_id, 0) + 1
        index = doc._span_index()
        for span_id, count in parents.items():
            if count > 1:
                out.append(Violation("MultipleParents", doc.doc_id,
                                     f"span {span_id} has {count} parents"))
            elif count == 0 and span_id in index:
                out.append(Violation("MissingHead", doc.doc_id,
                                     f"span {span_id} has no parent and is not root"))

    if schema.tree_constraint == "constituency":
        spans = sorted(doc.spans, key=lambda s: (s.token_begin, s.token_end))
        for i, a in enumerate(spans):
            for b in spans[i + 1:]:
                if b.token_begin > a.token_end:
                    break
                if _spans_cross(a, b):
                    out.append(Violation("CrossingBrackets", doc.doc_id,
                                         f"{a.span_id} crosses {b.span_id}"))

    return out


def validate_dataset(directory: str | Path, schema) -> list[Violation]:
    """Validate every .txt/.ann pair in a directory against a task schema.

    Parse failures are reported as violations rather than aborting the scan.
    """
    out: list[Violation] = []
    for base in dataset_bases(directory):
        try:
            doc = load_document(base)
        except BratError as exc:
            out.append(Violation("MalformedDocument", base.name, str(exc)))
            continue
        out.extend(validate_document(doc, schema))
    return out
