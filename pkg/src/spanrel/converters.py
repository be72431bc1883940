"""Convert external corpus formats into BRAT standoff datasets.

Supported inputs: CoNLL-2003 4-column NER, CoNLL-U dependency files, PTB
bracketed trees (constituency or POS extraction), CoNLL-2005-style SRL props,
and existing BRAT pairs (validated and renumbered on the way through).

Dependency convention: every word is a span; words attached to the virtual
root carry the span label "root" (all others "word") and have no incoming
relation, so a word's parent is recoverable from its single incoming arc.
Coreference chains link each mention to the previous mention of its cluster.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from . import brat
from .schema import TaskSchema

FORMATS = ("conll2003_ner", "conllu_dep", "ptb_bracketed", "props_srl", "brat")


class FormatError(ValueError):
    def __init__(self, file: str, line_no: int, reason: str):
        self.file = str(file)
        self.line_no = line_no
        super().__init__(f"{file}:{line_no}: {reason}")


class InconsistentTree(ValueError):
    pass


@dataclass
class ImportSummary:
    documents: int = 0
    spans: int = 0
    relations: int = 0
    reported: dict[str, int] = field(default_factory=dict)

    def note(self, kind: str, count: int = 1) -> None:
        if count:
            self.reported[kind] = self.reported.get(kind, 0) + count

    def to_dict(self) -> dict:
        return {"documents": self.documents, "spans": self.spans,
                "relations": self.relations, "reported": dict(self.reported)}


def _blocks(lines: list[str]) -> list[list[tuple[int, str]]]:
    """Group numbered lines into blank-line separated blocks."""
    blocks: list[list[tuple[int, str]]] = []
    current: list[tuple[int, str]] = []
    for no, line in enumerate(lines, start=1):
        if line.strip():
            current.append((no, line.rstrip("\n")))
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks


# ---------------------------------------------------------------------------
# CoNLL-2003 NER


def bio_to_spans(tags: list[str]) -> list[tuple[int, int, str]]:
    """Decode a BIO/IOB tag sequence into (begin, end, label) spans."""
    spans = []
    start, label = None, None
    for i, tag in enumerate(tags):
        if tag == "O" or tag == "0":
            if start is not None:
                spans.append((start, i - 1, label))
                start = None
            continue
        if "-" not in tag:
            raise ValueError(f"bad BIO tag {tag!r}")
        prefix, _, kind = tag.partition("-")
        if prefix == "B" or (prefix == "I" and (start is None or kind != label)):
            if start is not None:
                spans.append((start, i - 1, label))
            start, label = i, kind
        elif prefix == "I":
            continue
        else:
            raise ValueError(f"bad BIO tag {tag!r}")
    if start is not None:
        spans.append((start, len(tags) - 1, label))
    return spans


def read_conll2003(path: Path) -> list[tuple[str, list[list[str]], list]]:
    """Yield (doc_id, sentences, spans) per -DOCSTART- section."""
    lines = path.read_text(encoding="utf-8").split("\n")
    docs: list[tuple[str, list[list[str]], list]] = []
    sentences: list[list[str]] = []
    tag_rows: list[list[str]] = []

    def flush_doc():
        nonlocal sentences, tag_rows
        if sentences:
            spans = []
            offset = 0
            for tokens, tags in zip(sentences, tag_rows):
                for b, e, label in bio_to_spans(tags):
                    spans.append((offset + b, offset + e, label))
                offset += len(tokens)
            docs.append((f"{path.stem}-{len(docs):04d}", sentences, spans))
        sentences, tag_rows = [], []

    for block in _blocks(lines):
        if block[0][1].startswith("-DOCSTART-"):
            flush_doc()
            block = block[1:]
        tokens, tags = [], []
        for no, line in block:
            cols = line.split()
            if len(cols) < 2:
                raise FormatError(path, no, f"expected >=2 columns, got {len(cols)}")
            tokens.append(cols[0])
            tags.append(cols[-1])
        if tokens:
            sentences.append(tokens)
            try:
                tag_rows.append(tags)
                bio_to_spans(tags)
            except ValueError as exc:
                raise FormatError(path, block[0][0], str(exc)) from exc
    flush_doc()
    return docs


# ---------------------------------------------------------------------------
# CoNLL-U dependencies


def read_conllu(path: Path) -> list[tuple[list[str], list[tuple[int, str]]]]:
    """Per sentence: (tokens, [(head, deprel)] with head 0 = root, 1-based)."""
    lines = path.read_text(encoding="utf-8").split("\n")
    sentences = []
    for block in _blocks(lines):
        tokens: list[str] = []
        heads: list[tuple[int, str]] = []
        for no, line in block:
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise FormatError(path, no, f"expected 10 columns, got {len(cols)}")
            token_id = cols[0]
            if "-" in token_id or "." in token_id:
                continue  # multiword ranges and empty nodes carry no tree edges
            try:
                head = int(cols[6])
            except ValueError:
                raise FormatError(path, no, f"non-integer HEAD {cols[6]!r}") from None
            tokens.append(cols[1])
            heads.append((head, cols[7]))
        if tokens:
            for no, _ in block[:1]:
                for head, _rel in heads:
                    if head < 0 or head > len(tokens):
                        raise FormatError(path, no, f"HEAD {head} out of range")
            sentences.append((tokens, heads))
    return sentences


def conllu_to_document(doc_id: str, sentences) -> brat.Document:
    token_lists = [tokens for tokens, _ in sentences]
    spans: list[tuple[int, int, str]] = []
    relations: list[tuple[int, int, str]] = []
    offset = 0
    for tokens, heads in sentences:
        base = len(spans)
        for i, (head, _rel) in enumerate(heads):
            label = "root" if head == 0 else "word"
            spans.append((offset + i, offset + i, label))
        for i, (head, rel) in enumerate(heads):
            if head != 0:
                relations.append((base + head - 1, base + i, rel))
        offset += len(tokens)
    return brat.document_from_tokens(doc_id, token_lists, spans, relations)


def write_conllu(doc: brat.Document, attachments: dict[int, tuple[int, str]]) -> str:
    """Render per-word (head, deprel) attachments as CoNLL-U text.

    `attachments` maps document-level token index -> (head token index or -1
    for root, label); heads are rewritten as sentence-local 1-based ids.
    """
    out = []
    offset = 0
    for si in range(len(doc.sentences)):
        tokens = doc.sentence_tokens(si)
        for i, token in enumerate(tokens):
            head, label = attachments[offset + i]
            head_local = 0 if head < 0 else head - offset + 1
            out.append("\t".join([str(i + 1), token, "_", "_", "_", "_",
                                  str(head_local), label, "_", "_"]))
        out.append("")
        offset += len(tokens)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# PTB bracketed trees


_PTB_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def parse_sexpr_trees(text: str, source: str = "<string>") -> list:
    """Parse all top-level trees; nodes are (label, children), leaves are str."""
    tokens = _PTB_TOKEN_RE.findall(text)
    trees = []
    pos = 0

    def parse_node():
        nonlocal pos
        if tokens[pos] != "(":
            raise InconsistentTree(f"{source}: expected '(' at token {pos}")
        pos += 1
        if pos < len(tokens) and tokens[pos] not in "()":
            label = tokens[pos]
            pos += 1
        else:
            label = ""
        children = []
        while pos < len(tokens) and tokens[pos] != ")":
            if tokens[pos] == "(":
                children.append(parse_node())
            else:
                children.append(tokens[pos])
                pos += 1
        if pos >= len(tokens):
            raise InconsistentTree(f"{source}: unbalanced parentheses")
        pos += 1
        return (label, children)

    while pos < len(tokens):
        if tokens[pos] != "(":
            raise InconsistentTree(f"{source}: stray token {tokens[pos]!r}")
        trees.append(parse_node())
    return trees


def _strip_label(label: str) -> str:
    """Drop PTB function tags and coindexation (NP-SBJ-1 -> NP)."""
    if label in ("-NONE-", "-LRB-", "-RRB-"):
        return label
    return label.split("-")[0].split("=")[0] or label


def _prune_traces(node):
    """Remove -NONE- subtrees; return None if nothing remains."""
    label, children = node
    if label == "-NONE-":
        return None
    kept = []
    for child in children:
        if isinstance(child, str):
            kept.append(child)
        else:
            sub = _prune_traces(child)
            if sub is not None:
                kept.append(sub)
    if not kept:
        return None
    return (label, kept)


def _unwrap_root(node):
    label, children = node
    if label in ("", "TOP", "ROOT") and len(children) == 1 and not isinstance(children[0], str):
        return children[0]
    return node


def tree_tokens(node) -> list[str]:
    label, children = node
    out = []
    for child in children:
        if isinstance(child, str):
            out.append(child)
        else:
            out.extend(tree_tokens(child))
    return out


def _is_preterminal(node) -> bool:
    label, children = node
    return len(children) == 1 and isinstance(children[0], str)


def tree_brackets(node, start: int = 0) -> tuple[list[tuple[int, int, str]], int]:
    """Phrasal (non-preterminal) labeled brackets with inclusive token spans."""
    label, children = node
    brackets: list[tuple[int, int, str]] = []
    pos = start
    for child in children:
        if isinstance(child, str):
            pos += 1
        else:
            sub, pos = tree_brackets(child, pos)
            brackets.extend(sub)
    if not _is_preterminal(node):
        brackets.insert(0, (start, pos - 1, _strip_label(label)))
    return brackets, pos


def tree_preterminals(node) -> list[str]:
    """POS tags in token order."""
    label, children = node
    if _is_preterminal(node):
        return [label]
    out = []
    for child in children:
        if not isinstance(child, str):
            out.extend(tree_preterminals(child))
    return out


def ptb_to_document(doc_id: str, trees: list, variant: str = "consti") -> brat.Document:
    sentences = []
    spans: list[tuple[int, int, str]] = []
    offset = 0
    for tree in trees:
        tree = _unwrap_root(tree)
        tree = _prune_traces(tree)
        if tree is None:
            continue
        tokens = tree_tokens(tree)
        sentences.append(tokens)
        if variant == "consti":
            brackets, covered = tree_brackets(tree)
            if covered != len(tokens):
                raise InconsistentTree(f"{doc_id}: bracket walk covered {covered} "
                                       f"of {len(tokens)} tokens")
            spans.extend((offset + b, offset + e, label) for b, e, label in brackets)
        elif variant == "pos":
            tags = tree_preterminals(tree)
            if len(tags) != len(tokens):
                raise InconsistentTree(f"{doc_id}: {len(tags)} tags for {len(tokens)} tokens")
            spans.extend((offset + i, offset + i, tag) for i, tag in enumerate(tags))
        else:
            raise ValueError(f"unknown ptb variant {variant!r}")
        offset += len(tokens)
    return brat.document_from_tokens(doc_id, sentences, spans)


# ---------------------------------------------------------------------------
# CoNLL-2005-style SRL props


def _normalize_role(role: str) -> str:
    m = re.fullmatch(r"(C-|R-)?A(\d)", role)
    if m:
        return f"{m.group(1) or ''}ARG{m.group(2)}"
    m = re.fullmatch(r"(C-|R-)?AM-(.+)", role)
    if m:
        return f"{m.group(1) or ''}ARGM-{m.group(2)}"
    return role


def read_props(path: Path) -> list[tuple[list[str], list]]:
    """Per sentence: (tokens, [(pred_b, pred_e, [(arg_b, arg_e, role)])]).

    Expected columns: token, predicate lemma or '-', then one argument column
    per predicate using the standard parenthesis notation, e.g. ``(A0*``,
    ``*``, ``*)``, ``(V*)``.
    """
    lines = path.read_text(encoding="utf-8").split("\n")
    sentences = []
    for block in _blocks(lines):
        rows = []
        for no, line in block:
            cols = line.split()
            if len(cols) < 2:
                raise FormatError(path, no, "expected at least 2 columns")
            rows.append((no, cols))
        n_pred = sum(1 for _, cols in rows if cols[1] != "-")
        width = 2 + n_pred
        for no, cols in rows:
            if len(cols) != width:
                raise FormatError(path, no, f"expected {width} columns, got {len(cols)}")
        tokens = [cols[0] for _, cols in rows]
        predicates = []
        for p in range(n_pred):
            col = [cols[2 + p] for _, cols in rows]
            frames = []
            open_role, open_at = None, None
            for i, cell in enumerate(col):
                m = re.fullmatch(r"(?:\((\S+?))?\*(\))?", cell)
                if not m:
                    raise FormatError(path, rows[i][0], f"bad props cell {cell!r}")
                role, closes = m.group(1), m.group(2)
                if role is not None:
                    if open_role is not None:
                        raise FormatError(path, rows[i][0], "nested argument brackets")
                    open_role, open_at = role, i
                if closes:
                    if open_role is None:
                        raise FormatError(path, rows[i][0], "unmatched ')' in props")
                    frames.append((open_at, i, open_role))
                    open_role = None
            if open_role is not None:
                raise FormatError(path, rows[-1][0], "unclosed argument bracket")
            verb = [(b, e) for b, e, r in frames if r == "V"]
            if not verb:
                raise FormatError(path, rows[0][0], f"predicate column {p} has no (V*) span")
            args = [(b, e, _normalize_role(r)) for b, e, r in frames if r != "V"]
            predicates.append((verb[0][0], verb[0][1], args))
        sentences.append((tokens, predicates))
    return sentences


def props_to_document(doc_id: str, sentences) -> brat.Document:
    token_lists = [tokens for tokens, _ in sentences]
    spans: list[tuple[int, int, str]] = []
    relations: list[tuple[int, int, str]] = []
    span_index: dict[tuple[int, int, str], int] = {}

    def add_span(b, e, label):
        key = (b, e, label)
        if key not in span_index:
            span_index[key] = len(spans)
            spans.append(key)
        return span_index[key]

    offset = 0
    for tokens, predicates in sentences:
        for pb, pe, args in predicates:
            pid = add_span(offset + pb, offset + pe, "predicate")
            for ab, ae, role in args:
                aid = add_span(offset + ab, offset + ae, "argument")
                relations.append((pid, aid, role))
        offset += len(tokens)
    return brat.document_from_tokens(doc_id, token_lists, spans, relations)


# ---------------------------------------------------------------------------
# entry point


def import_corpus(format: str, files: list[str | Path], out_dir: str | Path,
                  variant: str | None = None,
                  schema: TaskSchema | None = None) -> ImportSummary:
    """Convert corpus files into BRAT pairs under `out_dir`.

    When a schema is given, spans wider than its length bound are counted in
    the summary (they are written out regardless; instance extraction decides
    what to do with them).
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ImportSummary()
    docs: list[brat.Document] = []
    for file in files:
        path = Path(file)
        if format == "conll2003_ner":
            for doc_id, sentences, spans in read_conll2003(path):
                docs.append(brat.document_from_tokens(doc_id, sentences, spans))
        elif format == "conllu_dep":
            docs.append(conllu_to_document(path.stem, read_conllu(path)))
        elif format == "ptb_bracketed":
            trees = parse_sexpr_trees(path.read_text(encoding="utf-8"), str(path))
            docs.append(ptb_to_document(path.stem, trees, variant=variant or "consti"))
        elif format == "props_srl":
            docs.append(props_to_document(path.stem, read_props(path)))
        elif format == "brat":
            docs.append(brat.load_document(path.with_suffix("")))

    for doc in docs:
        brat.save_document(doc, out_dir)
        summary.documents += 1
        summary.spans += len(doc.spans)
        summary.relations += len(doc.relations)
        if schema is not None and schema.max_span_length is not None:
            over = sum(1 for s in doc.spans
                       if s.token_end - s.token_begin + 1 > schema.max_span_length)
            summary.note("spans_over_length_bound", over)
    return summary
