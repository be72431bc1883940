import random

import pytest

from spanrel import brat, converters
from spanrel.converters import (FormatError, ImportSummary, bio_to_spans,
                                import_corpus, parse_sexpr_trees,
                                ptb_to_document, read_conllu, read_props,
                                write_conllu)
from spanrel.schema import builtin_schema, freeze_schema

from oracles import brackets_from_tree_string

CONLL2003 = """-DOCSTART- -X- -X- O

Barack NNP B-NP B-PER
Obama NNP I-NP I-PER
was VBD B-VP O
born VBN I-VP O
in IN B-PP O
Hawaii NNP B-NP B-LOC
. . O O

He PRP B-NP O
smiled VBD B-VP O
"""

CONLLU = """# sent_id = 1
1\tThe\tthe\tDET\tDT\t_\t3\tdet\t_\t_
2\tentire\tentire\tADJ\tJJ\t_\t3\tamod\t_\t_
3\tdivision\tdivision\tNOUN\tNN\t_\t4\tnsubj\t_\t_
4\temploys\temploy\tVERB\tVBZ\t_\t0\troot\t_\t_
5\tworkers\tworker\tNOUN\tNNS\t_\t4\tdobj\t_\t_
"""

PROPS = """We - (A0*)
brought bring (V*)
you - (A2*)
the - (A1*
tale - *
of - *
two - *
cities - *)
"""


def test_bio_to_spans_example():
    assert bio_to_spans(["B-PER", "I-PER", "O"]) == [(0, 1, "PER")]
    # IOB1 style: I- after O opens a span
    assert bio_to_spans(["O", "I-LOC"]) == [(1, 1, "LOC")]
    assert bio_to_spans(["B-PER", "B-PER"]) == [(0, 0, "PER"), (1, 1, "PER")]
    with pytest.raises(ValueError):
        bio_to_spans(["STRANGE"])


def test_conll2003_import(tmp_path):
    src = tmp_path / "train.conll"
    src.write_text(CONLL2003)
    out = tmp_path / "out"
    summary = import_corpus("conll2003_ner", [src], out)
    assert summary.documents == 1
    assert summary.spans == 2
    assert summary.relations == 0
    docs = brat.load_dataset(out)
    assert len(docs) == 1
    doc = docs[0]
    assert doc.tokens()[:2] == ["Barack", "Obama"]
    labels = {(s.token_begin, s.token_end, s.label) for s in doc.spans}
    assert labels == {(0, 1, "PER"), (5, 5, "LOC")}
    assert len(doc.sentences) == 2
    assert brat.validate_dataset(out, builtin_schema("NER")) == []


def test_conllu_import_dep_convention(tmp_path):
    src = tmp_path / "train.conllu"
    src.write_text(CONLLU)
    out = tmp_path / "out"
    summary = import_corpus("conllu_dep", [src], out)
    assert summary.documents == 1
    assert summary.spans == 5
    assert summary.relations == 4  # the root word has no incoming arc
    doc = brat.load_dataset(out)[0]
    by_token = {s.token_begin: s for s in doc.spans}
    assert by_token[3].label == "root"
    assert all(by_token[i].label == "word" for i in (0, 1, 2, 4))
    # HEAD=3, DEPREL=det for token 1: relation from span 2 (0-based) to span 0
    rels = {(doc.span_by_id(r.head_span_id).token_begin,
             doc.span_by_id(r.tail_span_id).token_begin, r.label)
            for r in doc.relations}
    assert (2, 0, "det") in rels
    assert (3, 2, "nsubj") in rels
    schema = freeze_schema(builtin_schema("Dep"), [doc])
    assert brat.validate_dataset(out, schema) == []


def test_conllu_bad_head_column(tmp_path):
    src = tmp_path / "bad.conllu"
    src.write_text("1\tA\t_\t_\t_\t_\tx\tdet\t_\t_\n")
    with pytest.raises(FormatError):
        read_conllu(src)


def test_conllu_skips_multiword_and_empty_ids(tmp_path):
    src = tmp_path / "mw.conllu"
    src.write_text(
        "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n"
        "2\tnot\t_\t_\t_\t_\t1\tadvmod\t_\t_\n")
    sents = read_conllu(src)
    assert sents == [(["do", "not"], [(0, "root"), (1, "advmod")])]


def test_write_conllu_roundtrip(tmp_path):
    src = tmp_path / "t.conllu"
    src.write_text(CONLLU)
    doc = converters.conllu_to_document("t", read_conllu(src))
    attachments = {3: (-1, "root"), 0: (2, "det"), 1: (2, "amod"),
                   2: (3, "nsubj"), 4: (3, "dobj")}
    text = write_conllu(doc, attachments)
    rows = [r.split("\t") for r in text.strip().split("\n")]
    assert [(r[6], r[7]) for r in rows] == [
        ("3", "det"), ("3", "amod"), ("4", "nsubj"), ("0", "root"), ("4", "dobj")]


def test_ptb_example_brackets():
    trees = parse_sexpr_trees("(S (NP (DT The) (NN cat)) (VP (VBD sat)))")
    doc = ptb_to_document("d", trees)
    spans = {(s.token_begin, s.token_end, s.label) for s in doc.spans}
    assert spans == {(0, 2, "S"), (0, 1, "NP"), (2, 2, "VP")}


def test_ptb_pos_variant():
    trees = parse_sexpr_trees("(S (NP (DT The) (NN cat)) (VP (VBD sat)))")
    doc = ptb_to_document("d", trees, variant="pos")
    spans = {(s.token_begin, s.token_end, s.label) for s in doc.spans}
    assert spans == {(0, 0, "DT"), (1, 1, "NN"), (2, 2, "VBD")}


def test_ptb_strips_function_tags_and_traces():
    text = "( (S (NP-SBJ (NN dog)) (VP (VBD ran) (NP (-NONE- *T*)))) )"
    doc = ptb_to_document("d", parse_sexpr_trees(text))
    spans = {(s.token_begin, s.token_end, s.label) for s in doc.spans}
    assert spans == {(0, 1, "S"), (0, 0, "NP"), (1, 1, "VP")}
    assert doc.tokens() == ["dog", "ran"]


def test_ptb_unbalanced_raises():
    with pytest.raises(converters.InconsistentTree):
        parse_sexpr_trees("(S (NP the")


def random_tree(rng, depth=0):
    labels = ["S", "NP", "VP", "PP", "ADJP"]
    tags = ["DT", "NN", "VB", "IN", "JJ"]
    words = ["the", "cat", "sat", "on", "mat", "big"]
    if depth > 3 or rng.random() < 0.3:
        return f"({rng.choice(tags)} {rng.choice(words)})"
    n = rng.randint(1, 3)
    children = " ".join(random_tree(rng, depth + 1) for _ in range(n))
    return f"({rng.choice(labels)} {children})"


def test_ptb_brackets_match_independent_extractor():
    rng = random.Random(17)
    for trial in range(200):
        text = random_tree(rng)
        doc = ptb_to_document("d", parse_sexpr_trees(text))
        got = sorted((s.token_begin, s.token_end, s.label) for s in doc.spans)
        expected = sorted(brackets_from_tree_string(text))
        assert got == expected, f"trial {trial}: {text}"


def test_props_import(tmp_path):
    src = tmp_path / "srl.props"
    src.write_text(PROPS)
    out = tmp_path / "out"
    summary = import_corpus("props_srl", [src], out)
    assert summary.documents == 1
    doc = brat.load_dataset(out)[0]
    spans = {(s.token_begin, s.token_end, s.label) for s in doc.spans}
    assert (1, 1, "predicate") in spans
    assert (0, 0, "argument") in spans
    assert (3, 7, "argument") in spans
    rels = {(doc.span_by_id(r.head_span_id).token_begin,
             doc.span_by_id(r.tail_span_id).token_begin, r.label)
            for r in doc.relations}
    assert rels == {(1, 0, "ARG0"), (1, 2, "ARG2"), (1, 3, "ARG1")}


def test_props_malformed_cell(tmp_path):
    src = tmp_path / "bad.props"
    src.write_text("We - ((broken\nbrought bring (V*)\n")
    with pytest.raises(FormatError):
        read_props(src)


def test_brat_passthrough_renumbers(tmp_path):
    src_dir = tmp_path / "src"
    src_dir.mkdir()
    (src_dir / "d.txt").write_text("Hawaii is warm\n")
    (src_dir / "d.ann").write_text("T9\tLOC 0 6\tHawaii\n")
    out = tmp_path / "out"
    summary = import_corpus("brat", [src_dir / "d.txt"], out)
    assert summary.spans == 1
    assert (out / "d.ann").read_text() == "T1\tLOC 0 6\tHawaii\n"


def test_unknown_format():
    with pytest.raises(ValueError):
        import_corpus("nope", [], "/tmp/x")


def test_summary_reports_overlong_spans(tmp_path):
    src = tmp_path / "t.conll"
    src.write_text("a x x B-PER\nb x x I-PER\nc x x I-PER\n")
    import dataclasses
    schema = dataclasses.replace(builtin_schema("NER"), max_span_length=2)
    summary = import_corpus("conll2003_ner", [src], tmp_path / "out", schema=schema)
    assert summary.reported.get("spans_over_length_bound") == 1
