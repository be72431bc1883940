import pytest

from spanrel import brat
from spanrel.schema import (NEG_REL, NEG_SPAN, SpanCrossesSentence, TaskSchema,
                            UnknownTask, builtin_schema, freeze_schema,
                            schema_from_dict, schema_to_dict, to_instances)


def test_builtin_hyperparameters():
    assert builtin_schema("SRL").max_span_length == 30
    assert builtin_schema("SRL").pruning_ratio == 1.0
    assert builtin_schema("RE").pruning_fixed == 5
    assert builtin_schema("POS").relation_labels == ()
    assert builtin_schema("POS").max_span_length == 1
    assert builtin_schema("Dep").max_span_length == 1
    assert builtin_schema("Consti").max_span_length is None
    assert builtin_schema("Coref").pruning_ratio == 0.4
    assert builtin_schema("OpenIE").pruning_ratio == 0.8
    assert builtin_schema("ORL").pruning_ratio == 0.3
    assert builtin_schema("NER").max_span_length == 10
    assert builtin_schema("Coref").max_span_length == 10
    assert builtin_schema("ABSA").max_span_length == 10
    assert builtin_schema("ORL").max_span_length == 30
    assert builtin_schema("OpenIE").max_span_length == 30
    assert builtin_schema("RE").max_span_length == 5


def test_head_loss_only_for_coref():
    for name in ("NER", "RE", "OpenIE", "SRL", "Dep", "Consti", "POS", "ABSA", "ORL"):
        assert builtin_schema(name).loss_mode == "pairwise"
    assert builtin_schema("Coref").loss_mode == "head"
    with pytest.raises(ValueError):
        TaskSchema(name="custom", loss_mode="head", decoder="generic")


def test_span_oriented_tasks_have_no_relation_labels():
    for name in ("NER", "Consti", "POS", "ABSA"):
        assert builtin_schema(name).relation_labels == ()


def test_unknown_task():
    with pytest.raises(UnknownTask):
        builtin_schema("nope")


def test_sentinel_is_index_zero():
    schema = builtin_schema("NER")
    assert schema.span_label_list()[0] == NEG_SPAN
    assert schema.relation_label_list()[0] == NEG_REL
    assert schema.span_label_index("LOC") == 1


def test_sentinels_rejected_in_label_sets():
    with pytest.raises(ValueError):
        TaskSchema(name="x", span_labels=(NEG_SPAN,), labels_open=False)


def test_freeze_collects_labels():
    doc = brat.document_from_tokens(
        "d", [["a", "b"]], [(0, 0, "X"), (1, 1, "Y")], [(0, 1, "r")])
    schema = TaskSchema(name="custom", labels_open=True)
    frozen = freeze_schema(schema, [doc])
    assert frozen.span_labels == ("X", "Y")
    assert frozen.relation_labels == ("r",)
    assert not frozen.labels_open


def test_two_sentence_ner_doc_gives_two_instances():
    doc = brat.document_from_tokens(
        "d", [["Barack", "Obama", "spoke"], ["He", "left"]],
        [(0, 1, "PER"), (3, 3, "PER")])
    instances = to_instances(doc, builtin_schema("NER"))
    assert len(instances) == 2
    assert instances[0].tokens == ["Barack", "Obama", "spoke"]
    assert instances[0].gold_spans == [(0, 1, builtin_schema("NER").span_label_index("PER"))]
    assert instances[1].gold_spans == [(0, 0, builtin_schema("NER").span_label_index("PER"))]


def test_coref_doc_gives_single_concatenated_instance():
    doc = brat.document_from_tokens(
        "d", [["I", "saw", "Tom"], ["he", "waved"]],
        [(2, 2, "mention"), (3, 3, "mention")], [(1, 0, "coref")])
    schema = builtin_schema("Coref")
    instances = to_instances(doc, schema)
    assert len(instances) == 1
    inst = instances[0]
    assert inst.tokens == ["I", "saw", "Tom", "he", "waved"]
    assert inst.gold_spans == [(2, 2, 1), (3, 3, 1)]
    assert inst.gold_relations == [(1, 0, 1)]


def test_coref_document_cap_truncates_and_counts():
    doc = brat.document_from_tokens(
        "d", [["a"] * 6, ["b"] * 6], [(1, 1, "mention"), (10, 10, "mention")],
        [(1, 0, "coref")])
    import dataclasses
    schema = dataclasses.replace(builtin_schema("Coref"), max_document_tokens=8)
    inst = to_instances(doc, schema)[0]
    assert len(inst.tokens) == 8
    assert inst.truncated_tokens == 4
    assert inst.gold_spans == [(1, 1, 1)]
    assert inst.gold_relations == []
    assert inst.dropped_spans == 1


def test_srl_encoding_matches_role_arcs():
    tokens = ["We", "brought", "you", "the", "tale", "of", "two", "cities"]
    doc = brat.document_from_tokens(
        "d", [tokens],
        [(1, 1, "predicate"), (0, 0, "argument"), (2, 2, "argument"), (3, 7, "argument")],
        [(0, 1, "ARG0"), (0, 2, "ARG2"), (0, 3, "ARG1")])
    schema = freeze_schema(builtin_schema("SRL"), [doc])
    inst = to_instances(doc, schema)[0]
    pred_idx = schema.span_label_index("predicate")
    assert (1, 1, pred_idx) in inst.gold_spans
    rel_labels = {(inst.gold_spans[h][:2], inst.gold_spans[t][:2],
                   schema.relation_label_list()[li])
                  for h, t, li in inst.gold_relations}
    assert rel_labels == {((1, 1), (0, 0), "ARG0"), ((1, 1), (2, 2), "ARG2"),
                          ((1, 1), (3, 7), "ARG1")}


def test_cross_sentence_relation_rejected_for_sentence_scope():
    doc = brat.document_from_tokens(
        "d", [["a", "b"], ["c"]], [(0, 0, "PER"), (2, 2, "PER")], [(0, 1, "r")])
    schema = builtin_schema("NER").with_labels(["PER"], ["r"])
    with pytest.raises(SpanCrossesSentence):
        to_instances(doc, schema)


def test_overlong_gold_spans_dropped_and_counted():
    doc = brat.document_from_tokens(
        "d", [["a"] * 8], [(0, 6, "PER"), (0, 0, "PER")])
    import dataclasses
    schema = dataclasses.replace(builtin_schema("NER"), max_span_length=3)
    inst = to_instances(doc, schema)[0]
    assert inst.dropped_spans == 1
    assert inst.gold_spans == [(0, 0, builtin_schema("NER").span_label_index("PER"))]


def test_open_schema_rejected_by_to_instances():
    doc = brat.document_from_tokens("d", [["a"]], [])
    with pytest.raises(ValueError):
        to_instances(doc, builtin_schema("Consti"))


def test_gold_candidates_deduplicated_sorted():
    doc = brat.document_from_tokens(
        "d", [["a", "b", "c"]], [(1, 2, "X"), (0, 0, "X"), (1, 2, "Y")])
    schema = TaskSchema(name="t", labels_open=True)
    inst = to_instances(doc, freeze_schema(schema, [doc]))[0]
    assert inst.gold_candidates() == [(0, 0), (1, 2)]


def test_schema_dict_roundtrip():
    schema = builtin_schema("ORL")
    again = schema_from_dict(schema_to_dict(schema))
    assert again == schema
    with pytest.raises(ValueError):
        schema_from_dict({"name": "x", "bogus_key": 1})
