"""Deterministic rule-generated corpora for smoke tests and benchmarks.

Task "alpha": every sentence contains exactly two person entities, each a
bigram of capitalized name words, with a directed "knows" relation from the
first entity to the second. Everything else is a lowercase filler word, so
both the spans and the relation are decidable from surface alone.

Task "beta": number words are single-token NUM spans; span-only.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import brat
from .schema import TaskSchema

FILLERS = ["the", "a", "old", "quiet", "dog", "walked", "near", "river", "and",
           "saw", "tall", "tree", "under", "bright", "sky", "while", "wind",
           "moved", "slow", "boat", "past", "green", "field", "stone"]

NAMES = ["Alice", "Bob", "Clara", "David", "Emma", "Felix", "Grace", "Henry",
         "Iris", "Jack"]

NUMBER_WORDS = ["7", "42", "99", "13", "256", "3"]


def alpha_schema() -> TaskSchema:
    return TaskSchema(name="alpha", span_labels=("PER",),
                      relation_labels=("knows",), labels_open=False,
                      max_span_length=3, pruning_ratio=0.4,
                      decoder="generic", metric="span_f1")


def beta_schema() -> TaskSchema:
    return TaskSchema(name="beta", span_labels=("NUM",), relation_labels=(),
                      labels_open=False, max_span_length=2,
                      decoder="span_only", metric="span_f1")


def _fillers(rng: np.random.Generator, low: int, high: int) -> list[str]:
    count = int(rng.integers(low, high + 1))
    return [FILLERS[int(rng.integers(0, len(FILLERS)))] for _ in range(count)]


def alpha_sentence(rng: np.random.Generator):
    """Tokens plus two PER spans and the knows arc between them."""
    first = [NAMES[int(rng.integers(0, len(NAMES)))] for _ in range(2)]
    second = [NAMES[int(rng.integers(0, len(NAMES)))] for _ in range(2)]
    pre = _fillers(rng, 1, 3)
    mid = _fillers(rng, 1, 3)
    post = _fillers(rng, 1, 3)
    tokens = pre + first + mid + second + post
    b1 = len(pre)
    b2 = len(pre) + 2 + len(mid)
    spans = [(b1, b1 + 1, "PER"), (b2, b2 + 1, "PER")]
    relations = [(0, 1, "knows")]
    return tokens, spans, relations


def beta_sentence(rng: np.random.Generator):
    tokens = _fillers(rng, 4, 8)
    n_nums = int(rng.integers(1, 4))
    positions = sorted(rng.choice(len(tokens) + n_nums, size=n_nums, replace=False))
    for pos in positions:
        word = NUMBER_WORDS[int(rng.integers(0, len(NUMBER_WORDS)))]
        tokens.insert(min(int(pos), len(tokens)), word)
    spans = [(i, i, "NUM") for i, tok in enumerate(tokens) if tok in NUMBER_WORDS]
    return tokens, spans, []


def generate_documents(task: str, count: int, seed: int,
                       prefix: str = "doc") -> list[brat.Document]:
    """`count` one-sentence documents for the given synthetic task."""
    rng = np.random.default_rng(seed)
    make = alpha_sentence if task == "alpha" else beta_sentence
    docs = []
    for i in range(count):
        tokens, spans, relations = make(rng)
        docs.append(brat.document_from_tokens(f"{prefix}-{i:04d}", [tokens],
                                              spans, relations))
    return docs


def write_corpus(task: str, out_dir: str | Path, train: int = 500, dev: int = 100,
                 seed: int = 0) -> dict[str, Path]:
    """Write train/ and dev/ BRAT directories; returns their paths."""
    out_dir = Path(out_dir)
    paths = {}
    for split, count, offset in (("train", train, 0), ("dev", dev, 10_000)):
        split_dir = out_dir / split
        for doc in generate_documents(task, count, seed + offset,
                                      prefix=f"{task}-{split}"):
            brat.save_document(doc, split_dir)
        paths[split] = split_dir
    return paths
