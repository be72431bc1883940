"""Independent brute-force reference implementations used only by tests.

Everything here is written directly from the metric/structure definitions,
deliberately avoiding the library's code paths so the two sides can check
each other.
"""

from __future__ import annotations

import itertools
import re


def intervals_cross(a: tuple[int, int], b: tuple[int, int]) -> bool:
    (ab, ae), (bb, be) = a, b
    return ab < bb <= ae < be or bb < ab <= be < ae


def crossing_pairs(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """O(m^2) scan for crossing interval pairs (indices into the input)."""
    out = []
    for i in range(len(intervals)):
        for j in range(i + 1, len(intervals)):
            if intervals_cross(intervals[i], intervals[j]):
                out.append((i, j))
    return out


def brackets_from_tree_string(text: str) -> list[tuple[int, int, str]]:
    """Stack-based phrasal bracket extraction straight off the characters.

    Returns (begin, end, label) with inclusive token indices; preterminals
    (nodes with no nested parentheses) are skipped; labels keep only the part
    before '-'/'=' except for -NONE-/-LRB-/-RRB-; -NONE- leaves are dropped.
    """
    tokens = re.findall(r"\(|\)|[^\s()]+", text)
    pos = 0
    stack: list[tuple[str, int, bool]] = []  # (label, start_token, saw_subtree)
    out: list[tuple[int, int, str]] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "(":
            label = ""
            if i + 1 < len(tokens) and tokens[i + 1] not in "()":
                label = tokens[i + 1]
                i += 1
            stack.append((label, pos, False))
        elif tok == ")":
            label, start, saw_subtree = stack.pop()
            if stack:
                parent = stack[-1]
                stack[-1] = (parent[0], parent[1], True)
            if saw_subtree and label not in ("", "TOP", "ROOT") and pos > start:
                if label not in ("-NONE-", "-LRB-", "-RRB-"):
                    label = label.split("-")[0].split("=")[0] or label
                out.append((start, pos - 1, label))
        else:
            if stack and stack[-1][0] != "-NONE-":
                pos += 1
        i += 1
    return out


# ---------------------------------------------------------------------------
# metric references


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def multiset_prf(gold: list, pred: list) -> tuple[float, float, float]:
    """Precision/recall/F1 by greedy one-to-one matching of equal items."""
    remaining = list(gold)
    matched = 0
    for item in pred:
        if item in remaining:
            remaining.remove(item)
            matched += 1
    p = matched / len(pred) if pred else 0.0
    r = matched / len(gold) if gold else 0.0
    return p, r, f1(p, r)


def las_reference(gold: list[tuple[int, str]], pred: list[tuple[int, str]]) -> float:
    assert len(gold) == len(pred)
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    return correct / len(gold)


def muc_reference(gold: list[set], pred: list[set]) -> tuple[float, float, float]:
    """Vilain et al. link-based score, computed per partition counting."""

    def score(keys: list[set], responses: list[set]) -> tuple[int, int]:
        num = den = 0
        for key in keys:
            if len(key) < 2:
                # singleton key clusters contribute |k|-1 = 0 links
                continue
            parts = set()
            missing = 0
            for mention in key:
                holder = None
                for i, resp in enumerate(responses):
                    if mention in resp:
                        holder = i
                        break
                if holder is None:
                    missing += 1
                else:
                    parts.add(holder)
            num += len(key) - (len(parts) + missing)
            den += len(key) - 1
        return num, den

    rn, rd = score(gold, pred)
    pn, pd = score(pred, gold)
    p = pn / pd if pd else 0.0
    r = rn / rd if rd else 0.0
    return p, r, f1(p, r)


def b_cubed_reference(gold: list[set], pred: list[set]) -> tuple[float, float, float]:
    """Per-mention precision/recall over the union mention set."""

    def cluster_of(clusters, mention):
        for c in clusters:
            if mention in c:
                return c
        return set()

    gold_mentions = set().union(*gold) if gold else set()
    pred_mentions = set().union(*pred) if pred else set()

    r_sum = 0.0
    for m in gold_mentions:
        gc = cluster_of(gold, m)
        pc = cluster_of(pred, m)
        r_sum += len(gc & pc) / len(gc)
    p_sum = 0.0
    for m in pred_mentions:
        gc = cluster_of(gold, m)
        pc = cluster_of(pred, m)
        p_sum += len(gc & pc) / len(pc)
    p = p_sum / len(pred_mentions) if pred_mentions else 0.0
    r = r_sum / len(gold_mentions) if gold_mentions else 0.0
    return p, r, f1(p, r)


def ceaf_e_reference(gold: list[set], pred: list[set]) -> tuple[float, float, float]:
    """CEAF with entity-based phi4 similarity, assignment by enumeration."""

    def phi4(a: set, b: set) -> float:
        return 2 * len(a & b) / (len(a) + len(b))

    if not gold or not pred:
        return 0.0, 0.0, 0.0
    small, large = (gold, pred) if len(gold) <= len(pred) else (pred, gold)
    best = 0.0
    for perm in itertools.permutations(range(len(large)), len(small)):
        total = sum(phi4(small[i], large[j]) for i, j in enumerate(perm))
        best = max(best, total)
    p = best / len(pred)
    r = best / len(gold)
    return p, r, f1(p, r)


def greedy_parse_reference(scores, n: int, neg_index: int = 0):
    """Memoized re-derivation of greedy top-down span parsing.

    `scores[b][e]` is a vector over labels (index `neg_index` = unlabeled).
    Returns the bracket list [(b, e, label_index)] the greedy procedure emits.
    """
    import numpy as np

    def best_any(b, e):
        return float(np.max(scores[b][e]))

    out = []

    def walk(b, e, is_root):
        vec = scores[b][e]
        if is_root:
            real = [(v, i) for i, v in enumerate(vec) if i != neg_index]
            label = max(real, key=lambda t: (t[0], -t[1]))[1]
        else:
            label = int(np.argmax(vec))
        if label != neg_index:
            out.append((b, e, label))
        if b == e:
            return
        split_scores = [(best_any(b, m) + best_any(m + 1, e), -m) for m in range(b, e)]
        m = -max(split_scores)[1]
        walk(b, m, False)
        walk(m + 1, e, False)

    walk(0, n - 1, True)
    return out


def all_binary_bracketings(n: int) -> list[frozenset]:
    """Every set of internal spans a binary tree over n leaves can produce."""

    def rec(b, e):
        if b == e:
            return [frozenset()]
        results = []
        for m in range(b, e):
            for left in rec(b, m):
                for right in rec(m + 1, e):
                    results.append(left | right | {(b, e)})
        return results

    unique = set(rec(0, n - 1))
    return list(unique)
