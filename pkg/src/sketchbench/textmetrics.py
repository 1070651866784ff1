"""Code-similarity metrics over diagram code pairs.

All scores live on a 0-100 scale.  Sentence-level definitions:

* ``bleu``          BLEU-4, uniform weights, brevity penalty, add-one
                    smoothing applied to zero n-gram precisions only.
* ``rouge_l``       LCS F-measure with beta = 1.2.
* ``chrf``          character n-gram F-score, n = 1..6 averaged,
                    beta = 2, whitespace excluded; orders where neither
                    side has n-grams are dropped from the average.
* ``edit_distance`` 100 * Levenshtein / max(len) (lower is better).
* ``codebleu``      0.25 * (BLEU + keyword-weighted n-gram + syntax-tree
                    match + node-graph match); TikZ command tokens act
                    as the keyword set (weight 4), parse subtrees as the
                    syntax component, the node graph as the semantic
                    component.  If either side fails to parse, the tree
                    and graph components fall back to the BLEU value.
* ``ruby``          tiered similarity: node-graph Dice overlap when both
                    sides parse and have non-empty graphs, else subtree
                    multiset Jaccard, else normalized string similarity.
                    The tier used is recorded in ``components``.
* ``pass_at_1``     percent of compile results with Success status.

Corpus aggregates are macro averages of per-sample scores.
"""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from math import exp, log
from typing import Iterable, Sequence

from .tikz import (
    DiagramCode,
    NodeKind,
    ParseNode,
    TokenKind,
    extract_node_graph,
    parse,
)


class MetricError(ValueError):
    pass


class EmptyReference(MetricError):
    pass


class BothEmpty(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class Metric(enum.Enum):
    PASS1 = "Pass1"
    BLEU = "BLEU"
    ROUGE_L = "ROUGE_L"
    CHRF = "ChrF"
    EDIT_DIST = "EditDist"
    CODEBLEU = "CodeBLEU"
    RUBY = "RUBY"


@dataclass(frozen=True)
class TextScore:
    metric: Metric
    value: float
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (-1e-9 <= self.value <= 100.0 + 1e-9):
            raise MetricError(f"{self.metric.value} out of range: {self.value}")


def code_tokens(code: DiagramCode | str) -> list[str]:
    """Metric-oriented token texts (comments stripped by the tokenizer)."""
    if isinstance(code, str):
        code = DiagramCode(code)
    return code.token_texts()


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Iterative two-row edit distance (insert/delete/substitute, cost 1)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _ngram_counts(items: Sequence, n: int) -> Counter:
    return Counter(tuple(items[i : i + n]) for i in range(len(items) - n + 1))


def _bleu_value(candidate: Sequence[str], reference: Sequence[str], weights=None) -> float:
    """BLEU on a 0-1 scale; ``weights`` maps a token to its match weight."""
    log_precisions = []
    for n in range(1, 5):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        if weights is None:
            total = sum(cand.values())
            matched = sum(min(c, ref[g]) for g, c in cand.items())
        else:
            w = lambda g: max(weights(tok) for tok in g)
            total = sum(w(g) * c for g, c in cand.items())
            matched = sum(w(g) * min(c, ref[g]) for g, c in cand.items())
        if total == 0:
            continue  # candidate too short for this order
        if matched == 0:
            precision = 1.0 / (total + 1.0)  # add-one smoothing
        else:
            precision = matched / total
        log_precisions.append(log(precision))
    if not log_precisions:
        return 0.0
    geo_mean = exp(sum(log_precisions) / len(log_precisions))
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    brevity = 1.0 if c > r else exp(1.0 - r / c)
    return brevity * geo_mean


def bleu(candidate: Sequence[str], reference: Sequence[str]) -> TextScore:
    if not reference:
        raise EmptyReference("BLEU needs a non-empty reference")
    return TextScore(Metric.BLEU, 100.0 * _bleu_value(list(candidate), list(reference)))


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = 1.2) -> TextScore:
    if not reference:
        raise EmptyReference("ROUGE-L needs a non-empty reference")
    candidate = list(candidate)
    reference = list(reference)
    if not candidate:
        return TextScore(Metric.ROUGE_L, 0.0)
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return TextScore(Metric.ROUGE_L, 0.0)
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    b2 = beta * beta
    f = (1 + b2) * precision * recall / (recall + b2 * precision)
    return TextScore(Metric.ROUGE_L, 100.0 * f)


def _lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def chrf(candidate: str, reference: str, max_n: int = 6, beta: float = 2.0) -> TextScore:
    if not reference:
        raise EmptyReference("chrF needs a non-empty reference")
    cand = "".join(candidate.split())
    ref = "".join(reference.split())
    b2 = beta * beta
    f_scores = []
    for n in range(1, max_n + 1):
        cand_grams = _ngram_counts(cand, n)
        ref_grams = _ngram_counts(ref, n)
        if not cand_grams and not ref_grams:
            continue
        if not cand_grams or not ref_grams:
            f_scores.append(0.0)
            continue
        matched = sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
        precision = matched / sum(cand_grams.values())
        recall = matched / sum(ref_grams.values())
        if precision + recall == 0:
            f_scores.append(0.0)
            continue
        f_scores.append((1 + b2) * precision * recall / (b2 * precision + recall))
    if not f_scores:
        # reachable only when both sides are empty once whitespace is
        # excluded: a vacuous but exact match
        return TextScore(Metric.CHRF, 100.0)
    return TextScore(Metric.CHRF, 100.0 * sum(f_scores) / len(f_scores))


def edit_distance(candidate: str, reference: str) -> TextScore:
    if not candidate and not reference:
        raise BothEmpty("edit distance undefined for two empty strings")
    longest = max(len(candidate), len(reference))
    return TextScore(Metric.EDIT_DIST, 100.0 * levenshtein(candidate, reference) / longest)


# --- CodeBLEU -------------------------------------------------------------

_KEYWORD_WEIGHT = 4.0


def _subtree_hashes(node: ParseNode) -> list[bytes]:
    """Structural hash multiset over all subtrees (token kinds, not texts).

    md5-based so the multiset is stable across processes.
    """
    out: list[bytes] = []

    def visit(n: ParseNode) -> bytes:
        child_digests = b"".join(visit(c) for c in n.children)
        token_kinds = ",".join(t.kind.value for t in n.tokens)
        payload = f"{n.kind.value}|{n.name}|{token_kinds}|".encode() + child_digests
        digest = hashlib.md5(payload).digest()
        out.append(digest)
        return digest

    visit(node)
    return out


def _multiset_match_fraction(cand: Counter, ref: Counter) -> float:
    total = sum(cand.values())
    if total == 0:
        return 1.0 if sum(ref.values()) == 0 else 0.0
    matched = sum(min(c, ref[k]) for k, c in cand.items())
    return matched / total


def _edge_f1(cand_pairs: list[tuple[str, str]], ref_pairs: list[tuple[str, str]]) -> float:
    if not cand_pairs and not ref_pairs:
        return 1.0
    cand = Counter(cand_pairs)
    ref = Counter(ref_pairs)
    overlap = sum(min(c, ref[k]) for k, c in cand.items())
    denom = sum(cand.values()) + sum(ref.values())
    return 2.0 * overlap / denom if denom else 0.0


def codebleu(candidate: DiagramCode | str, reference: DiagramCode | str) -> TextScore:
    if isinstance(candidate, str):
        candidate = DiagramCode(candidate)
    if isinstance(reference, str):
        reference = DiagramCode(reference)
    ref_tokens = reference.token_texts()
    if not ref_tokens:
        raise EmptyReference("CodeBLEU needs a reference that tokenizes non-empty")
    cand_tokens = candidate.token_texts()

    bleu_part = 100.0 * _bleu_value(cand_tokens, ref_tokens)

    is_command = {
        t.text: t.kind in (TokenKind.COMMAND, TokenKind.BEGIN_ENV, TokenKind.END_ENV)
        for t in list(candidate.tokens()) + list(reference.tokens())
    }
    weight = lambda tok: _KEYWORD_WEIGHT if is_command.get(tok, False) else 1.0
    weighted_part = 100.0 * _bleu_value(cand_tokens, ref_tokens, weights=weight)

    cand_parse = parse(candidate)
    ref_parse = parse(reference)
    if cand_parse.ok and ref_parse.ok:
        tree_part = 100.0 * _multiset_match_fraction(
            Counter(_subtree_hashes(cand_parse.tree.root)),
            Counter(_subtree_hashes(ref_parse.tree.root)),
        )
        graph_part = 100.0 * _edge_f1(
            extract_node_graph(cand_parse.tree).edge_pairs(),
            extract_node_graph(ref_parse.tree).edge_pairs(),
        )
    else:
        tree_part = bleu_part  # documented degradation on parse failure
        graph_part = bleu_part

    components = {
        "bleu": bleu_part,
        "weighted_ngram": weighted_part,
        "tree_match": tree_part,
        "graph_match": graph_part,
    }
    value = 0.25 * (bleu_part + weighted_part + tree_part + graph_part)
    return TextScore(Metric.CODEBLEU, value, components)


# --- RUBY -----------------------------------------------------------------


def _graph_elements(graph) -> set:
    verts = {("v", vid, label) for vid, label in graph.vertices.items()}
    edges = {("e", e.src, e.dst) for e in graph.edges}
    return verts | edges


def ruby(candidate: DiagramCode | str, reference: DiagramCode | str) -> TextScore:
    if isinstance(candidate, str):
        candidate = DiagramCode(candidate)
    if isinstance(reference, str):
        reference = DiagramCode(reference)
    if not reference.source:
        raise EmptyReference("RUBY needs a non-empty reference")

    cand_parse = parse(candidate)
    ref_parse = parse(reference)
    if cand_parse.ok and ref_parse.ok:
        cand_graph = extract_node_graph(cand_parse.tree)
        ref_graph = extract_node_graph(ref_parse.tree)
        if not cand_graph.empty and not ref_graph.empty:
            a = _graph_elements(cand_graph)
            b = _graph_elements(ref_graph)
            dice = 2.0 * len(a & b) / (len(a) + len(b))
            return TextScore(Metric.RUBY, 100.0 * dice, {"tier": "graph"})
        cand_hashes = Counter(_subtree_hashes(cand_parse.tree.root))
        ref_hashes = Counter(_subtree_hashes(ref_parse.tree.root))
        inter = sum(min(c, ref_hashes[k]) for k, c in cand_hashes.items())
        union = sum((cand_hashes | ref_hashes).values())
        jaccard = inter / union if union else 1.0
        return TextScore(Metric.RUBY, 100.0 * jaccard, {"tier": "tree"})

    longest = max(len(candidate.source), len(reference.source))
    sim = 1.0 - levenshtein(candidate.source, reference.source) / longest
    return TextScore(Metric.RUBY, 100.0 * sim, {"tier": "string"})


def pass_at_1(results: Iterable) -> TextScore:
    """Percent of compile results whose status is Success.

    Skipped entries must be filtered out (and reported) upstream.
    """
    statuses = [getattr(r, "status", r) for r in results]
    names = [getattr(s, "name", str(s)) for s in statuses]
    if not names:
        raise EmptyInput("pass@1 needs at least one compile result")
    if any(n == "SKIPPED" for n in names):
        raise MetricError("Skipped compile results must be excluded before pass@1")
    succ = sum(1 for n in names if n == "SUCCESS")
    return TextScore(Metric.PASS1, 100.0 * succ / len(names))
