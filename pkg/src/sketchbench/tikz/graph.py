r"""Def-use graph extraction from parsed diagram code.

``\node (id) ...;`` declares a vertex; ``\draw``/``\path`` statements
contribute edges for each edge operator (``--``, ``->``, ``<-``,
``<->``, ``-|``, ``|-``, ``to``, ``edge``) joining two node references.
A reference is a parenthesized identifier, optionally with an anchor
suffix (``(a.north)`` refers to ``a``); parenthesized coordinates like
``(0,1)`` are not references.  Identifiers are case-sensitive.

Declarations are collected in a first pass, so forward references do not
count as dangling; ids referenced but never declared land in
``dangling_refs`` (first-occurrence order, deduplicated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import CodeToken, TokenKind
from .parser import NodeKind, ParseTree


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    style: str = ""


@dataclass
class NodeGraph:
    vertices: dict[str, str] = field(default_factory=dict)  # id -> label text
    edges: list[Edge] = field(default_factory=list)
    dangling_refs: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.vertices and not self.edges

    def edge_pairs(self) -> list[tuple[str, str]]:
        return [(e.src, e.dst) for e in self.edges]


_EDGE_OP_TEXTS = {"--", "->", "<-", "<->", "-|", "|-"}
_EDGE_OP_IDENTS = {"to", "edge"}


def _paren_groups(tokens: tuple[CodeToken, ...]):
    """Yield (start_index, [inner tokens], preceded_by_at) per (...) group."""
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind is TokenKind.PUNCT and tok.text == "(":
            after_at = i > 0 and tokens[i - 1].kind is TokenKind.IDENT and tokens[i - 1].text == "at"
            inner: list[CodeToken] = []
            j = i + 1
            while j < len(tokens) and not (
                tokens[j].kind is TokenKind.PUNCT and tokens[j].text == ")"
            ):
                inner.append(tokens[j])
                j += 1
            yield i, inner, after_at
            i = j + 1
        else:
            i += 1


def _ref_id(inner: list[CodeToken]) -> str | None:
    """Node id if the group is a reference, else None (coordinate etc.)."""
    if not inner:
        return None
    if inner[0].kind is not TokenKind.IDENT:
        return None
    if len(inner) == 1:
        return inner[0].text
    # anchor form: ident '.' ident-or-number, e.g. (a.north), (a.180)
    if (
        inner[1].kind is TokenKind.PUNCT
        and inner[1].text == "."
        and len(inner) <= 3
    ):
        return inner[0].text
    return None


def _node_decl_parts(tokens: tuple[CodeToken, ...]) -> tuple[str | None, str]:
    node_id = None
    for _, inner, after_at in _paren_groups(tokens):
        if after_at:
            continue
        if len(inner) == 1 and inner[0].kind is TokenKind.IDENT:
            node_id = inner[0].text
            break
    label = ""
    for tok in tokens:
        if tok.kind is TokenKind.TEXT_BLOCK:
            label = tok.inner_text()
            break
    return node_id, label


def _edge_decl_edges(tokens: tuple[CodeToken, ...]) -> list[tuple[str | None, str | None, str]]:
    """All operator applications as (src_ref, dst_ref, style); refs None for coordinates."""
    style = ""
    for tok in tokens:
        if tok.kind is TokenKind.OPTION_BLOCK:
            style = tok.inner_text()
            break

    # linearize into endpoint / operator events
    events: list[tuple[str, object]] = []
    for start, inner, _ in _paren_groups(tokens):
        events.append(("endpoint", (start, _ref_id(inner))))
    for idx, tok in enumerate(tokens):
        if tok.kind is TokenKind.PUNCT and tok.text in _EDGE_OP_TEXTS:
            events.append(("op", (idx, tok.text)))
        elif tok.kind is TokenKind.IDENT and tok.text in _EDGE_OP_IDENTS:
            events.append(("op", (idx, tok.text)))
    events.sort(key=lambda e: e[1][0])

    edges: list[tuple[str | None, str | None, str]] = []
    prev_ref: str | None = None
    have_prev = False
    pending_op: str | None = None
    for kind, payload in events:
        if kind == "endpoint":
            _, ref = payload
            if pending_op is not None and have_prev:
                edges.append((prev_ref, ref, style))
                if pending_op != "edge":  # 'edge' keeps its source anchored
                    prev_ref = ref
                pending_op = None
            else:
                prev_ref = ref
                have_prev = True
                pending_op = None
        else:
            _, op = payload
            if have_prev:
                pending_op = op
    return edges


def extract_node_graph(tree: ParseTree) -> NodeGraph:
    graph = NodeGraph()
    statements = tree.statements()

    for stmt in statements:
        if stmt.kind is NodeKind.NODE_DECL:
            node_id, label = _node_decl_parts(stmt.tokens)
            if node_id is not None and node_id not in graph.vertices:
                graph.vertices[node_id] = label

    seen_dangling: set[str] = set()

    def note_ref(ref: str | None) -> None:
        if ref is not None and ref not in graph.vertices and ref not in seen_dangling:
            seen_dangling.add(ref)
            graph.dangling_refs.append(ref)

    for stmt in statements:
        if stmt.kind is NodeKind.EDGE_DECL:
            for src, dst, style in _edge_decl_edges(stmt.tokens):
                note_ref(src)
                note_ref(dst)
                if src is not None and dst is not None:
                    graph.edges.append(Edge(src, dst, style))

    return graph
