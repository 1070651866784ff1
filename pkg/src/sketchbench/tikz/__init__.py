"""Diagram code model: tokenizer, TikZ-subset parser, node-graph extractor."""

from .graph import Edge, NodeGraph, extract_node_graph
from .model import (
    CodeToken,
    DiagnosticKind,
    Diagnostic,
    DiagramCode,
    Language,
    TokenKind,
)
from .parser import (
    NodeKind,
    ParseNode,
    ParseResult,
    ParseTree,
    parse,
    serialize_tree,
)
from .tokenizer import env_name, join_tokens, tokenize

__all__ = [
    "CodeToken",
    "Diagnostic",
    "DiagnosticKind",
    "DiagramCode",
    "Edge",
    "Language",
    "NodeGraph",
    "NodeKind",
    "ParseNode",
    "ParseResult",
    "ParseTree",
    "TokenKind",
    "env_name",
    "extract_node_graph",
    "join_tokens",
    "parse",
    "serialize_tree",
    "tokenize",
]
