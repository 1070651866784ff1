r"""Tolerant recursive-descent parser for the TikZ subset.

Recognized grammar (everything else degrades to Raw statements, the
parser is total over arbitrary input):

    document   := statement*
    statement  := env | scope | nodedecl | edgedecl | raw
    env        := BeginEnv statement* EndEnv          (names must match)
    scope      := '{' statement* '}'                  (brace group at
                                                       statement level)
    nodedecl   := '\node' token* ';'
    edgedecl   := ('\draw' | '\path') token* ';'
    raw        := any maximal token run not starting one of the above

Diagnostics (never exceptions):

* BraceMismatch       unclosed scope brace, stray '}' at statement
                      level, or a block token whose delimiters never
                      closed (tokenized greedily to end of input);
* EnvMismatch         \begin without matching \end, name mismatch, or
                      stray \end;
* UnterminatedStatement  \node/\draw/\path with no terminating ';'.

Statement spans partition their parent's interior exactly, so
``serialize_tree`` reconstructs the source byte-for-byte.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .model import (
    CodeToken,
    DiagramCode,
    Diagnostic,
    DiagnosticKind,
    TokenKind,
)
from .tokenizer import env_name


class NodeKind(enum.Enum):
    DOCUMENT = "Document"
    ENV = "Env"
    SCOPE = "Scope"
    NODE_DECL = "NodeDecl"
    EDGE_DECL = "EdgeDecl"
    RAW = "Raw"


@dataclass
class ParseNode:
    kind: NodeKind
    span: tuple[int, int]
    children: list["ParseNode"] = field(default_factory=list)
    tokens: tuple[CodeToken, ...] = ()
    name: str = ""  # environment name for Env nodes

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class ParseTree:
    root: ParseNode
    source: str

    def statements(self) -> list[ParseNode]:
        """All non-document nodes in document order."""
        return [n for n in self.root.walk() if n.kind is not NodeKind.DOCUMENT]


@dataclass
class ParseResult:
    tree: ParseTree | None
    diagnostics: tuple[Diagnostic, ...]

    @property
    def ok(self) -> bool:
        return not self.diagnostics


_STATEMENT_COMMANDS = {"\\node": NodeKind.NODE_DECL, "\\draw": NodeKind.EDGE_DECL, "\\path": NodeKind.EDGE_DECL}


class _Parser:
    def __init__(self, tokens: tuple[CodeToken, ...], source: str):
        self.tokens = tokens
        self.source = source
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    def peek(self) -> CodeToken | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def advance(self) -> CodeToken:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def diag(self, kind: DiagnosticKind, offset: int, message: str) -> None:
        self.diagnostics.append(Diagnostic(kind, offset, message))

    def check_block_tokens(self) -> None:
        for tok in self.tokens:
            if tok.kind in (TokenKind.OPTION_BLOCK, TokenKind.TEXT_BLOCK):
                closer = "]" if tok.text.startswith("[") else "}"
                if len(tok.text) < 2 or not tok.text.endswith(closer):
                    self.diag(
                        DiagnosticKind.BRACE_MISMATCH,
                        tok.span[0],
                        f"unterminated {tok.text[0]}...{closer} block",
                    )

    def parse_document(self) -> ParseNode:
        self.check_block_tokens()
        children: list[ParseNode] = []
        while self.peek() is not None:
            children.extend(self.parse_statements(stop_at_close=False))
            stray = self.peek()
            if stray is not None:  # stray \end at top level
                self.diag(
                    DiagnosticKind.ENV_MISMATCH,
                    stray.span[0],
                    f"\\end{{{env_name(stray)}}} without matching \\begin",
                )
                children.append(ParseNode(NodeKind.RAW, stray.span, tokens=(self.advance(),)))
        doc = ParseNode(NodeKind.DOCUMENT, (0, len(self.source)), children)
        _assign_spans(children, 0, len(self.source))
        return doc

    def parse_statements(self, stop_at_close: bool) -> list[ParseNode]:
        """Parse until EOF, an EndEnv, or (when stop_at_close) a '}'."""
        out: list[ParseNode] = []
        while True:
            tok = self.peek()
            if tok is None:
                return out
            if tok.kind is TokenKind.END_ENV:
                return out
            if stop_at_close and tok.kind is TokenKind.PUNCT and tok.text == "}":
                return out
            out.append(self.parse_statement())

    def parse_statement(self) -> ParseNode:
        tok = self.peek()
        assert tok is not None
        if tok.kind is TokenKind.BEGIN_ENV:
            return self.parse_env()
        if tok.kind is TokenKind.PUNCT and tok.text == "{":
            return self.parse_scope()
        if tok.kind is TokenKind.PUNCT and tok.text == "}":
            self.diag(DiagnosticKind.BRACE_MISMATCH, tok.span[0], "unmatched '}'")
            return ParseNode(NodeKind.RAW, tok.span, tokens=(self.advance(),))
        if tok.kind is TokenKind.COMMAND and tok.text in _STATEMENT_COMMANDS:
            return self.parse_terminated(_STATEMENT_COMMANDS[tok.text])
        return self.parse_raw()

    def parse_env(self) -> ParseNode:
        begin = self.advance()
        name = env_name(begin)
        children = self.parse_statements(stop_at_close=False)
        closer = self.peek()
        if closer is None:
            self.diag(
                DiagnosticKind.ENV_MISMATCH,
                begin.span[0],
                f"\\begin{{{name}}} is never closed",
            )
            end_offset = self.tokens[self.pos - 1].span[1] if self.pos else begin.span[1]
        elif env_name(closer) != name:
            self.diag(
                DiagnosticKind.ENV_MISMATCH,
                closer.span[0],
                f"\\end{{{env_name(closer)}}} closes \\begin{{{name}}}",
            )
            self.advance()
            end_offset = closer.span[1]
        else:
            self.advance()
            end_offset = closer.span[1]
        node = ParseNode(NodeKind.ENV, (begin.span[0], end_offset), children, name=name)
        _assign_spans(children, begin.span[1], closer.span[0] if closer else end_offset)
        return node

    def parse_scope(self) -> ParseNode:
        opener = self.advance()
        children = self.parse_statements(stop_at_close=True)
        closer = self.peek()
        if closer is not None and closer.kind is TokenKind.PUNCT and closer.text == "}":
            self.advance()
            end_offset = closer.span[1]
        else:
            self.diag(DiagnosticKind.BRACE_MISMATCH, opener.span[0], "unclosed '{' scope")
            closer = None
            end_offset = self.tokens[self.pos - 1].span[1] if self.pos else opener.span[1]
        node = ParseNode(NodeKind.SCOPE, (opener.span[0], end_offset), children)
        _assign_spans(children, opener.span[1], closer.span[0] if closer else end_offset)
        return node

    def parse_terminated(self, kind: NodeKind) -> ParseNode:
        start_tok = self.peek()
        assert start_tok is not None
        collected: list[CodeToken] = []
        terminated = False
        while True:
            tok = self.peek()
            if tok is None or tok.kind in (TokenKind.BEGIN_ENV, TokenKind.END_ENV):
                break
            collected.append(self.advance())
            if collected[-1].kind is TokenKind.PUNCT and collected[-1].text == ";":
                terminated = True
                break
        if not terminated:
            self.diag(
                DiagnosticKind.UNTERMINATED_STATEMENT,
                start_tok.span[0],
                f"{start_tok.text} statement has no terminating ';'",
            )
        span = (collected[0].span[0], collected[-1].span[1])
        return ParseNode(kind, span, tokens=tuple(collected))

    def parse_raw(self) -> ParseNode:
        collected = [self.advance()]
        while True:
            tok = self.peek()
            if tok is None or tok.kind in (TokenKind.BEGIN_ENV, TokenKind.END_ENV):
                break
            if tok.kind is TokenKind.PUNCT and tok.text in ("{", "}"):
                break
            if tok.kind is TokenKind.COMMAND and tok.text in _STATEMENT_COMMANDS:
                break
            collected.append(self.advance())
        span = (collected[0].span[0], collected[-1].span[1])
        return ParseNode(NodeKind.RAW, span, tokens=tuple(collected))


def _assign_spans(children: list[ParseNode], lo: int, hi: int) -> None:
    """Stretch sibling spans so they partition [lo, hi) exactly."""
    if not children:
        return
    for i, child in enumerate(children):
        start = lo if i == 0 else children[i - 1].span[1]
        end = children[i + 1].span[0] if i + 1 < len(children) else hi
        child.span = (start, end)


def parse(code: DiagramCode | str) -> ParseResult:
    """Parse diagram source; returns a tree only when diagnostics are empty."""
    if isinstance(code, str):
        code = DiagramCode(code)
    parser = _Parser(code.tokens(), code.source)
    root = parser.parse_document()
    diags = tuple(parser.diagnostics)
    if diags:
        return ParseResult(None, diags)
    return ParseResult(ParseTree(root, code.source), ())


def serialize_tree(tree: ParseTree) -> str:
    """Reconstruct the source from node spans (byte-for-byte)."""

    def emit(node: ParseNode) -> str:
        if not node.children:
            return tree.source[node.span[0] : node.span[1]]
        parts = [tree.source[node.span[0] : node.children[0].span[0]]]
        for child in node.children:
            parts.append(emit(child))
        parts.append(tree.source[node.children[-1].span[1] : node.span[1]])
        return "".join(parts)

    return emit(tree.root)
