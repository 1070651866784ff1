r"""Tokenizer for a TikZ-flavoured subset of LaTeX.

Total and deterministic: any str input tokenizes without error.  Rules:

* comments run from an unescaped ``%`` (even number of preceding
  backslashes) to the end of the line and produce no token;
* ``\`` + letters is one Command token; ``\`` + a single non-letter is a
  control-symbol Command (so ``\%`` never starts a comment);
* ``\begin{name}`` / ``\end{name}`` collapse into single BeginEnv /
  EndEnv tokens covering the brace group;
* a balanced ``[...]`` directly after a Command, BeginEnv, or another
  OptionBlock is one OptionBlock token;
* a balanced ``{...}`` in argument position (directly after a Command,
  OptionBlock, TextBlock, Ident, Number, or a closing paren) is one
  TextBlock token; elsewhere ``{`` and ``}`` are Punct (scope braces);
* the edge operators ``-- -> <- <-> -| |-`` lex as single Punct tokens
  (longest match); all other unclassified characters are one-char Punct.

Unterminated blocks extend greedily to end of input; the parser, not the
tokenizer, flags them.  Inside a block scan, brace counting skips
commented-out line tails, mirroring TeX; the raw characters stay part of
the block's text so spans always slice the original source exactly.
"""

from __future__ import annotations

from .model import CodeToken, TokenKind

_EDGE_OPS = ("<->", "<-", "->", "--", "-|", "|-")

# Token kinds that put a following bracket group in option position.
_OPTION_PREV = frozenset({TokenKind.COMMAND, TokenKind.BEGIN_ENV, TokenKind.OPTION_BLOCK})

# Token kinds after which a brace group is an argument, not a scope.
_ARGUMENT_PREV = frozenset(
    {
        TokenKind.COMMAND,
        TokenKind.OPTION_BLOCK,
        TokenKind.TEXT_BLOCK,
        TokenKind.IDENT,
        TokenKind.NUMBER,
    }
)


def _is_comment_start(source: str, i: int) -> bool:
    if source[i] != "%":
        return False
    backslashes = 0
    j = i - 1
    while j >= 0 and source[j] == "\\":
        backslashes += 1
        j -= 1
    return backslashes % 2 == 0


def _scan_balanced(source: str, start: int, open_ch: str, close_ch: str) -> int:
    """Return the index one past the matching close delimiter.

    Starts at ``start`` which must hold ``open_ch``.  Skips escaped
    delimiters and commented-out line tails.  If unbalanced, returns
    ``len(source)`` (greedy to end of input).
    """
    depth = 0
    i = start
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\\":
            i += 2
            continue
        if _is_comment_start(source, i):
            nl = source.find("\n", i)
            if nl == -1:
                return n
            i = nl + 1
            continue
        if open_ch == "[" and ch == "{":
            i = _scan_balanced(source, i, "{", "}")
            continue
        if ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return n


def tokenize(source: str) -> list[CodeToken]:
    tokens: list[CodeToken] = []
    i = 0
    n = len(source)

    def prev_kind() -> TokenKind | None:
        return tokens[-1].kind if tokens else None

    def emit(kind: TokenKind, start: int, end: int) -> None:
        tokens.append(CodeToken(kind, source[start:end], (start, end)))

    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if _is_comment_start(source, i):
            nl = source.find("\n", i)
            i = n if nl == -1 else nl  # newline itself stays whitespace
            continue
        if ch == "\\":
            start = i
            i += 1
            if i < n and source[i].isalpha():
                while i < n and source[i].isalpha():
                    i += 1
                name = source[start:i]
                if name in ("\\begin", "\\end"):
                    j = i
                    while j < n and source[j] in " \t":
                        j += 1
                    if j < n and source[j] == "{":
                        i = _scan_balanced(source, j, "{", "}")
                        kind = TokenKind.BEGIN_ENV if name == "\\begin" else TokenKind.END_ENV
                        emit(kind, start, i)
                        continue
                emit(TokenKind.COMMAND, start, i)
            else:
                if i < n:
                    i += 1  # control symbol, e.g. \% or \\
                emit(TokenKind.COMMAND, start, i)
            continue
        if ch == "[" and prev_kind() in _OPTION_PREV:
            end = _scan_balanced(source, i, "[", "]")
            emit(TokenKind.OPTION_BLOCK, i, end)
            i = end
            continue
        if ch == "{":
            prev = tokens[-1] if tokens else None
            argument_pos = prev is not None and (
                prev.kind in _ARGUMENT_PREV
                or (prev.kind == TokenKind.PUNCT and prev.text == ")")
            )
            if argument_pos:
                end = _scan_balanced(source, i, "{", "}")
                emit(TokenKind.TEXT_BLOCK, i, end)
                i = end
                continue
            emit(TokenKind.PUNCT, i, i + 1)
            i += 1
            continue
        if ch.isdigit():
            start = i
            while i < n and source[i].isdigit():
                i += 1
            if i + 1 < n and source[i] == "." and source[i + 1].isdigit():
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            emit(TokenKind.NUMBER, start, i)
            continue
        if ch.isascii() and ch.isalpha():
            start = i
            i += 1
            while i < n and (source[i].isascii() and (source[i].isalnum() or source[i] == "_")):
                i += 1
            emit(TokenKind.IDENT, start, i)
            continue
        matched_op = False
        for op in _EDGE_OPS:
            if source.startswith(op, i):
                emit(TokenKind.PUNCT, i, i + len(op))
                i += len(op)
                matched_op = True
                break
        if matched_op:
            continue
        emit(TokenKind.PUNCT, i, i + 1)
        i += 1

    return tokens


def env_name(token: CodeToken) -> str:
    """Environment name inside a BeginEnv/EndEnv token, '' if malformed."""
    lo = token.text.find("{")
    hi = token.text.rfind("}")
    if lo == -1:
        return ""
    if hi <= lo:
        return token.text[lo + 1 :].strip()
    return token.text[lo + 1 : hi].strip()


def join_tokens(tokens: list[CodeToken] | tuple[CodeToken, ...]) -> str:
    """Canonical serialization: token texts joined by single spaces.

    Re-tokenizing the result yields an identical kind/text sequence.
    """
    return " ".join(t.text for t in tokens)
