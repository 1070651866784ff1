"""Core value types for diagram source code.

``DiagramCode`` wraps a piece of diagram source (currently TikZ/LaTeX) and
exposes lazily computed token and parse views used by the validators and
the code-similarity metrics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property


class Language(enum.Enum):
    TIKZ = "tikz"


class TokenKind(enum.Enum):
    COMMAND = "Command"        # \name or control symbol \<char>
    BEGIN_ENV = "BeginEnv"     # \begin{name} (including the brace group)
    END_ENV = "EndEnv"         # \end{name}
    IDENT = "Ident"            # [A-Za-z][A-Za-z0-9_]*
    NUMBER = "Number"          # digits with optional fraction
    PUNCT = "Punct"            # operators and any other single char
    OPTION_BLOCK = "OptionBlock"  # balanced [...] in option position
    TEXT_BLOCK = "TextBlock"      # balanced {...} in argument position


@dataclass(frozen=True)
class CodeToken:
    """One lexical token; ``text`` is the exact source slice at ``span``.

    Spans are (start, end) offsets into the source string (code points).
    """

    kind: TokenKind
    text: str
    span: tuple[int, int]

    def inner_text(self) -> str:
        """Content of a block token without its outer delimiters."""
        if self.kind in (TokenKind.OPTION_BLOCK, TokenKind.TEXT_BLOCK):
            closer = "]" if self.text.startswith("[") else "}"
            body = self.text[1:]
            if body.endswith(closer):
                body = body[:-1]
            return body
        return self.text


class DiagnosticKind(enum.Enum):
    BRACE_MISMATCH = "BraceMismatch"
    ENV_MISMATCH = "EnvMismatch"
    UNTERMINATED_STATEMENT = "UnterminatedStatement"


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    offset: int
    message: str

    def __str__(self) -> str:
        return f"{self.kind.value} at offset {self.offset}: {self.message}"


@dataclass(frozen=True)
class DiagramCode:
    """Immutable diagram source text with cached derived views."""

    source: str
    language: Language = Language.TIKZ

    @cached_property
    def token_cache(self) -> tuple[CodeToken, ...]:
        from .tokenizer import tokenize

        return tuple(tokenize(self.source))

    def tokens(self) -> tuple[CodeToken, ...]:
        return self.token_cache

    def token_texts(self) -> list[str]:
        return [t.text for t in self.token_cache]

    def __str__(self) -> str:
        return self.source
