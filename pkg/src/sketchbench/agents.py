"""The three pipeline agents as prompt templates over a chat backend.

* ``generate_code``  sketch image + instruction set -> initial code
* ``edit_code``      code + edit instructions -> refined code
* ``judge``          rendered diagram vs. sketch -> structured verdict

Replies are mined for the first fenced code block (the whole reply is
the fallback).  The judge must answer in a fixed JSON schema; one re-ask
is attempted on a malformed reply, after which the verdict degrades to
not-aligned with the sketch-to-code agent blamed.

The exact prompt wordings below are this harness's own; treat absolute
scores as comparable only within runs using the same templates.
"""

from __future__ import annotations

import enum
import io
import json
import re
from dataclasses import dataclass
from functools import cached_property

from PIL import Image

from .backends import (
    AgentBackend,
    BackendError,
    ChatRequest,
    ImagePart,
    Message,
    TextPart,
)
from .tikz import DiagramCode


class PreconditionError(ValueError):
    pass


class EmptyCode(RuntimeError):
    pass


@dataclass(frozen=True)
class SketchTask:
    """One pipeline input: sketch image, instructions, optional edits.

    ``sketch_png`` may be None for code-editing tasks that start from
    ``initial_code`` instead of an image.
    """

    task_id: str
    instructions: tuple[str, ...]
    sketch_png: bytes | None = None
    edit_instructions: tuple[str, ...] = ()
    initial_code: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "edit_instructions", tuple(self.edit_instructions))
        if not self.instructions and self.initial_code is None:
            raise PreconditionError("task needs at least one instruction")
        if any(not i.strip() for i in self.instructions):
            raise PreconditionError("instruction strings must be non-empty")
        if any(not i.strip() for i in self.edit_instructions):
            raise PreconditionError("edit instruction strings must be non-empty")
        if self.sketch_png is not None:
            w, h = self.sketch_size
            if w <= 0 or h <= 0:
                raise PreconditionError("sketch must have positive dimensions")

    @cached_property
    def sketch_size(self) -> tuple[int, int]:
        if self.sketch_png is None:
            return (0, 0)
        try:
            with Image.open(io.BytesIO(self.sketch_png)) as img:
                return img.size
        except Exception as exc:
            raise PreconditionError(f"sketch is not a decodable image: {exc}") from exc


def load_sketch(path) -> bytes:
    with Image.open(path) as img:
        buf = io.BytesIO()
        img.convert("RGB").save(buf, format="PNG")
        return buf.getvalue()


_FENCE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


def extract_code(reply: str) -> str:
    """First fenced code block, else the whole reply; idempotent."""
    match = _FENCE.search(reply)
    if match:
        return match.group(1).strip("\n")
    return reply.strip()


_GENERATE_SYSTEM = (
    "You convert hand-drawn sketches of logical diagrams into compilable "
    "TikZ code. Reply with a single fenced code block containing a "
    "complete tikzpicture."
)

_EDIT_SYSTEM = (
    "You refine TikZ diagram code. Apply the requested changes while "
    "preserving everything else. Reply with a single fenced code block "
    "containing the full revised code."
)

_JUDGE_SYSTEM = (
    "You compare a rendered diagram against the original sketch and the "
    "user instructions. Reply with exactly one JSON object: "
    '{"aligned": true|false, "rationale": "<short reason>", '
    '"blame": "SketchToCode"|"EditingCode"|"None"}. '
    'Use blame "None" if and only if aligned is true.'
)


def _bullet(lines) -> str:
    return "\n".join(f"- {line}" for line in lines)


def build_generate_request(task: SketchTask, feedback: str | None = None) -> ChatRequest:
    parts = []
    if task.sketch_png is not None:
        parts.append(ImagePart.from_bytes(task.sketch_png))
    text = "Convert this sketch into TikZ code.\nInstructions:\n" + _bullet(task.instructions)
    if feedback:
        text += f"\n\nThe previous attempt was rejected:\n{feedback}\nProduce a corrected version."
    parts.append(TextPart(text))
    return ChatRequest(
        messages=(Message("system", (TextPart(_GENERATE_SYSTEM),)), Message("user", tuple(parts)))
    )


def build_edit_request(code: DiagramCode, edits, feedback: str | None = None) -> ChatRequest:
    text = (
        "Current diagram code:\n"
        + code.source
        + "\n\nApply these edits:\n"
        + _bullet(edits)
    )
    if feedback:
        text += f"\n\nThe previous attempt was rejected:\n{feedback}\nProduce a corrected version."
    return ChatRequest(
        messages=(
            Message("system", (TextPart(_EDIT_SYSTEM),)),
            Message("user", (TextPart(text),)),
        )
    )


def build_judge_request(diagram_png: bytes, task: SketchTask, reask: bool = False) -> ChatRequest:
    parts = [ImagePart.from_bytes(diagram_png)]
    if task.sketch_png is not None:
        parts.append(ImagePart.from_bytes(task.sketch_png))
    text = (
        "First image: rendered diagram. "
        + ("Second image: original sketch. " if task.sketch_png is not None else "")
        + "Instructions:\n"
        + _bullet(task.instructions)
    )
    if reask:
        text += "\n\nYour previous reply was not valid JSON. Answer with the JSON object only."
    parts.append(TextPart(text))
    return ChatRequest(
        messages=(Message("system", (TextPart(_JUDGE_SYSTEM),)), Message("user", tuple(parts)))
    )


def generate_code(task: SketchTask, backend: AgentBackend, feedback: str | None = None) -> DiagramCode:
    if not backend.supports_vision:
        raise PreconditionError(f"backend {backend.name} lacks vision capability")
    if task.sketch_png is None:
        raise PreconditionError("task has no sketch image")
    reply = backend.complete(build_generate_request(task, feedback))
    code = extract_code(reply)
    if not code:
        raise EmptyCode("backend reply contained no extractable code")
    return DiagramCode(code)


def edit_code(code: DiagramCode, edits, backend: AgentBackend, feedback: str | None = None) -> DiagramCode:
    edits = tuple(edits)
    if not edits:
        raise PreconditionError("edit instruction list is empty")
    reply = backend.complete(build_edit_request(code, edits, feedback))
    out = extract_code(reply)
    if not out:
        raise EmptyCode("backend reply contained no extractable code")
    return DiagramCode(out)


class Blame(enum.Enum):
    SKETCH_TO_CODE = "SketchToCode"
    EDITING_CODE = "EditingCode"
    NONE = "None"


@dataclass(frozen=True)
class JudgeVerdict:
    aligned: bool
    rationale: str
    blame: Blame

    def __post_init__(self):
        if (self.blame is Blame.NONE) != self.aligned:
            raise ValueError("blame must be None exactly when aligned")


def _parse_verdict(reply: str) -> JudgeVerdict | None:
    decoder = json.JSONDecoder()
    for start in range(len(reply)):
        if reply[start] != "{":
            continue
        try:
            doc, _ = decoder.raw_decode(reply[start:])
        except ValueError:
            continue
        if not isinstance(doc, dict) or "aligned" not in doc:
            continue
        aligned = bool(doc["aligned"])
        rationale = str(doc.get("rationale", ""))
        if aligned:
            return JudgeVerdict(True, rationale, Blame.NONE)
        blame_raw = str(doc.get("blame", ""))
        try:
            blame = Blame(blame_raw)
        except ValueError:
            blame = Blame.SKETCH_TO_CODE
        if blame is Blame.NONE:  # inconsistent reply; be conservative
            blame = Blame.SKETCH_TO_CODE
        return JudgeVerdict(False, rationale, blame)
    return None


def judge(diagram_png: bytes, task: SketchTask, backend: AgentBackend) -> JudgeVerdict:
    if not backend.supports_vision:
        raise PreconditionError(f"backend {backend.name} lacks vision capability")
    reply = backend.complete(build_judge_request(diagram_png, task))
    verdict = _parse_verdict(reply)
    if verdict is not None:
        return verdict
    reply = backend.complete(build_judge_request(diagram_png, task, reask=True))
    verdict = _parse_verdict(reply)
    if verdict is not None:
        return verdict
    return JudgeVerdict(False, "judge reply unparseable twice", Blame.SKETCH_TO_CODE)
