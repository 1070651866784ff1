"""Pipeline orchestrator: generate, edit, check, judge, route fallbacks.

One run is strictly sequential and performs at most ``1 + retry_budget``
code-producing attempts.  Routing rules:

* a compile failure goes back to the phase that produced the code
  (Edit if an edit happened, else Generate), with the diagnostics as
  feedback;
* a negative judge verdict goes to the blamed agent; blame on the
  editing agent is coerced to the generator when no edit phase exists;
* backend errors are captured into the attempt and retried in the same
  phase; nothing escapes ``run_pipeline`` except ``ConfigError``.

A failed run still notes its best-compiling attempt so similarity
metrics can score every sample while pass@1 counts the failure.

Run records persist as JSONL, one schema-versioned line per record;
appends are flocked so parallel workers never interleave lines.
"""

from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import __version__
from .agents import (
    Blame,
    EmptyCode,
    JudgeVerdict,
    PreconditionError,
    SketchTask,
    edit_code,
    generate_code,
    judge,
)
from .backends import AgentBackend, BackendError
from .tikz import DiagramCode
from .verify import CompileResult, CompileStatus, fast_check


class ConfigError(ValueError):
    pass


class Phase(enum.Enum):
    GENERATE = "Generate"
    EDIT = "Edit"


class Outcome(enum.Enum):
    ACCEPTED = "Accepted"
    FAILED = "Failed"


class ErrorLabel(enum.Enum):
    MISALIGNED_STRUCTURE = "MisalignedStructure"
    MISIDENTIFIED_ELEMENT = "MisidentifiedElement"
    MISCONNECTED_RELATIONSHIP = "MisconnectedRelationship"


@dataclass
class Attempt:
    phase: Phase
    code: DiagramCode | None
    compile: CompileResult | None = None
    verdict: JudgeVerdict | None = None
    error: str | None = None


@dataclass(frozen=True)
class RunRecord:
    task_id: str
    attempts: tuple[Attempt, ...]
    outcome: Outcome
    final_code: DiagramCode | None
    diagram_path: Path | None
    reason: str = ""
    best_attempt_index: int | None = None
    error_label: ErrorLabel | None = None
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome is Outcome.ACCEPTED and self.attempts:
            last = self.attempts[-1]
            ok = last.compile is not None and last.compile.status in (
                CompileStatus.SUCCESS,
                CompileStatus.SKIPPED,
            )
            if not ok:
                raise ValueError("Accepted run whose last attempt did not pass checking")

    def metric_code(self) -> DiagramCode | None:
        """Code to score: the final code, else the best-compiling attempt's."""
        if self.final_code is not None:
            return self.final_code
        if self.best_attempt_index is not None:
            return self.attempts[self.best_attempt_index].code
        return None

    def final_compile_status(self) -> CompileStatus:
        for attempt in reversed(self.attempts):
            if attempt.compile is not None and attempt.compile.status is not CompileStatus.SKIPPED:
                return attempt.compile.status
        return CompileStatus.SKIPPED


def annotate(record: RunRecord, label: ErrorLabel) -> RunRecord:
    return replace(record, error_label=label)


@dataclass
class PipelineConfig:
    retry_budget: int = 3
    judge_enabled: bool = True
    compiler_enabled: bool = True
    generate_backend: AgentBackend | None = None
    edit_backend: AgentBackend | None = None
    judge_backend: AgentBackend | None = None
    check_fn: Callable[[DiagramCode], CompileResult] = fast_check
    rasterize_fn: Callable[[Path], bytes | None] | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ConfigError("retry_budget must be >= 0")


def _validate_backends(task: SketchTask, cfg: PipelineConfig) -> None:
    needs_generate = task.initial_code is None
    if needs_generate and cfg.generate_backend is None:
        raise ConfigError("no generate backend configured")
    if (task.edit_instructions or task.initial_code is not None) and cfg.edit_backend is None:
        raise ConfigError("task has edit instructions but no edit backend configured")
    if cfg.judge_enabled and cfg.judge_backend is None:
        raise ConfigError("judge enabled but no judge backend configured")


def _diagnostics_text(result: CompileResult) -> str:
    lines = [f"line {d.line}: {d.message}" for d in result.diagnostics[:8]]
    return "compilation failed:\n" + "\n".join(lines) if lines else "compilation failed"


def run_pipeline(task: SketchTask, cfg: PipelineConfig) -> RunRecord:
    _validate_backends(task, cfg)
    attempts: list[Attempt] = []
    timings: dict[str, float] = {}
    max_attempts = 1 + cfg.retry_budget

    def tick(phase_name: str, started: float) -> None:
        timings[phase_name] = timings.get(phase_name, 0.0) + (time.perf_counter() - started)

    has_edit_phase = bool(task.edit_instructions) or task.initial_code is not None
    phase = Phase.EDIT if task.initial_code is not None else Phase.GENERATE
    base_code = DiagramCode(task.initial_code) if task.initial_code is not None else None
    feedback: str | None = None

    def finish(outcome, final_code, diagram_path, reason="") -> RunRecord:
        best = None
        for i, a in enumerate(attempts):
            if a.compile is not None and a.compile.status is CompileStatus.SUCCESS:
                best = i
        if best is None:
            best = next(
                (i for i in range(len(attempts) - 1, -1, -1) if attempts[i].code is not None),
                None,
            )
        return RunRecord(
            task_id=task.task_id,
            attempts=tuple(attempts),
            outcome=outcome,
            final_code=final_code,
            diagram_path=diagram_path,
            reason=reason,
            best_attempt_index=best,
            timings=dict(timings),
        )

    while len(attempts) < max_attempts:
        started = time.perf_counter()
        attempt = Attempt(phase=phase, code=None)
        try:
            if phase is Phase.GENERATE:
                attempt.code = generate_code(task, cfg.generate_backend, feedback)
            else:
                edits = task.edit_instructions or ("apply the requested corrections",)
                attempt.code = edit_code(base_code, edits, cfg.edit_backend, feedback)
        except (BackendError, EmptyCode, PreconditionError) as exc:
            attempt.error = f"{type(exc).__name__}: {exc}"
        tick(phase.value.lower(), started)
        attempts.append(attempt)

        if attempt.code is None:
            feedback = attempt.error
            continue  # retry the same phase

        if phase is Phase.GENERATE and task.edit_instructions:
            # generated code flows into the edit phase; only the edited
            # result is checked
            attempt.compile = CompileResult(CompileStatus.SKIPPED)
            base_code = attempt.code
            phase = Phase.EDIT
            feedback = None
            continue

        started = time.perf_counter()
        if cfg.compiler_enabled:
            result = cfg.check_fn(attempt.code)
        else:
            result = CompileResult(CompileStatus.SKIPPED)
        tick("compile", started)
        attempt.compile = result

        if result.status in (CompileStatus.COMPILE_ERROR, CompileStatus.TIMEOUT):
            feedback = _diagnostics_text(result)
            continue  # same phase produced the code; retry it
        if result.status is CompileStatus.TOOL_MISSING:
            return finish(
                Outcome.FAILED, None, None, "compiler tool missing; cannot verify"
            )

        if (
            cfg.judge_enabled
            and result.status is CompileStatus.SUCCESS
            and result.artifact is not None
            and cfg.rasterize_fn is not None
        ):
            started = time.perf_counter()
            diagram_png = None
            try:
                diagram_png = cfg.rasterize_fn(result.artifact)
            except Exception as exc:
                attempt.error = f"rasterize failed: {exc}"
            verdict = None
            if diagram_png is not None:
                try:
                    verdict = judge(diagram_png, task, cfg.judge_backend)
                except (BackendError, PreconditionError) as exc:
                    attempt.error = f"judge failed: {type(exc).__name__}: {exc}"
            tick("judge", started)
            attempt.verdict = verdict
            if verdict is not None and not verdict.aligned:
                if verdict.blame is Blame.EDITING_CODE and has_edit_phase:
                    phase = Phase.EDIT
                else:
                    phase = Phase.GENERATE  # blame coerced when no edit phase ran
                feedback = verdict.rationale or "judged not aligned with the sketch"
                continue

        return finish(Outcome.ACCEPTED, attempt.code, result.artifact)

    return finish(
        Outcome.FAILED,
        None,
        None,
        f"retry budget exhausted after {len(attempts)} attempts",
    )


# --- persistence ----------------------------------------------------------------

RUN_LOG_VERSION = 1


def _compile_to_dict(result: CompileResult | None):
    if result is None:
        return None
    return {
        "status": result.status.value,
        "diagnostics": [{"line": d.line, "message": d.message} for d in result.diagnostics],
        "artifact": str(result.artifact) if result.artifact else None,
        "duration": result.duration,
    }


def record_to_dict(record: RunRecord, extra: dict | None = None) -> dict:
    doc = {
        "v": RUN_LOG_VERSION,
        "harness_version": __version__,
        "task_id": record.task_id,
        "outcome": record.outcome.value,
        "reason": record.reason,
        "final_code": record.final_code.source if record.final_code else None,
        "diagram_path": str(record.diagram_path) if record.diagram_path else None,
        "best_attempt_index": record.best_attempt_index,
        "error_label": record.error_label.value if record.error_label else None,
        "timings": record.timings,
        "attempts": [
            {
                "phase": a.phase.value,
                "code": a.code.source if a.code else None,
                "compile": _compile_to_dict(a.compile),
                "verdict": (
                    {
                        "aligned": a.verdict.aligned,
                        "rationale": a.verdict.rationale,
                        "blame": a.verdict.blame.value,
                    }
                    if a.verdict
                    else None
                ),
                "error": a.error,
            }
            for a in record.attempts
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def persist_run(record: RunRecord | dict, log_path: Path | str, extra: dict | None = None) -> None:
    """Append exactly one JSON line; concurrent appends stay intact."""
    doc = record if isinstance(record, dict) else record_to_dict(record, extra)
    line = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    path = Path(log_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        try:
            import fcntl

            fcntl.flock(fd, fcntl.LOCK_EX)
        except ImportError:  # non-POSIX: rely on O_APPEND atomicity
            pass
        os.write(fd, line.encode("utf-8"))
    finally:
        os.close(fd)


class RunLogError(ValueError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def load_run_log(log_path: Path | str) -> list[dict]:
    """Parse a JSONL run log; raises RunLogError naming the bad line."""
    path = Path(log_path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise RunLogError(f"corrupt run log line: {exc}", number) from exc
            if "v" not in doc or ("task_id" not in doc and doc.get("kind") != "header"):
                raise RunLogError("missing required run record fields", number)
            records.append(doc)
    return records
