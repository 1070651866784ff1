r"""Mechanical verification: external TeX compilation and a fast in-process validator.

Two interchangeable checking routes:

* ``compile_code`` shells out to a TeX toolchain in a private temp dir,
  parses ``!``/``l.<num>`` log lines into diagnostics, and keeps the
  rendered page; every outcome is a ``CompileResult``, never an
  exception.
* ``fast_check`` wraps ``validate_fast`` (parser + balance checks) so
  the whole harness runs with no TeX installed.  Fast-mode Success
  carries no artifact; only toolchain Success implies a rendered page.

Security note: compiling untrusted TeX executes untrusted code in the
TeX engine; run inside a sandbox if sources are not your own.
"""

from __future__ import annotations

import enum
import hashlib
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .tikz import (
    Diagnostic,
    DiagnosticKind,
    DiagramCode,
    TokenKind,
    parse,
)


class CompileStatus(enum.Enum):
    SUCCESS = "Success"
    COMPILE_ERROR = "CompileError"
    TIMEOUT = "Timeout"
    TOOL_MISSING = "ToolMissing"
    SKIPPED = "Skipped"


@dataclass(frozen=True)
class CompileDiagnostic:
    line: int
    message: str


@dataclass(frozen=True)
class CompileResult:
    status: CompileStatus
    diagnostics: tuple[CompileDiagnostic, ...] = ()
    artifact: Path | None = None
    duration: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.status is CompileStatus.SUCCESS


class VerifyError(RuntimeError):
    pass


class ToolMissingError(VerifyError):
    pass


class ConversionFailedError(VerifyError):
    pass


DEFAULT_PREAMBLE = "\\documentclass[tikz,border=4pt]{standalone}"


@dataclass(frozen=True)
class CompilerConfig:
    command: tuple[str, ...] = ("pdflatex", "-interaction=nonstopmode", "-halt-on-error")
    timeout_s: float = 30.0
    preamble: str = DEFAULT_PREAMBLE
    rasterizer: tuple[str, ...] = ("pdftoppm", "-png", "-singlefile", "-r", "{dpi}", "{input}", "{output_prefix}")
    dpi: int = 150


def wrap_document(source: str, preamble: str = DEFAULT_PREAMBLE) -> str:
    """Wrap bare tikz code in a standalone document; full documents pass through."""
    if "\\documentclass" in source:
        return source
    body = source
    if "\\begin{tikzpicture}" not in source:
        body = "\\begin{tikzpicture}\n" + source + "\n\\end{tikzpicture}"
    return f"{preamble}\n\\begin{{document}}\n{body}\n\\end{{document}}\n"


_ERROR_LINE = re.compile(r"^! ?(.*)$")
_SOURCE_LINE = re.compile(r"^l\.(\d+)")


def parse_tex_log(log_text: str) -> list[CompileDiagnostic]:
    """Extract (line, message) pairs from TeX log output.

    A ``! message`` opens a diagnostic; the next ``l.<num>`` line
    attaches the source line.  Messages with no line marker report 0.
    """
    diags: list[CompileDiagnostic] = []
    pending: str | None = None
    for raw in log_text.splitlines():
        err = _ERROR_LINE.match(raw)
        if err:
            if pending is not None:
                diags.append(CompileDiagnostic(0, pending))
            pending = err.group(1).strip()
            continue
        loc = _SOURCE_LINE.match(raw)
        if loc and pending is not None:
            diags.append(CompileDiagnostic(int(loc.group(1)), pending))
            pending = None
    if pending is not None:
        diags.append(CompileDiagnostic(0, pending))
    return diags


def compile_code(
    code: DiagramCode | str,
    workdir: Path | str,
    cfg: CompilerConfig = CompilerConfig(),
) -> CompileResult:
    """Compile diagram code with the external toolchain.

    The artifact (rendered page) is copied into ``workdir`` named by a
    hash of the source; the compilation temp dir is always removed.
    """
    if isinstance(code, DiagramCode):
        code = code.source
    started = time.perf_counter()
    if shutil.which(cfg.command[0]) is None:
        return CompileResult(CompileStatus.TOOL_MISSING, duration=time.perf_counter() - started)

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    doc = wrap_document(code, cfg.preamble)
    digest = hashlib.sha1(doc.encode("utf-8")).hexdigest()[:12]

    with tempfile.TemporaryDirectory(prefix="sketchbench-tex-") as tmp:
        tmpdir = Path(tmp)
        tex_path = tmpdir / "main.tex"
        tex_path.write_text(doc, encoding="utf-8")
        try:
            proc = subprocess.run(
                list(cfg.command) + [tex_path.name],
                cwd=tmpdir,
                capture_output=True,
                text=True,
                timeout=cfg.timeout_s,
            )
        except subprocess.TimeoutExpired:
            return CompileResult(CompileStatus.TIMEOUT, duration=time.perf_counter() - started)

        log_path = tmpdir / "main.log"
        log_text = log_path.read_text(encoding="utf-8", errors="replace") if log_path.exists() else proc.stdout
        produced = next((p for p in (tmpdir / "main.pdf", tmpdir / "main.dvi") if p.exists()), None)

        if proc.returncode != 0 or produced is None:
            diags = parse_tex_log(log_text)
            if not diags:
                diags = [CompileDiagnostic(0, f"compiler exited with status {proc.returncode}")]
            return CompileResult(
                CompileStatus.COMPILE_ERROR,
                tuple(diags),
                duration=time.perf_counter() - started,
            )

        artifact = workdir / f"{digest}{produced.suffix}"
        shutil.copyfile(produced, artifact)

    return CompileResult(
        CompileStatus.SUCCESS,
        artifact=artifact,
        duration=time.perf_counter() - started,
    )


def validate_fast(code: DiagramCode | str) -> list[Diagnostic]:
    """Parser-based plausibility check; empty result means plausibly compilable.

    Covers brace/bracket balance, matched \\begin/\\end pairs, and
    semicolon-terminated statements.  Sound on the curated valid set;
    completeness over the full TeX language is not claimed.
    """
    if isinstance(code, str):
        code = DiagramCode(code)
    result = parse(code)
    diags = list(result.diagnostics)

    stack: list[int] = []
    for tok in code.tokens():
        if tok.kind is TokenKind.PUNCT and tok.text == "[":
            stack.append(tok.span[0])
        elif tok.kind is TokenKind.PUNCT and tok.text == "]":
            if stack:
                stack.pop()
            else:
                diags.append(
                    Diagnostic(DiagnosticKind.BRACE_MISMATCH, tok.span[0], "unmatched ']'")
                )
    for offset in stack:
        diags.append(Diagnostic(DiagnosticKind.BRACE_MISMATCH, offset, "unmatched '['"))

    diags.sort(key=lambda d: d.offset)
    return diags


def _line_of(source: str, offset: int) -> int:
    return source.count("\n", 0, min(offset, len(source))) + 1


def fast_check(code: DiagramCode | str) -> CompileResult:
    """In-process stand-in for ``compile_code``; Success carries no artifact."""
    if isinstance(code, str):
        code = DiagramCode(code)
    started = time.perf_counter()
    diags = validate_fast(code)
    duration = time.perf_counter() - started
    if diags:
        return CompileResult(
            CompileStatus.COMPILE_ERROR,
            tuple(CompileDiagnostic(_line_of(code.source, d.offset), str(d)) for d in diags),
            duration=duration,
        )
    return CompileResult(CompileStatus.SUCCESS, duration=duration)


def rasterize(artifact_path: Path | str, dpi: int, cfg: CompilerConfig = CompilerConfig()) -> Image.Image:
    """Render a compiled page to an RGB raster at the requested dpi."""
    if dpi <= 0:
        raise ValueError("dpi must be positive")
    artifact_path = Path(artifact_path)
    if not artifact_path.exists():
        raise ConversionFailedError(f"artifact does not exist: {artifact_path}")
    tool = cfg.rasterizer[0]
    if shutil.which(tool) is None:
        raise ToolMissingError(f"rasterizer not on PATH: {tool}")

    with tempfile.TemporaryDirectory(prefix="sketchbench-raster-") as tmp:
        prefix = str(Path(tmp) / "page")
        cmd = [
            part.format(dpi=dpi, input=str(artifact_path), output_prefix=prefix)
            for part in cfg.rasterizer
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        out_path = Path(prefix + ".png")
        if proc.returncode != 0 or not out_path.exists():
            raise ConversionFailedError(
                f"rasterizer failed with status {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        with Image.open(out_path) as img:
            return img.convert("RGB")


def toolchain_versions(cfg: CompilerConfig = CompilerConfig()) -> dict[str, str]:
    """First version line of each configured external tool ('absent' if missing)."""
    versions = {}
    for name in (cfg.command[0], cfg.rasterizer[0]):
        path = shutil.which(name)
        if path is None:
            versions[name] = "absent"
            continue
        try:
            proc = subprocess.run([name, "--version"], capture_output=True, text=True, timeout=10)
            first = (proc.stdout or proc.stderr).strip().splitlines()
            versions[name] = first[0] if first else "unknown"
        except Exception:
            versions[name] = "unknown"
    return versions
