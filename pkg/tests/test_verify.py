import shutil
from pathlib import Path

import pytest

from sketchbench.tikz import DiagnosticKind
from sketchbench.verify import (
    CompilerConfig,
    CompileStatus,
    ConversionFailedError,
    ToolMissingError,
    compile_code,
    fast_check,
    parse_tex_log,
    rasterize,
    toolchain_versions,
    validate_fast,
    wrap_document,
)

from conftest import VALID_TIKZ

HAVE_TEX = shutil.which("pdflatex") is not None
HAVE_RASTERIZER = shutil.which("pdftoppm") is not None


# --- fast validator ------------------------------------------------------------

VALID_DOCS = [
    VALID_TIKZ,
    "\\begin{tikzpicture}\\end{tikzpicture}",
    "\\documentclass{standalone}\n\\begin{document}\nhello\n\\end{document}\n",
    "\\begin{tikzpicture}[scale=2]\n\\path (a) edge (b);\n\\end{tikzpicture}",
    "% just a comment\n",
]


@pytest.mark.parametrize("doc", VALID_DOCS)
def test_validate_fast_no_false_alarms_on_valid_docs(doc):
    assert validate_fast(doc) == []


def test_validate_fast_missing_end_env():
    diags = validate_fast("\\begin{tikzpicture}")
    assert any(d.kind is DiagnosticKind.ENV_MISMATCH for d in diags)


def test_validate_fast_unbalanced_brace_in_label():
    source = "\\node {a{b};"
    diags = validate_fast(source)
    assert any(
        d.kind is DiagnosticKind.BRACE_MISMATCH and d.offset == source.index("{")
        for d in diags
    )


def test_validate_fast_unmatched_brackets():
    diags = validate_fast("stray ] here")
    assert any(d.kind is DiagnosticKind.BRACE_MISMATCH for d in diags)
    diags = validate_fast("( [ unclosed")
    assert any(d.kind is DiagnosticKind.BRACE_MISMATCH for d in diags)


def test_fast_check_maps_to_compile_result():
    ok = fast_check(VALID_TIKZ)
    assert ok.status is CompileStatus.SUCCESS
    assert ok.artifact is None  # fast mode renders nothing

    bad = fast_check("\\begin{tikzpicture}\\node (a) {A}")
    assert bad.status is CompileStatus.COMPILE_ERROR
    assert len(bad.diagnostics) >= 1
    assert all(d.line >= 1 for d in bad.diagnostics)


# --- document wrapping -----------------------------------------------------------


def test_wrap_bare_tikzpicture():
    doc = wrap_document(VALID_TIKZ)
    assert doc.startswith("\\documentclass")
    assert doc.count("\\begin{tikzpicture}") == 1


def test_wrap_snippet_without_environment():
    doc = wrap_document("\\node (a) {A};")
    assert "\\begin{tikzpicture}" in doc and "\\end{tikzpicture}" in doc


def test_wrap_full_document_passthrough():
    full = "\\documentclass{article}\\begin{document}x\\end{document}"
    assert wrap_document(full) == full


# --- log parsing ------------------------------------------------------------------

SAMPLE_LOG = """\
This is pdfTeX, Version 3.14159265
(./main.tex
! Undefined control sequence.
l.4 \\undefinedmacro
                   ;
Here is some chatter.
! Missing $ inserted.
<inserted text>
l.9 x_
      2
(That makes 100 errors; please try again.)
"""


def test_parse_tex_log_extracts_line_numbers():
    diags = parse_tex_log(SAMPLE_LOG)
    assert [(d.line, d.message) for d in diags] == [
        (4, "Undefined control sequence."),
        (9, "Missing $ inserted."),
    ]


def test_parse_tex_log_message_without_line_marker_gets_zero():
    diags = parse_tex_log("! Emergency stop.\n")
    assert diags == [type(diags[0])(0, "Emergency stop.")]


# --- compile ----------------------------------------------------------------------


def test_compile_tool_missing_no_temp_leak(tmp_path):
    cfg = CompilerConfig(command=("definitely-not-a-compiler-xyz",))
    result = compile_code(VALID_TIKZ, tmp_path, cfg)
    assert result.status is CompileStatus.TOOL_MISSING
    assert list(tmp_path.iterdir()) == []


@pytest.mark.skipif(not HAVE_TEX, reason="TeX toolchain not installed")
def test_compile_minimal_valid_document(tmp_path):
    result = compile_code(VALID_TIKZ, tmp_path)
    assert result.status is CompileStatus.SUCCESS
    assert result.artifact is not None and result.artifact.exists()


@pytest.mark.skipif(not HAVE_TEX, reason="TeX toolchain not installed")
def test_compile_undefined_macro_yields_diagnostics(tmp_path):
    result = compile_code("\\begin{tikzpicture}\\undefinedmacro\\end{tikzpicture}", tmp_path)
    assert result.status is CompileStatus.COMPILE_ERROR
    assert len(result.diagnostics) >= 1
    assert any(d.line > 0 for d in result.diagnostics)


# --- rasterize --------------------------------------------------------------------


def test_rasterize_rejects_nonpositive_dpi(tmp_path):
    with pytest.raises(ValueError):
        rasterize(tmp_path / "x.pdf", 0)


def test_rasterize_missing_artifact(tmp_path):
    with pytest.raises(ConversionFailedError):
        rasterize(tmp_path / "nope.pdf", 150)


def test_rasterize_missing_tool(tmp_path):
    artifact = tmp_path / "x.pdf"
    artifact.write_bytes(b"%PDF-1.4 stub")
    cfg = CompilerConfig(rasterizer=("no-such-rasterizer-xyz", "{input}", "{output_prefix}"))
    with pytest.raises(ToolMissingError):
        rasterize(artifact, 150, cfg)


@pytest.mark.skipif(
    not (HAVE_TEX and HAVE_RASTERIZER), reason="TeX or rasterizer not installed"
)
def test_rasterize_fixture_page_structure(tmp_path):
    compiled = compile_code(VALID_TIKZ, tmp_path)
    img = rasterize(compiled.artifact, 150)
    assert img.width > 0 and img.height > 0
    import numpy as np

    arr = np.asarray(img.convert("L"))
    assert (arr > 240).mean() > 0.5  # white-majority page


def test_toolchain_versions_reports_absent_tools():
    cfg = CompilerConfig(
        command=("definitely-not-a-compiler-xyz",),
        rasterizer=("no-such-rasterizer-xyz",),
    )
    versions = toolchain_versions(cfg)
    assert versions == {
        "definitely-not-a-compiler-xyz": "absent",
        "no-such-rasterizer-xyz": "absent",
    }
