"""Benchmark corpus builder.

Ingests a directory tree of .tex diagrams and emits four JSONL splits
(train/test x S2C/C2C), sketch-style input images, and corpus
statistics:

    render -> crop_whitespace -> normalize_size (800x600) -> sketchify

Rendering uses the TeX toolchain when available; without it a
deterministic placeholder renderer draws the code's node graph directly
so the builder (and its tests) work offline.  Sketch codes likewise come
from a pluggable backend when configured, else from a deterministic
style-stripping fallback.  Rebuilding from the same inputs, seed, and
renderer is byte-identical; ordering is fixed by provenance id.

Mechanical inspection is a pre-screen only: it can reject obviously bad
records (blur, truncation, code fences in query text); everything else
stays Unreviewed for the human pass.
"""

from __future__ import annotations

import csv
import difflib
import enum
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

import numpy as np
from PIL import Image, ImageDraw

from .tikz import (
    DiagramCode,
    NodeGraph,
    TokenKind,
    extract_node_graph,
    parse,
)
from .verify import CompilerConfig, CompileStatus, compile_code, rasterize

TARGET_SIZE = (800, 600)


class Category(enum.Enum):
    MODEL_ARCHITECTURE = "ModelArchitecture"
    DIRECTED_GRAPH = "DirectedGraph"
    UNDIRECTED_GRAPH = "UndirectedGraph"
    FLOWCHART = "Flowchart"
    MIND_MAP = "MindMap"
    TREE = "Tree"
    TABLE = "Table"
    CIRCUIT = "Circuit"
    UNKNOWN = "Unknown"


class QueryKind(enum.Enum):
    S2C = "S2C"
    C2C = "C2C"


class InspectionStatus(enum.Enum):
    UNREVIEWED = "Unreviewed"
    PASSED = "Passed"
    REJECTED = "Rejected"


@dataclass
class QueryRecord:
    id: str
    kind: QueryKind
    query: str
    answer: str
    provenance: str
    category: Category = Category.UNKNOWN
    image_path: str | None = None
    inspection: InspectionStatus = InspectionStatus.UNREVIEWED
    reject_reason: str | None = None

    def __post_init__(self):
        if not self.answer.strip():
            raise EmptyCodeError("reference answer must be non-empty")
        if self.kind is QueryKind.S2C and not self.image_path:
            raise ValueError("S2C records need an image_path")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "query": self.query,
            "answer": self.answer,
            "provenance": self.provenance,
            "category": self.category.value,
            "image_path": self.image_path,
            "inspection": self.inspection.value,
            "reject_reason": self.reject_reason,
        }


class EmptyCodeError(ValueError):
    pass


# --- image normalization ----------------------------------------------------


def crop_whitespace(img: Image.Image, threshold: int = 250, margin: int = 4) -> Image.Image:
    """Tight bounding box of non-near-white pixels plus a margin.

    An all-white image degenerates to a 1x1 white image.
    """
    gray = np.asarray(img.convert("L"))
    mask = gray < threshold
    if not mask.any():
        return Image.new("RGB", (1, 1), (255, 255, 255))
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    top = max(int(rows[0]) - margin, 0)
    bottom = min(int(rows[-1]) + margin + 1, gray.shape[0])
    left = max(int(cols[0]) - margin, 0)
    right = min(int(cols[-1]) + margin + 1, gray.shape[1])
    return img.convert("RGB").crop((left, top, right, bottom))


def normalize_size(img: Image.Image, size: tuple[int, int] = TARGET_SIZE) -> Image.Image:
    """Scale to fit 800x600 preserving aspect ratio, pad with centered white."""
    img = img.convert("RGB")
    if img.size == size:
        return img
    scale = min(size[0] / img.width, size[1] / img.height)
    new_w = max(1, round(img.width * scale))
    new_h = max(1, round(img.height * scale))
    resized = img.resize((new_w, new_h), Image.LANCZOS)
    canvas = Image.new("RGB", size, (255, 255, 255))
    canvas.paste(resized, ((size[0] - new_w) // 2, (size[1] - new_h) // 2))
    return canvas


@dataclass(frozen=True)
class SketchifyParams:
    dark_cutoff: float = 128.0   # luminance below this is always ink
    local_offset: float = 10.0   # ink if darker than local mean by this
    window: int = 15
    jitter_seed: int | None = None  # None = deterministic mode (default)


def sketchify(img: Image.Image, params: SketchifyParams = SketchifyParams()) -> Image.Image:
    """Strip color and detail: grayscale + adaptive threshold to near-binary."""
    from scipy.ndimage import uniform_filter

    gray = np.asarray(img.convert("L"), dtype=np.float64)
    local_mean = uniform_filter(gray, size=params.window, mode="nearest")
    ink = (gray < params.dark_cutoff) | (gray < local_mean - params.local_offset)
    out = np.where(ink, 0, 255).astype(np.uint8)
    if params.jitter_seed is not None:
        rng = np.random.default_rng(params.jitter_seed)
        noise = rng.random(out.shape) < 0.02
        out = np.where(noise & (out == 0), 255, out).astype(np.uint8)
    return Image.fromarray(out, mode="L").convert("RGB")


# --- sketch-code fallback and placeholder rendering ----------------------------


def strip_styles(code: str) -> str:
    """Drop option blocks from the source: the deterministic offline
    stand-in for backend-generated sketch code."""
    doc = DiagramCode(code)
    out = []
    last = 0
    for tok in doc.tokens():
        if tok.kind is TokenKind.OPTION_BLOCK:
            out.append(code[last : tok.span[0]])
            last = tok.span[1]
    out.append(code[last:])
    return "".join(out)


def render_placeholder(graph: NodeGraph, size: tuple[int, int] = TARGET_SIZE) -> Image.Image:
    """Crude geometric render of a node graph (offline render fallback).

    Vertices sit on an ellipse in sorted-id order; edges are straight
    lines; labels use PIL's built-in font.  Deterministic by
    construction.
    """
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    ids = sorted(set(graph.vertices) | {r for r in graph.dangling_refs})
    if not ids:
        draw.rectangle([size[0] // 3, size[1] // 3, 2 * size[0] // 3, 2 * size[1] // 3], outline=0, width=2)
        return img
    cx, cy = size[0] / 2, size[1] / 2
    rx, ry = size[0] * 0.36, size[1] * 0.36
    pos = {}
    for k, vid in enumerate(ids):
        angle = 2 * np.pi * k / len(ids)
        pos[vid] = (cx + rx * np.cos(angle), cy + ry * np.sin(angle))
    for edge in graph.edges:
        if edge.src in pos and edge.dst in pos:
            draw.line([pos[edge.src], pos[edge.dst]], fill=0, width=2)
    for vid in ids:
        x, y = pos[vid]
        label = graph.vertices.get(vid, vid) or vid
        w = max(30, 7 * len(label) + 14)
        draw.rectangle([x - w / 2, y - 16, x + w / 2, y + 16], fill=(255, 255, 255), outline=0, width=2)
        draw.text((x - 7 * len(label) / 2, y - 6), label, fill=0)
    return img


# --- query synthesis -------------------------------------------------------------


def _diff_bullets(sketch_code: str, original_code: str) -> list[str]:
    bullets = []
    diff = difflib.unified_diff(
        sketch_code.splitlines(), original_code.splitlines(), lineterm="", n=0
    )
    for line in diff:
        if line.startswith(("+++", "---", "@@")):
            continue
        if line.startswith("+") and line[1:].strip():
            bullets.append(f"Add: {line[1:].strip()}")
        elif line.startswith("-") and line[1:].strip():
            bullets.append(f"Remove: {line[1:].strip()}")
    return bullets


S2C_TEMPLATE = (
    "Convert the attached hand-drawn sketch into compilable TikZ code. "
    "Reproduce every node, label, and connection shown."
)

C2C_NO_CHANGES = "No changes required; return the code as is."


def build_queries(
    sketch_code: str,
    original_code: str,
    image_path: str,
    record_id: str = "sample",
    provenance: str = "unknown",
    category: Category = Category.UNKNOWN,
) -> tuple[QueryRecord, QueryRecord]:
    """One S2C and one C2C record sharing the same reference answer."""
    if not original_code.strip() or not sketch_code.strip():
        raise EmptyCodeError("both sketch and original code must be non-empty")

    bullets = _diff_bullets(sketch_code, original_code)
    if bullets:
        detail = "Supplementary details to incorporate:\n" + "\n".join(bullets)
        changes = "Requested changes:\n" + "\n".join(bullets)
    else:
        detail = "The sketch already carries every required detail."
        changes = C2C_NO_CHANGES

    s2c = QueryRecord(
        id=f"{record_id}-s2c",
        kind=QueryKind.S2C,
        query=f"{S2C_TEMPLATE}\n{detail}",
        answer=original_code,
        provenance=provenance,
        category=category,
        image_path=image_path,
    )
    c2c = QueryRecord(
        id=f"{record_id}-c2c",
        kind=QueryKind.C2C,
        query=f"Current diagram code:\n{sketch_code}\n\n{changes}",
        answer=original_code,
        provenance=provenance,
        category=category,
    )
    return s2c, c2c


_CODE_MARKER = re.compile(r"Current diagram code:\n(.*?)\n\n(?:Requested changes:|No changes required)", re.DOTALL)


def sketch_code_from_query(query: str) -> str | None:
    """Recover the embedded sketch code from a C2C query."""
    match = _CODE_MARKER.search(query)
    return match.group(1) if match else None


def changes_from_query(query: str) -> str:
    """The instruction section of a C2C query (everything after the code)."""
    match = _CODE_MARKER.search(query)
    if not match:
        return query
    return query[match.end(1) :].strip()


# --- mechanical inspection ---------------------------------------------------------


@dataclass(frozen=True)
class InspectRules:
    # conservative: flags near-flat images only, sparse diagrams score ~0.5
    min_edge_energy: float = 0.05
    border_white: int = 250        # border pixels darker than this flag truncation
    forbid_code_fences: bool = True


def inspect_flags(record: QueryRecord, rules: InspectRules = InspectRules(), image_root: Path | None = None) -> QueryRecord:
    """Mechanical pre-screen; sets Rejected(reason) or leaves Unreviewed."""
    if rules.forbid_code_fences and "```" in record.query:
        record.inspection = InspectionStatus.REJECTED
        record.reject_reason = "code-in-query"
        return record

    if record.image_path:
        path = Path(record.image_path)
        if image_root is not None and not path.is_absolute():
            path = image_root / path
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"), dtype=np.float64)
        border = np.concatenate([gray[0], gray[-1], gray[:, 0], gray[:, -1]])
        if (border < rules.border_white).any():
            record.inspection = InspectionStatus.REJECTED
            record.reject_reason = "truncated"
            return record
        energy = (np.abs(np.diff(gray, axis=0)).mean() + np.abs(np.diff(gray, axis=1)).mean()) / 2
        if energy < rules.min_edge_energy:
            record.inspection = InspectionStatus.REJECTED
            record.reject_reason = "blurry"
            return record

    return record


# --- statistics --------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def count_tokens(text: str) -> int:
    """Whitespace-split plus punctuation separation (the documented tokenizer)."""
    return len(_TOKEN_RE.findall(text))


@dataclass
class CorpusStats:
    cells: dict = field(default_factory=dict)  # "train_s2c" -> cell dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"cells": self.cells, "meta": self.meta}


def _stats_cell(records: list[QueryRecord]) -> dict:
    query_counts = [count_tokens(r.query) for r in records]
    answer_counts = [count_tokens(r.answer) for r in records]

    def summary(counts):
        if not counts:
            return {"min": None, "max": None, "avg": None}
        return {
            "min": min(counts),
            "max": max(counts),
            "avg": round(sum(counts) / len(counts), 4),
        }

    return {
        "sample_count": len(records),
        "query_tokens": summary(query_counts),
        "answer_tokens": summary(answer_counts),
    }


def compute_stats(records_by_cell: dict[str, list[QueryRecord]], meta: dict | None = None) -> CorpusStats:
    cells = {name: _stats_cell(records) for name, records in sorted(records_by_cell.items())}
    return CorpusStats(cells=cells, meta=meta or {})


# --- corpus driver -----------------------------------------------------------------


@dataclass
class BuilderConfig:
    seed: int = 0
    train_fraction: float = 0.8
    renderer: str = "auto"  # auto | latex | placeholder
    compiler: CompilerConfig = field(default_factory=CompilerConfig)
    sketchify_params: SketchifyParams = field(default_factory=SketchifyParams)
    inspect_rules: InspectRules = field(default_factory=InspectRules)
    sketch_backend: object | None = None  # optional AgentBackend generating sketch codes


def _load_categories(src_dir: Path) -> dict[str, Category]:
    meta = src_dir / "metadata.csv"
    mapping: dict[str, Category] = {}
    if not meta.exists():
        return mapping
    with meta.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                mapping[row["provenance"]] = Category(row["category"])
            except (KeyError, ValueError):
                continue
    return mapping


def _render_source(source: str, cfg: BuilderConfig, workdir: Path) -> Image.Image | None:
    use_latex = cfg.renderer == "latex"
    if cfg.renderer == "auto":
        import shutil as _shutil

        use_latex = (
            _shutil.which(cfg.compiler.command[0]) is not None
            and _shutil.which(cfg.compiler.rasterizer[0]) is not None
        )
    if use_latex:
        result = compile_code(source, workdir, cfg.compiler)
        if result.status is CompileStatus.SUCCESS and result.artifact is not None:
            return rasterize(result.artifact, cfg.compiler.dpi, cfg.compiler)
        return None
    parsed = parse(source)
    graph = extract_node_graph(parsed.tree) if parsed.ok else NodeGraph()
    return render_placeholder(graph)


def _generate_sketch_code(source: str, cfg: BuilderConfig) -> str:
    if cfg.sketch_backend is not None:
        from .backends import ChatRequest, Message, TextPart
        from .agents import extract_code

        request = ChatRequest(
            messages=(
                Message(
                    "system",
                    (TextPart("Simplify this TikZ code into a bare sketch: drop colors and styling, keep structure."),),
                ),
                Message("user", (TextPart(source),)),
            )
        )
        try:
            reply = cfg.sketch_backend.complete(request)
            code = extract_code(reply)
            if code.strip():
                return code
        except Exception:
            pass  # fall through to the deterministic fallback
    return strip_styles(source)


def build_corpus(src_dir: Path | str, out_dir: Path | str, cfg: BuilderConfig = BuilderConfig()) -> CorpusStats:
    """Build the full corpus; returns the stats written to stats.json."""
    src_dir = Path(src_dir)
    out_dir = Path(out_dir)
    tex_files = sorted(p for p in src_dir.rglob("*.tex") if p.is_file())
    if not tex_files:
        raise FileNotFoundError(f"no .tex files under {src_dir}")

    categories = _load_categories(src_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    work_dir = out_dir / "build"
    work_dir.mkdir(parents=True, exist_ok=True)

    provenances = []
    pairs: dict[str, tuple[QueryRecord, QueryRecord]] = {}
    skipped: list[str] = []
    for tex in tex_files:
        provenance = tex.relative_to(src_dir).as_posix()
        source = tex.read_text(encoding="utf-8", errors="replace")
        if not source.strip():
            skipped.append(provenance)
            continue
        record_id = re.sub(r"[^A-Za-z0-9_-]+", "_", provenance.rsplit(".", 1)[0])
        sketch_code = _generate_sketch_code(source, cfg)
        rendered = _render_source(sketch_code, cfg, work_dir)
        if rendered is None:
            skipped.append(provenance)
            continue
        image = sketchify(normalize_size(crop_whitespace(rendered)), cfg.sketchify_params)
        image_rel = f"images/{record_id}.png"
        image.save(out_dir / image_rel, format="PNG")

        s2c, c2c = build_queries(
            sketch_code,
            source,
            image_rel,
            record_id=record_id,
            provenance=provenance,
            category=categories.get(provenance, Category.UNKNOWN),
        )
        inspect_flags(s2c, cfg.inspect_rules, image_root=out_dir)
        inspect_flags(c2c, cfg.inspect_rules)
        provenances.append(provenance)
        pairs[provenance] = (s2c, c2c)

    rng = Random(cfg.seed)
    shuffled = sorted(provenances)
    rng.shuffle(shuffled)
    n_train = round(len(shuffled) * cfg.train_fraction)
    train_set = set(shuffled[:n_train])

    cells: dict[str, list[QueryRecord]] = {
        "train_s2c": [],
        "train_c2c": [],
        "test_s2c": [],
        "test_c2c": [],
    }
    rejected = 0
    for provenance in sorted(pairs):
        split = "train" if provenance in train_set else "test"
        s2c, c2c = pairs[provenance]
        for record, kind in ((s2c, "s2c"), (c2c, "c2c")):
            if record.inspection is InspectionStatus.REJECTED:
                rejected += 1
                continue
            cells[f"{split}_{kind}"].append(record)

    for name, records in cells.items():
        path = out_dir / f"{name}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    stats = compute_stats(
        cells,
        meta={
            "seed": cfg.seed,
            "train_fraction": cfg.train_fraction,
            "renderer": cfg.renderer,
            "sources": len(tex_files),
            "rejected": rejected,
            "render_skipped": sorted(skipped),
        },
    )
    (out_dir / "stats.json").write_text(
        json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return stats


def load_split(path: Path | str) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
