"""TOML configuration for the harness.

Documented layout (all tables optional, sane defaults everywhere):

    [pipeline]
    retry_budget = 3
    judge_enabled = true
    compiler_enabled = true
    jobs = 1

    [backends.generate]          # likewise backends.edit, backends.judge
    kind = "scripted"            # or "http"
    replies = ["..."]            # scripted: inline replies, or
    replies_file = "replies.json"  # JSON list, or {payload-substring: reply}
    # http:
    # base_url = "https://api.example.com/v1"
    # model = "some-vision-model"
    # api_key_env = "SKETCHBENCH_API_KEY"
    # vision = true
    # max_in_flight = 4

    [compiler]
    kind = "fast"                # "fast" (in-process) or "latex" (toolchain)
    command = ["pdflatex", "-interaction=nonstopmode", "-halt-on-error"]
    timeout_s = 30.0
    preamble = "\\documentclass[tikz,border=4pt]{standalone}"

    [rasterizer]
    command = ["pdftoppm", "-png", "-singlefile", "-r", "{dpi}", "{input}", "{output_prefix}"]
    dpi = 150

    [sidecar]
    base_url = "http://127.0.0.1:8750"

    [dataset]
    seed = 0
    train_fraction = 0.8
    renderer = "auto"            # auto | latex | placeholder
"""

from __future__ import annotations

import hashlib
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import AgentBackend, HttpBackend, ScriptedBackend
from .dataset import BuilderConfig
from .pipeline import ConfigError, PipelineConfig
from .verify import CompilerConfig, compile_code, fast_check, rasterize


def _backend_from_table(table: dict, config_dir: Path) -> AgentBackend:
    kind = table.get("kind", "scripted")
    if kind == "scripted":
        if "replies_file" in table:
            path = Path(table["replies_file"])
            if not path.is_absolute():
                path = config_dir / path
            replies = json.loads(path.read_text(encoding="utf-8"))
        else:
            replies = table.get("replies", [])
        return ScriptedBackend(replies, vision=table.get("vision", True))
    if kind == "http":
        try:
            return HttpBackend(
                base_url=table["base_url"],
                model=table["model"],
                api_key_env=table.get("api_key_env", "SKETCHBENCH_API_KEY"),
                vision=table.get("vision", True),
                timeout_s=table.get("timeout_s", 120.0),
                max_in_flight=table.get("max_in_flight", 4),
            )
        except KeyError as exc:
            raise ConfigError(f"http backend needs {exc.args[0]}") from exc
    raise ConfigError(f"unknown backend kind: {kind}")


@dataclass
class HarnessConfig:
    raw: dict
    config_hash: str
    compiler_kind: str
    compiler: CompilerConfig
    backends: dict = field(default_factory=dict)
    sidecar_url: str | None = None
    pipeline_table: dict = field(default_factory=dict)
    dataset_table: dict = field(default_factory=dict)

    def builder_config(self, seed: int | None = None) -> BuilderConfig:
        table = self.dataset_table
        return BuilderConfig(
            seed=table.get("seed", 0) if seed is None else seed,
            train_fraction=table.get("train_fraction", 0.8),
            renderer=table.get("renderer", "auto"),
            compiler=self.compiler,
        )

    def pipeline_config(self, artifacts_dir: Path | str) -> PipelineConfig:
        artifacts_dir = Path(artifacts_dir)
        table = self.pipeline_table
        if self.compiler_kind == "latex":
            cfg = self.compiler

            def check_fn(code):
                return compile_code(code, artifacts_dir, cfg)

            def rasterize_fn(artifact):
                img = rasterize(artifact, cfg.dpi, cfg)
                buf = io.BytesIO()
                img.save(buf, format="PNG")
                return buf.getvalue()

        else:
            check_fn = fast_check
            rasterize_fn = None

        return PipelineConfig(
            retry_budget=table.get("retry_budget", 3),
            judge_enabled=table.get("judge_enabled", True),
            compiler_enabled=table.get("compiler_enabled", True),
            generate_backend=self.backends.get("generate"),
            edit_backend=self.backends.get("edit"),
            judge_backend=self.backends.get("judge"),
            check_fn=check_fn,
            rasterize_fn=rasterize_fn,
            jobs=table.get("jobs", 1),
        )


def load_config(path: Path | str) -> HarnessConfig:
    path = Path(path)
    raw_bytes = path.read_bytes()
    try:
        doc = tomllib.loads(raw_bytes.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from exc

    compiler_table = doc.get("compiler", {})
    raster_table = doc.get("rasterizer", {})
    compiler = CompilerConfig(
        command=tuple(compiler_table.get("command", CompilerConfig.command)),
        timeout_s=compiler_table.get("timeout_s", 30.0),
        preamble=compiler_table.get("preamble", CompilerConfig.preamble),
        rasterizer=tuple(raster_table.get("command", CompilerConfig.rasterizer)),
        dpi=raster_table.get("dpi", 150),
    )

    backends = {}
    for role in ("generate", "edit", "judge"):
        table = doc.get("backends", {}).get(role)
        if table is not None:
            backends[role] = _backend_from_table(table, path.parent)

    return HarnessConfig(
        raw=doc,
        config_hash=hashlib.sha256(raw_bytes).hexdigest()[:16],
        compiler_kind=compiler_table.get("kind", "fast"),
        compiler=compiler,
        backends=backends,
        sidecar_url=doc.get("sidecar", {}).get("base_url"),
        pipeline_table=doc.get("pipeline", {}),
        dataset_table=doc.get("dataset", {}),
    )
