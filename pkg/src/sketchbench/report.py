"""Metric report assembly from persisted run logs.

``cmd_eval`` writes a header line plus one run line per sample into a
JSONL log, then builds its report *from that log*; ``cmd_report``
re-reads the same log through the same builder, so replaying a log
reproduces the report byte-for-byte.

Aggregates are macro averages of per-sample scores.  pass@1 is computed
over runs whose compile actually ran (Skipped runs are excluded and the
exclusion is counted in the metadata).  Image columns appear only when
rendered diagram pairs exist on disk; FID/KID/CLIP-FID/IS/LPIPS
additionally need a reachable sidecar, otherwise the columns are absent
and a warning is recorded.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import normalize_size
from .imagemetrics import FeatureModel, fid, inception_score, kid, ssim
from .sidecar_client import SidecarClient, SidecarRequestError, SidecarUnavailable
from .textmetrics import (
    Metric,
    bleu,
    code_tokens,
    codebleu,
    chrf,
    edit_distance,
    rouge_l,
    ruby,
)
from .verify import CompileStatus

TEXT_METRICS = ("pass1", "rouge_l", "codebleu", "bleu", "edit_distance", "chrf", "ruby")
IMAGE_METRICS = ("is", "fid", "kid", "cfid", "lpips", "ssim")
ALL_METRICS = TEXT_METRICS + IMAGE_METRICS

_COLUMN_NAMES = {
    "pass1": "Pass@1",
    "rouge_l": "ROUGE-L",
    "codebleu": "C-BLEU",
    "bleu": "BLEU",
    "edit_distance": "ED",
    "chrf": "chrF",
    "ruby": "RUBY",
    "is": "IS",
    "fid": "FID",
    "kid": "KID",
    "cfid": "C-FID",
    "lpips": "LPIPS",
    "ssim": "SSIM",
}


class ReportError(ValueError):
    pass


def split_log(docs: list[dict]) -> tuple[dict, list[dict]]:
    header = {}
    runs = []
    for doc in docs:
        if doc.get("kind") == "header":
            header = doc
        else:
            runs.append(doc)
    if not runs:
        raise ReportError("run log contains no run records")
    return header, runs


def _candidate_code(doc: dict) -> str | None:
    if doc.get("final_code"):
        return doc["final_code"]
    idx = doc.get("best_attempt_index")
    if idx is not None and 0 <= idx < len(doc.get("attempts", [])):
        return doc["attempts"][idx].get("code")
    return None


def _final_compile_status(doc: dict) -> str:
    for attempt in reversed(doc.get("attempts", [])):
        comp = attempt.get("compile")
        if comp and comp["status"] != CompileStatus.SKIPPED.value:
            return comp["status"]
    return CompileStatus.SKIPPED.value


def _text_scores(candidate: str | None, reference: str, wanted: set[str]) -> dict[str, float]:
    scores: dict[str, float] = {}
    if candidate is None:
        # no code survived the run: worst score on every similarity axis
        defaults = {"rouge_l": 0.0, "codebleu": 0.0, "bleu": 0.0, "chrf": 0.0, "ruby": 0.0, "edit_distance": 100.0}
        return {k: v for k, v in defaults.items() if k in wanted}
    cand_tokens = code_tokens(candidate)
    ref_tokens = code_tokens(reference)
    if "bleu" in wanted:
        scores["bleu"] = bleu(cand_tokens, ref_tokens).value
    if "rouge_l" in wanted:
        scores["rouge_l"] = rouge_l(cand_tokens, ref_tokens).value
    if "chrf" in wanted:
        scores["chrf"] = chrf(candidate, reference).value
    if "edit_distance" in wanted:
        scores["edit_distance"] = edit_distance(candidate, reference).value
    if "codebleu" in wanted:
        scores["codebleu"] = codebleu(candidate, reference).value
    if "ruby" in wanted:
        scores["ruby"] = ruby(candidate, reference).value
    return scores


def _load_pair(gen_path: str, ref_path: str):
    with Image.open(gen_path) as g, Image.open(ref_path) as r:
        return normalize_size(g.convert("RGB")), normalize_size(r.convert("RGB"))


def _image_section(samples, wanted, sidecar_url, warnings):
    """Per-sample ssim/lpips plus distribution metrics over rendered pairs."""
    pairs = []
    for row, doc in samples:
        gen = doc.get("diagram_path")
        ref = (doc.get("sample") or {}).get("reference_image")
        if gen and ref and Path(gen).exists() and Path(ref).exists():
            pairs.append((row, gen, ref))
    aggregates: dict[str, float] = {}
    if not pairs:
        if wanted & set(IMAGE_METRICS):
            warnings.append("image metrics skipped: no rendered diagram pairs on disk")
        return aggregates

    if "ssim" in wanted:
        values = []
        for row, gen, ref in pairs:
            g, r = _load_pair(gen, ref)
            value = ssim(g, r).value
            row["scores"]["ssim"] = value
            values.append(value)
        aggregates["ssim"] = float(np.mean(values))

    sidecar_wanted = wanted & {"fid", "kid", "cfid", "is", "lpips"}
    if not sidecar_wanted:
        return aggregates
    if not sidecar_url:
        warnings.append("sidecar metrics skipped: no sidecar configured")
        return aggregates
    client = SidecarClient(sidecar_url)
    try:
        gen_images = [Image.open(p).convert("RGB") for _, p, _ in pairs]
        ref_images = [Image.open(p).convert("RGB") for _, _, p in pairs]
        if "lpips" in wanted:
            values = []
            for (row, _, _), g, r in zip(pairs, gen_images, ref_images):
                value = client.lpips(normalize_size(g), normalize_size(r))
                row["scores"]["lpips"] = value
                values.append(value)
            aggregates["lpips"] = float(np.mean(values))
        if {"fid", "kid", "cfid"} & wanted and len(pairs) >= 2:
            inc_gen = client.features(FeatureModel.INCEPTION_POOL3, gen_images)
            inc_ref = client.features(FeatureModel.INCEPTION_POOL3, ref_images)
            if "fid" in wanted:
                aggregates["fid"] = fid(inc_ref, inc_gen).value
            if "kid" in wanted:
                aggregates["kid"] = kid(inc_ref, inc_gen).value
            if "cfid" in wanted:
                clip_gen = client.features(FeatureModel.CLIP_IMAGE, gen_images)
                clip_ref = client.features(FeatureModel.CLIP_IMAGE, ref_images)
                aggregates["cfid"] = fid(clip_ref, clip_gen).value
        if "is" in wanted and len(pairs) >= 2:
            aggregates["is"] = inception_score(client.logits(gen_images)).value
    except (SidecarUnavailable, SidecarRequestError) as exc:
        warnings.append(f"sidecar metrics unavailable: {exc}")
    return aggregates


def build_report(docs: list[dict], metrics: list[str] | None = None, sidecar_url: str | None = None) -> dict:
    header, runs = split_log(docs)
    wanted = set(metrics if metrics is not None else header.get("metrics", list(ALL_METRICS)))
    unknown = wanted - set(ALL_METRICS)
    if unknown:
        raise ReportError(f"unknown metrics requested: {sorted(unknown)}")
    warnings: list[str] = []

    rows = []
    statuses = []
    skipped = 0
    no_code = 0
    failed_runs = 0
    samples = []
    for doc in sorted(runs, key=lambda d: d.get("task_id", "")):
        sample = doc.get("sample") or {}
        reference = sample.get("answer", "")
        candidate = _candidate_code(doc)
        if candidate is None:
            no_code += 1
        if doc.get("outcome") == "Failed":
            failed_runs += 1
        status = _final_compile_status(doc)
        if status == CompileStatus.SKIPPED.value:
            skipped += 1
        else:
            statuses.append(status)
        row = {
            "id": doc.get("task_id", ""),
            "kind": sample.get("kind"),
            "outcome": doc.get("outcome"),
            "compile_status": status,
            "scores": _text_scores(candidate, reference, wanted) if reference else {},
        }
        rows.append(row)
        samples.append((row, doc))

    aggregates: dict[str, float] = {}
    for name in TEXT_METRICS:
        if name == "pass1" or name not in wanted:
            continue
        values = [r["scores"][name] for r in rows if name in r["scores"]]
        if values:
            aggregates[name] = float(np.mean(values))
    if "pass1" in wanted and statuses:
        aggregates["pass1"] = 100.0 * sum(
            1 for s in statuses if s == CompileStatus.SUCCESS.value
        ) / len(statuses)

    aggregates.update(_image_section(samples, wanted, sidecar_url or header.get("sidecar_url"), warnings))

    meta = {
        "config_hash": header.get("config_hash"),
        "task": header.get("task"),
        "harness_version": header.get("harness_version"),
        "toolchain": header.get("toolchain", {}),
        "sidecar_url": sidecar_url or header.get("sidecar_url"),
        "sidecar_model_versions": header.get("sidecar_model_versions"),
        "metrics": sorted(wanted),
        "aggregation": "macro-average of per-sample scores",
        "kid_estimator": "unbiased, diagonal excluded from all three sums; subsets=10, subset_size<=100, seed=0",
        "exclusions": {
            "skipped_compiles": skipped,
            "no_code": no_code,
            "failed_runs": failed_runs,
        },
        "warnings": warnings,
    }
    return {"v": 1, "meta": meta, "samples": rows, "aggregates": aggregates}


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


_TABLE_ORDER = (
    "pass1",
    "rouge_l",
    "codebleu",
    "bleu",
    "edit_distance",
    "chrf",
    "ruby",
    "is",
    "fid",
    "kid",
    "cfid",
    "lpips",
    "ssim",
)


def render_table(report: dict) -> str:
    """Aligned single-row text table of the aggregate scores."""
    columns = [m for m in _TABLE_ORDER if m in report["aggregates"]]
    if not columns:
        return "(no aggregate metrics)\n"
    headers = [_COLUMN_NAMES[c] for c in columns]
    values = [f"{report['aggregates'][c]:.2f}" for c in columns]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    body = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    n = len(report["samples"])
    excl = report["meta"]["exclusions"]
    return (
        f"samples: {n}  (skipped compiles: {excl['skipped_compiles']}, failed runs: {excl['failed_runs']})\n"
        f"{head}\n{body}\n"
    )
