import hashlib
import json
import threading
from pathlib import Path

import pytest

from sketchbench.backends import ScriptedBackend
from sketchbench.agents import SketchTask
from sketchbench.pipeline import (
    Attempt,
    ConfigError,
    ErrorLabel,
    Outcome,
    Phase,
    PipelineConfig,
    RunLogError,
    RunRecord,
    annotate,
    load_run_log,
    persist_run,
    record_to_dict,
    run_pipeline,
)
from sketchbench.verify import CompileResult, CompileStatus

from conftest import INVALID_TIKZ, VALID_TIKZ, fenced, png_bytes


def make_task(**kwargs):
    defaults = dict(task_id="t", instructions=("draw it",), sketch_png=png_bytes())
    defaults.update(kwargs)
    return SketchTask(**defaults)


def success_with_artifact(code):
    # artifact path tracks the code so distinct attempts render distinct diagrams
    digest = hashlib.sha1(code.source.encode()).hexdigest()[:10]
    return CompileResult(CompileStatus.SUCCESS, artifact=Path(f"/tmp/fake-{digest}.pdf"))


def fake_raster(path):
    return str(path).encode()


VALID_TIKZ_V2 = VALID_TIKZ.replace("{A}", "{A2}")
VALID_TIKZ_V3 = VALID_TIKZ.replace("{A}", "{A3}")

ALIGNED = '{"aligned": true, "rationale": "ok", "blame": "None"}'
BLAME_EDIT = '{"aligned": false, "rationale": "wrong edge", "blame": "EditingCode"}'
BLAME_GEN = '{"aligned": false, "rationale": "wrong start", "blame": "SketchToCode"}'


def test_fail_then_retry_then_accept_in_two_attempts():
    gen = ScriptedBackend([fenced(INVALID_TIKZ), fenced(VALID_TIKZ)])
    cfg = PipelineConfig(retry_budget=3, judge_enabled=False, generate_backend=gen)
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.ACCEPTED
    assert len(record.attempts) == 2
    assert record.attempts[0].compile.status is CompileStatus.COMPILE_ERROR
    assert record.attempts[1].compile.status is CompileStatus.SUCCESS
    assert record.final_code.source == VALID_TIKZ
    assert "generate" in record.timings and "compile" in record.timings


def test_budget_exhaustion_is_exactly_one_plus_budget():
    gen = ScriptedBackend([fenced(INVALID_TIKZ)] * 10)
    cfg = PipelineConfig(retry_budget=2, judge_enabled=False, generate_backend=gen)
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.FAILED
    assert len(record.attempts) == 3
    assert "budget" in record.reason


def test_ablation_without_compiler_marks_skipped():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    cfg = PipelineConfig(
        retry_budget=3, judge_enabled=False, compiler_enabled=False, generate_backend=gen
    )
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.ACCEPTED
    assert len(record.attempts) == 1
    assert record.attempts[0].compile.status is CompileStatus.SKIPPED


def test_ablation_without_judge_removes_all_verdicts():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    cfg = PipelineConfig(
        retry_budget=1,
        judge_enabled=False,
        generate_backend=gen,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(), cfg)
    assert all(a.verdict is None for a in record.attempts)


def test_judge_accepts_on_aligned():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    judge_backend = ScriptedBackend([ALIGNED])
    cfg = PipelineConfig(
        generate_backend=gen,
        judge_backend=judge_backend,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.ACCEPTED
    assert record.attempts[-1].verdict.aligned


def test_judge_blame_routes_to_editing_agent():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    editor = ScriptedBackend([fenced(VALID_TIKZ_V2), fenced(VALID_TIKZ_V3)])
    judge_backend = ScriptedBackend([BLAME_EDIT, ALIGNED])
    cfg = PipelineConfig(
        retry_budget=3,
        generate_backend=gen,
        edit_backend=editor,
        judge_backend=judge_backend,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(edit_instructions=("thicker arrows",)), cfg)
    assert record.outcome is Outcome.ACCEPTED
    phases = [a.phase for a in record.attempts]
    assert phases == [Phase.GENERATE, Phase.EDIT, Phase.EDIT]
    assert record.attempts[1].verdict is not None and not record.attempts[1].verdict.aligned


def test_judge_blame_on_generator_restarts_generate_then_reedits():
    gen = ScriptedBackend([fenced(VALID_TIKZ), fenced(VALID_TIKZ_V2)])
    editor = ScriptedBackend([fenced(VALID_TIKZ), fenced(VALID_TIKZ_V3)])
    judge_backend = ScriptedBackend([BLAME_GEN, ALIGNED])
    cfg = PipelineConfig(
        retry_budget=5,
        generate_backend=gen,
        edit_backend=editor,
        judge_backend=judge_backend,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(edit_instructions=("add node",)), cfg)
    assert record.outcome is Outcome.ACCEPTED
    phases = [a.phase for a in record.attempts]
    assert phases == [Phase.GENERATE, Phase.EDIT, Phase.GENERATE, Phase.EDIT]


def test_blame_editing_coerced_to_generate_without_edit_phase():
    gen = ScriptedBackend([fenced(VALID_TIKZ), fenced(VALID_TIKZ_V2)])
    judge_backend = ScriptedBackend([BLAME_EDIT, ALIGNED])
    cfg = PipelineConfig(
        retry_budget=2,
        generate_backend=gen,
        judge_backend=judge_backend,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(), cfg)
    assert [a.phase for a in record.attempts] == [Phase.GENERATE, Phase.GENERATE]


def test_edit_flow_skips_compile_of_intermediate_generate():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    editor = ScriptedBackend([fenced(VALID_TIKZ)])
    cfg = PipelineConfig(
        judge_enabled=False, generate_backend=gen, edit_backend=editor
    )
    record = run_pipeline(make_task(edit_instructions=("recolor",)), cfg)
    assert [a.phase for a in record.attempts] == [Phase.GENERATE, Phase.EDIT]
    assert record.attempts[0].compile.status is CompileStatus.SKIPPED
    assert record.attempts[1].compile.status is CompileStatus.SUCCESS


def test_c2c_task_starts_at_edit_phase():
    editor = ScriptedBackend([fenced(VALID_TIKZ)])
    task = SketchTask(
        task_id="c2c-1",
        instructions=("apply the requested changes",),
        initial_code=VALID_TIKZ,
        edit_instructions=("add a node",),
    )
    cfg = PipelineConfig(judge_enabled=False, edit_backend=editor)
    record = run_pipeline(task, cfg)
    assert record.outcome is Outcome.ACCEPTED
    assert [a.phase for a in record.attempts] == [Phase.EDIT]


def test_backend_error_captured_not_raised():
    gen = ScriptedBackend([])  # exhausted immediately
    cfg = PipelineConfig(retry_budget=1, judge_enabled=False, generate_backend=gen)
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.FAILED
    assert all(a.error for a in record.attempts)


def test_missing_backend_is_config_error():
    cfg = PipelineConfig(judge_enabled=False)
    with pytest.raises(ConfigError):
        run_pipeline(make_task(), cfg)


def test_negative_budget_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig(retry_budget=-1)


def test_tool_missing_fails_run_without_retry():
    gen = ScriptedBackend([fenced(VALID_TIKZ)] * 3)
    cfg = PipelineConfig(
        retry_budget=3,
        judge_enabled=False,
        generate_backend=gen,
        check_fn=lambda code: CompileResult(CompileStatus.TOOL_MISSING),
    )
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.FAILED
    assert len(record.attempts) == 1
    assert "tool missing" in record.reason


def test_failed_run_keeps_best_compiling_attempt_for_metrics():
    gen = ScriptedBackend([fenced(VALID_TIKZ), fenced(VALID_TIKZ)])
    judge_backend = ScriptedBackend([BLAME_GEN, BLAME_GEN])
    cfg = PipelineConfig(
        retry_budget=1,
        generate_backend=gen,
        judge_backend=judge_backend,
        check_fn=success_with_artifact,
        rasterize_fn=fake_raster,
    )
    record = run_pipeline(make_task(), cfg)
    assert record.outcome is Outcome.FAILED
    assert record.metric_code() is not None
    assert record.metric_code().source == VALID_TIKZ


def test_routing_soundness_property():
    # every retry attempt's phase equals the failure source of its predecessor
    gen = ScriptedBackend([fenced(INVALID_TIKZ), fenced(INVALID_TIKZ), fenced(VALID_TIKZ)])
    cfg = PipelineConfig(retry_budget=4, judge_enabled=False, generate_backend=gen)
    record = run_pipeline(make_task(), cfg)
    for prev, cur in zip(record.attempts, record.attempts[1:]):
        if prev.compile is not None and prev.compile.status is CompileStatus.COMPILE_ERROR:
            assert cur.phase is prev.phase


def test_accepted_record_invariant_enforced():
    bad = Attempt(
        phase=Phase.GENERATE,
        code=None,
        compile=CompileResult(CompileStatus.COMPILE_ERROR),
    )
    with pytest.raises(ValueError):
        RunRecord(
            task_id="x",
            attempts=(bad,),
            outcome=Outcome.ACCEPTED,
            final_code=None,
            diagram_path=None,
        )


def test_annotate_error_label():
    gen = ScriptedBackend([fenced(VALID_TIKZ)])
    cfg = PipelineConfig(judge_enabled=False, generate_backend=gen)
    record = run_pipeline(make_task(), cfg)
    labeled = annotate(record, ErrorLabel.MISCONNECTED_RELATIONSHIP)
    assert labeled.error_label is ErrorLabel.MISCONNECTED_RELATIONSHIP
    assert record_to_dict(labeled)["error_label"] == "MisconnectedRelationship"


# --- persistence ---------------------------------------------------------------


def run_once(outcome_valid=True):
    gen = ScriptedBackend([fenced(VALID_TIKZ if outcome_valid else INVALID_TIKZ)])
    cfg = PipelineConfig(retry_budget=0, judge_enabled=False, generate_backend=gen)
    return run_pipeline(make_task(), cfg)


def test_persist_three_runs_three_parseable_lines(tmp_path):
    log = tmp_path / "runs.jsonl"
    for _ in range(3):
        persist_run(run_once(), log)
    lines = log.read_text().strip().splitlines()
    assert len(lines) == 3
    for line in lines:
        doc = json.loads(line)
        assert doc["v"] == 1 and doc["outcome"] == "Accepted"


def test_persist_failed_run_contains_reason(tmp_path):
    log = tmp_path / "runs.jsonl"
    record = run_once(outcome_valid=False)
    assert record.outcome is Outcome.FAILED
    persist_run(record, log)
    doc = json.loads(log.read_text())
    assert "budget" in doc["reason"]


def test_concurrent_appends_stay_line_intact(tmp_path):
    log = tmp_path / "runs.jsonl"
    record = run_once()
    workers = 16
    per_worker = 8

    def append_many():
        for _ in range(per_worker):
            persist_run(record, log)

    threads = [threading.Thread(target=append_many) for _ in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    lines = log.read_text().strip().splitlines()
    assert len(lines) == workers * per_worker
    for line in lines:
        json.loads(line)  # every line independently parseable


def test_load_run_log_reports_corrupt_line_number(tmp_path):
    log = tmp_path / "runs.jsonl"
    persist_run(run_once(), log)
    with log.open("a") as fh:
        fh.write('{"v": 1, "task_id": "x"}\n{truncated\n')
    with pytest.raises(RunLogError) as err:
        load_run_log(log)
    assert err.value.line_number == 3
