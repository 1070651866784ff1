import pytest

from sketchbench.agents import (
    Blame,
    EmptyCode,
    JudgeVerdict,
    PreconditionError,
    SketchTask,
    build_generate_request,
    edit_code,
    extract_code,
    generate_code,
    judge,
)
from sketchbench.backends import ScriptedBackend, ScriptedExhausted
from sketchbench.tikz import DiagramCode, extract_node_graph, parse

from conftest import VALID_TIKZ, fenced, png_bytes


def task_with_sketch(**kwargs):
    defaults = dict(task_id="t1", instructions=("draw two boxes",), sketch_png=png_bytes())
    defaults.update(kwargs)
    return SketchTask(**defaults)


# --- extraction ---------------------------------------------------------------


def test_extract_first_fenced_block():
    reply = f"Here you go:\n{fenced(VALID_TIKZ)}\nHope that helps."
    assert extract_code(reply) == VALID_TIKZ


def test_extract_without_fence_returns_whole_reply():
    assert extract_code("  plain reply  ") == "plain reply"


def test_extract_is_idempotent():
    for reply in (fenced(VALID_TIKZ), VALID_TIKZ, "prose only"):
        once = extract_code(reply)
        assert extract_code(once) == once


# --- generate -------------------------------------------------------------------


def test_generate_returns_fenced_content(sketch_png):
    backend = ScriptedBackend([fenced(VALID_TIKZ)])
    task = task_with_sketch(sketch_png=sketch_png)
    code = generate_code(task, backend)
    assert code.source == VALID_TIKZ


def test_generate_prose_reply_used_whole(sketch_png):
    backend = ScriptedBackend(["\\node (a) {A};"])
    code = generate_code(task_with_sketch(sketch_png=sketch_png), backend)
    assert code.source == "\\node (a) {A};"


def test_generate_requires_vision_before_any_call():
    backend = ScriptedBackend([fenced(VALID_TIKZ)], vision=False)
    with pytest.raises(PreconditionError):
        generate_code(task_with_sketch(), backend)
    assert backend.requests_seen == []


def test_generate_empty_reply_raises_empty_code():
    backend = ScriptedBackend(["   "])
    with pytest.raises(EmptyCode):
        generate_code(task_with_sketch(), backend)


def test_prompt_assembly_deterministic():
    task = task_with_sketch()
    assert (
        build_generate_request(task).canonical_payload()
        == build_generate_request(task).canonical_payload()
    )


def test_scripted_backend_identical_payload_identical_reply():
    backend = ScriptedBackend(["first", "second"])
    task = task_with_sketch()
    a = generate_code(task, backend)
    b = generate_code(task, backend)  # identical request -> memoized reply
    assert a.source == b.source == "first"


# --- edit -----------------------------------------------------------------------


def test_edit_adds_one_edge_scripted():
    base = DiagramCode(VALID_TIKZ)
    edited_source = VALID_TIKZ.replace(
        "\\draw (a) -- (b);", "\\draw (a) -- (b);\n\\draw (b) -- (a);"
    )
    backend = ScriptedBackend([fenced(edited_source)])
    out = edit_code(base, ["add arrow b->a"], backend)
    before = extract_node_graph(parse(base).tree)
    after = extract_node_graph(parse(out).tree)
    assert len(after.edges) == len(before.edges) + 1


def test_edit_empty_instruction_list_is_precondition_error():
    backend = ScriptedBackend([fenced(VALID_TIKZ)])
    with pytest.raises(PreconditionError):
        edit_code(DiagramCode(VALID_TIKZ), [], backend)
    assert backend.requests_seen == []


def test_backend_exhaustion_surfaces_as_backend_error():
    backend = ScriptedBackend([])
    with pytest.raises(ScriptedExhausted):
        edit_code(DiagramCode(VALID_TIKZ), ["x"], backend)


# --- judge ----------------------------------------------------------------------


def test_judge_aligned_reply(sketch_png):
    backend = ScriptedBackend(['{"aligned": true, "rationale": "match", "blame": "None"}'])
    verdict = judge(png_bytes(), task_with_sketch(sketch_png=sketch_png), backend)
    assert verdict.aligned and verdict.blame is Blame.NONE


def test_judge_blames_editing_agent(sketch_png):
    backend = ScriptedBackend(
        ['{"aligned": false, "rationale": "edge missing", "blame": "EditingCode"}']
    )
    verdict = judge(png_bytes(), task_with_sketch(sketch_png=sketch_png), backend)
    assert not verdict.aligned
    assert verdict.blame is Blame.EDITING_CODE


def test_judge_malformed_twice_degrades_conservatively(sketch_png):
    backend = ScriptedBackend(["not json", "still not json"])
    verdict = judge(png_bytes(), task_with_sketch(sketch_png=sketch_png), backend)
    assert not verdict.aligned
    assert verdict.blame is Blame.SKETCH_TO_CODE
    assert len(backend.requests_seen) == 2  # one re-ask


def test_judge_reask_succeeds(sketch_png):
    backend = ScriptedBackend(
        ["garbage", 'answer: {"aligned": true, "rationale": "ok", "blame": "None"}']
    )
    verdict = judge(png_bytes(), task_with_sketch(sketch_png=sketch_png), backend)
    assert verdict.aligned


# --- task validation ---------------------------------------------------------------


def test_task_rejects_empty_instruction_strings():
    with pytest.raises(PreconditionError):
        SketchTask(task_id="x", instructions=("",), sketch_png=png_bytes())


def test_task_rejects_undecodable_sketch():
    with pytest.raises(PreconditionError):
        SketchTask(task_id="x", instructions=("a",), sketch_png=b"not a png")


def test_verdict_invariant_enforced():
    with pytest.raises(ValueError):
        JudgeVerdict(aligned=True, rationale="", blame=Blame.EDITING_CODE)
    with pytest.raises(ValueError):
        JudgeVerdict(aligned=False, rationale="", blame=Blame.NONE)


def test_task_is_immutable():
    task = task_with_sketch()
    with pytest.raises(AttributeError):
        task.instructions = ("other",)
