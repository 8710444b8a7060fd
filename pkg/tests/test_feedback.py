import json

from hypothesis import given, settings, strategies as st

from conftest import recorder, replayer
from corpora import record_folder_chain, replay_env
from toolsim.demo import FOLDER_TASK, demo_helper, demo_tools, folder_plans, folder_scenario
from toolsim.feedback import (
    INCOMPLETE,
    SATISFIED,
    SUCCESS,
    UNSATISFIED,
    Checklist,
    ChecklistItem,
    TaskFeedback,
    generate_checklist,
    judge,
    naive_gate,
)
from toolsim.gats import ScriptedAgent, run_task
from toolsim.llm import ScriptedBackend
from toolsim.rulesim import RuleHelper, Scenario
from toolsim.state import TaskState

TOOLS = demo_tools()
TWO = Checklist((ChecklistItem("c1", "first"), ChecklistItem("c2", "second")))


def test_folder_task_checklist(fixture_file):
    generate_checklist(FOLDER_TASK, None, None, recorder(fixture_file, demo_helper()))
    first = generate_checklist(FOLDER_TASK, None, None, replayer(fixture_file))
    again = generate_checklist(FOLDER_TASK, None, None, replayer(fixture_file))
    assert first == again
    texts = [i.objective_text for i in first.items]
    assert any("temp folder" in t and "document" in t for t in texts)
    assert any("report.pdf" in t and "temp" in t for t in texts)
    assert all(i.status == "unchecked" for i in first.items)


def test_folder_task_three_attempts(fixture_file):
    record_folder_chain(fixture_file)
    env, registry, _ = replay_env(fixture_file)
    result = run_task(FOLDER_TASK, ScriptedAgent(folder_plans("temp", "document", "report.pdf", 2)), env, 3, registry=registry)
    verdicts = [a.feedback.verdict for a in result.attempts]
    assert verdicts == [INCOMPLETE, INCOMPLETE, SUCCESS]
    middle = result.attempts[1].feedback
    assert middle.remaining == ("The temp folder exists inside the document directory",)
    first = result.attempts[0]
    assert first.calls[1]["ok"] is False
    assert first.calls[1]["errors"][0]["rule"] == "constraint:pattern"


def test_do_nothing_task():
    task = "Do nothing."
    llm = ScriptedBackend(RuleHelper([Scenario(task, {}, [("c1", "No action is needed", lambda s, c: True)])]))
    checklist = generate_checklist(task, None, None, llm)
    assert len(checklist.items) == 1
    feedback = judge(checklist, TaskState(), [], task, None, [], llm)
    assert feedback.verdict == SUCCESS and feedback.remaining == ()


def test_empty_calls_against_unsatisfiable_item(scripted):
    checklist = Checklist((ChecklistItem("c1", "Book a table"),))
    feedback = judge(checklist, TaskState(), [], "Book a table for two.", None, TOOLS, scripted)
    assert feedback.verdict == INCOMPLETE and feedback.remaining == ("Book a table",)


def test_judge_reask_then_fail_closed():
    llm = ScriptedBackend(lambda r: "looks good to me!")
    feedback = judge(TWO, TaskState(), [], "t", None, [], llm)
    assert llm.calls == 2
    assert feedback.verdict == INCOMPLETE
    assert feedback.remaining == ("first", "second")
    assert all(i.status == UNSATISFIED for i in feedback.checklist.items)


def test_judge_claim_cannot_override_missing_item():
    llm = ScriptedBackend(lambda r: json.dumps({"items": [{"id": "c1", "satisfied": True}], "verdict": "success"}))
    feedback = judge(TWO, TaskState(), [], "t", None, [], llm)
    assert feedback.verdict == INCOMPLETE and feedback.remaining == ("second",)


def test_judge_inputs_include_task_calls_state():
    seen = []

    def responder(req):
        seen.append(json.loads(req.prompt.split("<input>\n", 1)[1].split("\n</input>", 1)[0]))
        return '{"items": []}'

    calls = [{"tool_name": "view_cart", "arguments": {}, "response": {"body": {"summary": "x"}}}]
    judge(TWO, TaskState.of({"k": "v"}), calls, "the task", None, TOOLS, ScriptedBackend(responder), final_answer="done")
    payload = seen[0]
    assert payload["task"] == "the task"
    assert payload["tool_calls"] == calls
    assert payload["task_state"] == {"k": "v"}
    assert payload["final_answer"] == "done"
    assert len(payload["tools"]) == len(TOOLS)


def test_checklist_fallback_and_id_normalization():
    assert generate_checklist("Do X", None, None, ScriptedBackend(lambda r: "?")).items == (ChecklistItem("c1", "Do X"),)
    raw = {"items": [{"id": "a", "objective": "one"}, {"id": "a", "objective": "two"}, "three", {"objective": ""}]}
    checklist = generate_checklist("t", None, None, ScriptedBackend(lambda r: json.dumps(raw)))
    assert [(i.id, i.objective_text) for i in checklist.items] == [("a", "one"), ("c2", "two"), ("c3", "three")]


def test_naive_gate():
    assert naive_gate(TWO, []).verdict == INCOMPLETE
    assert naive_gate(TWO, [{"tool_name": "x"}]).verdict == SUCCESS


def test_feedback_round_trip():
    feedback = judge(TWO, TaskState(), [], "t", None, [], ScriptedBackend(lambda r: '{"items": [{"id": "c2", "satisfied": true}]}'))
    assert TaskFeedback.from_dict(json.loads(json.dumps(feedback.to_dict()))) == feedback


answers = st.lists(
    st.fixed_dictionaries({"id": st.sampled_from(["c1", "c2", "c3", "zz"]), "satisfied": st.one_of(st.booleans(), st.just("yes"), st.none())}),
    max_size=5,
)


@settings(max_examples=200, deadline=None)
@given(answers, st.sampled_from(["success", "incomplete", None]))
def test_fail_closed(items, claimed):
    payload = {"items": items}
    if claimed:
        payload["verdict"] = claimed
    feedback = judge(TWO, TaskState(), [], "t", None, [], ScriptedBackend(lambda r: json.dumps(payload)))
    statuses = {i.id: i.status for i in feedback.checklist.items}
    assert set(statuses.values()) <= {SATISFIED, UNSATISFIED}
    assert (feedback.verdict == SUCCESS) == all(s == SATISFIED for s in statuses.values())
    if feedback.verdict == SUCCESS:
        last = {e["id"]: e["satisfied"] for e in items}
        assert last.get("c1") is True and last.get("c2") is True


steps = st.permutations([("folder temp", "document"), ("file report.pdf", "temp"), ("folder temp", "/")])


@settings(max_examples=30, deadline=None)
@given(steps)
def test_remaining_shrinks_when_satisfied_set_grows(order):
    scenario = folder_scenario(FOLDER_TASK, "temp", "document", "report.pdf")
    llm = ScriptedBackend(RuleHelper([scenario]))
    checklist = generate_checklist(FOLDER_TASK, None, None, llm)
    entries: dict[str, str] = {}
    previous = None
    for key, value in order:
        candidate = {**entries, key: value}
        feedback = judge(checklist, TaskState.of(candidate), [], FOLDER_TASK, None, TOOLS, llm)
        satisfied = {i.id for i in feedback.checklist.items if i.status == SATISFIED}
        if previous is None or satisfied >= previous[0]:
            if previous is not None:
                assert set(feedback.remaining) <= set(previous[1])
            previous = (satisfied, feedback.remaining)
            entries = candidate
