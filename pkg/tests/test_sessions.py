import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from conftest import recorder, replayer
from corpora import demo_store, isolation_calls, isolation_config, run_serial
from toolsim.demo import demo_helper
from toolsim.errors import ConfigError, ForeignSnapshot, ToolSimError, UnknownSession, UnknownSnapshot, UnknownTool
from toolsim.llm import ScriptedBackend
from toolsim.sessions import SessionConfig

ADD = ("add_to_cart", {"item": "apple", "quantity": 2})
REMOVE = ("remove_from_cart", {"item": "apple", "quantity": 1})
BAD = ("add_to_cart", {"item": "apple", "quantity": 0})


def cart(store, apples="3"):
    return store.create_session({"task": "Manage the cart.", "initial_state": {"apples in cart": apples}}).session_id


def test_distinct_ids_and_fresh_state(store):
    a, b = store.create_session(), store.create_session()
    assert a.session_id != b.session_id
    assert a.call_log == [] and a.state.version == 0 and a.state.entries == ()


def test_config_errors(store):
    with pytest.raises(ConfigError):
        store.create_session({"manifest": "nope"})
    with pytest.raises(ConfigError):
        store.create_session({"colour": "blue"})
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({"feedback_mode": "vibes"})
    with pytest.raises(ConfigError):
        SessionConfig.from_dict({"max_retries": -1})


def test_bootstrap_on_create(store):
    session = store.create_session({"task": "Buy 3 apples, then return 1 of them."})
    assert session.state.as_dict() == {"apples in cart": "0"}
    assert store.create_session({"task": "Buy 3 apples, then return 1 of them.", "bootstrap_state": False}).state.entries == ()


def test_concurrent_creates(store):
    with ThreadPoolExecutor(max_workers=32) as pool:
        sessions = list(pool.map(lambda i: store.create_session({"initial_state": {"n": str(i)}}), range(32)))
    assert len({s.session_id for s in sessions}) == 32
    assert len({id(s.state_history) for s in sessions}) == 32
    assert sorted(int(s.state.get("n")) for s in sessions) == list(range(32))


def test_unknown_session_and_tool(store):
    with pytest.raises(UnknownSession):
        store.get("missing")
    sid = cart(store)
    with pytest.raises(UnknownTool):
        store.execute_call(sid, "teleport", {})
    assert store.get(sid).call_log == []


def test_execute_valid_and_invalid(store):
    sid = cart(store)
    report, response = store.execute_call(sid, *BAD)
    session = store.get(sid)
    assert not report.passed and response is None
    assert len(session.call_log) == 1 and len(session.state_history) == 1
    report, response = store.execute_call(sid, *ADD)
    assert report.passed and response.call_id == "call-1"
    assert len(session.call_log) == 2 and len(session.state_history) == 2
    assert session.state.get("apples in cart") == "5"


def test_duplicate_call_id(store):
    sid = cart(store)
    store.execute_call(sid, *ADD, call_id="x")
    with pytest.raises(ToolSimError) as err:
        store.execute_call(sid, *ADD, call_id="x")
    assert err.value.code == "duplicate_call_id"


def test_snapshot_counts(store):
    sid = cart(store)
    first = store.snapshot(sid)
    assert (first.call_log_length, first.state_version) == (0, 0)
    for _ in range(3):
        store.execute_call(sid, *ADD)
    snap = store.snapshot(sid)
    assert (snap.call_log_length, snap.state_version) == (3, 3)
    store.execute_call(sid, *ADD)
    store.execute_call(sid, *REMOVE)
    later = store.snapshot(sid)
    assert later.call_log_length > snap.call_log_length and later.state_version > snap.state_version


def test_restore_truncates_and_is_idempotent(store):
    sid = cart(store)
    snap = store.snapshot(sid)
    store.execute_call(sid, *REMOVE)
    assert store.get(sid).state.get("apples in cart") == "2"
    session = store.restore(sid, snap.snapshot_id)
    assert session.state.get("apples in cart") == "3"
    assert session.call_log == [] and len(session.state_history) == 1
    before = session.histories_json()
    store.restore(sid, snap.snapshot_id)
    assert session.histories_json() == before


def test_foreign_unknown_and_stale_snapshots(store):
    a, b = cart(store), cart(store)
    snap_b = store.snapshot(b)
    with pytest.raises(ForeignSnapshot):
        store.restore(a, snap_b.snapshot_id)
    with pytest.raises(UnknownSnapshot):
        store.restore(a, "nope")
    start = store.snapshot(a)
    store.execute_call(a, *ADD)
    mid = store.snapshot(a)
    store.restore(a, start.snapshot_id)
    store.execute_call(a, *REMOVE)
    with pytest.raises(UnknownSnapshot) as err:
        store.restore(a, mid.snapshot_id)
    assert err.value.code == "stale_snapshot"


def test_rerun_after_restore_is_byte_identical(fixture_file):
    plan = [ADD, BAD, REMOVE, ("view_cart", {}), ADD]

    def attempt(store, sid):
        for tool, args in plan:
            store.execute_call(sid, tool, args)

    rec_store = demo_store(recorder(fixture_file, demo_helper()))
    sid = cart(rec_store)
    attempt(rec_store, sid)

    store = demo_store(replayer(fixture_file))
    sid = cart(store)
    snap = store.snapshot(sid)
    attempt(store, sid)
    session = store.get(sid)
    first = json.dumps(session.histories(), sort_keys=True)
    store.restore(sid, snap.snapshot_id)
    attempt(store, sid)
    assert json.dumps(session.histories(), sort_keys=True) == first


def test_two_sessions_interleaved_only_see_own_calls(store):
    a, b = cart(store, "1"), cart(store, "10")
    for _ in range(3):
        store.execute_call(a, *ADD)
        store.execute_call(b, *REMOVE)
    assert store.get(a).state.get("apples in cart") == "7"
    assert store.get(b).state.get("apples in cart") == "7"
    assert all(r.call.tool_name == "add_to_cart" for r in store.get(a).call_log)


def test_isolation_against_serial_runs(fixture_file):
    rec = recorder(fixture_file, demo_helper())
    for k in range(8):
        run_serial(rec, k)
    serial = [run_serial(replayer(fixture_file), k) for k in range(8)]
    store = demo_store(replayer(fixture_file))
    ids = [store.create_session(isolation_config(k)).session_id for k in range(8)]
    barrier = threading.Barrier(8)

    def drive(k):
        barrier.wait()
        for tool, args in isolation_calls(k):
            store.execute_call(ids[k], tool, args)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(drive, range(8)))
    assert [store.get(i).histories_json() for i in ids] == serial


def test_inject_state(store):
    sid = cart(store)
    state = store.inject_state(sid, {"apples in cart": "9"})
    assert state.version == 1 and store.get(sid).state.get("apples in cart") == "9"


def test_judge_requires_task_and_caches_checklist(store):
    with pytest.raises(ConfigError):
        store.judge(store.create_session().session_id)
    sid = cart(store)
    store.judge(sid)
    checklist = store.get(sid).checklist
    store.judge(sid)
    assert store.get(sid).checklist is checklist


def test_naive_mode_counts_calls_this_turn(store):
    sid = store.create_session({"task": "Add apples.", "feedback_mode": "naive"}).session_id
    store.execute_call(sid, *ADD)
    store.snapshot(sid)
    assert store.judge(sid).verdict == "incomplete"
    store.execute_call(sid, *ADD)
    assert store.judge(sid).verdict == "success"


def test_ttl_eviction():
    now = [0.0]
    store = demo_store(ScriptedBackend(demo_helper()))
    store.clock = lambda: now[0]
    store.ttl = 10
    sid = store.create_session().session_id
    now[0] = 5
    store.get(sid)
    now[0] = 14
    assert store.evict_expired() == []
    now[0] = 30
    with pytest.raises(UnknownSession):
        store.get(sid)


def test_usage_per_session(store):
    sid = cart(store)
    assert store.usage(sid)["total_calls"] == 0
    store.execute_call(sid, *ADD)
    usage = store.usage(sid)
    assert usage["calls_per_role"]["semantic_validator"] == 1
    assert usage["calls_per_role"]["response_generator"] == 1
    assert usage["calls_per_role"]["state_updater"] == 1
    assert sum(usage["calls_per_role"].values()) == usage["total_calls"] == 3
    store.execute_call(sid, *BAD)
    assert store.usage(sid)["total_calls"] == 3


def test_dump(store, tmp_path):
    sid = cart(store)
    store.execute_call(sid, *ADD)
    store.dump(tmp_path / "dump.json")
    data = json.loads((tmp_path / "dump.json").read_text())
    assert data[sid]["call_count"] == 1 and len(data[sid]["state_history"]) == 2


def test_prompts_never_mention_session_or_call_ids(store):
    prompts = []
    inner = store.llm.responder
    store.llm.responder = lambda req: prompts.append(req.prompt) or inner(req)
    sid = cart(store)
    store.execute_call(sid, *ADD)
    store.judge(sid)
    assert prompts and not any(sid in p or "call-0" in p for p in prompts)
