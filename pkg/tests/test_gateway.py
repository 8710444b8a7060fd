import json
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from corpora import demo_registry, demo_store
from toolsim.demo import demo_helper
from toolsim.errors import BindError, ConfigError
from toolsim.gateway import GatewayConfig, MiddlewareChain, build_backend, build_store, create_app, serve
from toolsim.llm import FixtureStore, LiveBackend, ScriptedBackend
from toolsim.schema import ParameterSpec, ToolSchema

CART = {"task": "Buy 3 apples, then return 1 of them."}


@pytest.fixture
def client(tmp_path):
    store = demo_store(ScriptedBackend(demo_helper()))
    with TestClient(create_app(store, tmp_path / "dump.json")) as c:
        yield c


def new_session(client, body=CART):
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201
    return resp.json()["session_id"]


def state_of(client, sid):
    return client.get(f"/sessions/{sid}/state").json()


def assert_envelope(resp, status, code):
    assert resp.status_code == status
    body = resp.json()
    assert set(body) == {"error_code", "message", "details"}
    assert body["error_code"] == code
    return body


def test_health(client):
    assert client.get("/healthz").json()["status"] == "ok"


def test_session_lifecycle(client):
    sid = new_session(client)
    summary = client.get(f"/sessions/{sid}").json()
    assert summary["session_id"] == sid and summary["call_count"] == 0
    assert client.delete(f"/sessions/{sid}").status_code == 204
    assert_envelope(client.get(f"/sessions/{sid}"), 404, "unknown_session")
    assert_envelope(client.delete(f"/sessions/{sid}"), 404, "unknown_session")


def test_bad_session_config(client):
    assert_envelope(client.post("/sessions", json={"manifest": "other"}), 400, "config_error")
    assert_envelope(client.post("/sessions", json=[1]), 400, "config_error")
    assert_envelope(client.post("/sessions", content=b"{"), 400, "malformed_json")


def test_tool_call_success_and_history(client):
    sid = new_session(client)
    resp = client.post(f"/sessions/{sid}/tools/add_to_cart", json={"item": "apple", "quantity": 3})
    assert resp.status_code == 200
    assert resp.json() == {"call_id": "call-0", "body": {"success": True, "message": "added 3 apple"}, "narrative": "successfully add 3 apple"}
    calls = client.get(f"/sessions/{sid}/calls").json()
    assert len(calls) == 1 and calls[0]["report"]["verdict"] == "pass"
    state = state_of(client, sid)
    assert state["current"]["entries"] == [["apples in cart", "3"]]
    assert [s["version"] for s in state["history"]] == [0, 1]


def test_client_call_id_header(client):
    sid = new_session(client)
    resp = client.post(f"/sessions/{sid}/tools/view_cart", json={}, headers={"X-Call-Id": "mine"})
    assert resp.json()["call_id"] == "mine"
    again = client.post(f"/sessions/{sid}/tools/view_cart", json={}, headers={"X-Call-Id": "mine"})
    assert_envelope(again, 409, "duplicate_call_id")


@pytest.mark.parametrize(
    "tool,args,rule",
    [
        ("add_to_cart", {"item": "apple"}, "missing_required"),
        ("add_to_cart", {"item": "apple", "quantity": 1, "gift": True}, "unknown_parameter"),
        ("add_to_cart", {"item": "apple", "quantity": "3"}, "type_mismatch"),
        ("add_to_cart", {"item": "apple", "quantity": 100}, "constraint:maximum"),
        ("get_weather", {"city": "Oslo", "unit": "kelvin"}, "constraint:enum"),
        ("add_to_cart", {"item": "", "quantity": 1}, "constraint:min_length"),
        ("move_file", {"source_file": "report", "destination_folder": "x"}, "constraint:pattern"),
        ("add_to_cart", {"item": "apple", "quantity": -2}, "constraint:minimum"),
    ],
)
def test_rejections_carry_violations_and_do_not_mutate(client, tool, args, rule):
    sid = new_session(client)
    before = state_of(client, sid)
    body = assert_envelope(client.post(f"/sessions/{sid}/tools/{tool}", json=args), 422, "validation_failed")
    assert len(body["details"]["violations"]) >= 1
    assert body["details"]["violations"][0]["rule"] == rule
    assert state_of(client, sid) == before


def test_semantic_rejection_is_422(tmp_path):
    registry = demo_registry()
    registry.register(ToolSchema("get_visa_rules", parameters=(ParameterSpec("country", "string", True, description="Destination country"),)))
    store = demo_store(ScriptedBackend(demo_helper()), registry)
    with TestClient(create_app(store)) as c:
        sid = new_session(c, {"initial_state": {"trip": "planned"}})
        before = state_of(c, sid)
        body = assert_envelope(c.post(f"/sessions/{sid}/tools/get_visa_rules", json={"country": "Seattle"}), 422, "validation_failed")
        assert body["details"]["violations"][0]["rule"] == "semantic"
        assert state_of(c, sid) == before


def test_malformed_bodies_are_422(client):
    sid = new_session(client)
    before = state_of(client, sid)
    for raw in (b"{oops", b"[1, 2]", b'"text"'):
        body = assert_envelope(client.post(f"/sessions/{sid}/tools/add_to_cart", content=raw), 422, "validation_failed")
        assert body["details"]["violations"][0]["rule"] == "malformed_body"
    assert state_of(client, sid) == before


def test_unknown_tool_and_session_are_404(client):
    sid = new_session(client)
    before = state_of(client, sid)
    assert_envelope(client.post(f"/sessions/{sid}/tools/teleport", json={}), 404, "unknown_tool")
    assert_envelope(client.post("/sessions/nope/tools/view_cart", json={}), 404, "unknown_session")
    assert_envelope(client.get("/sessions/nope/state"), 404, "unknown_session")
    assert state_of(client, sid) == before
    assert client.get(f"/sessions/{sid}/calls").json() == []


def test_state_injection(client):
    sid = new_session(client)
    resp = client.post(f"/sessions/{sid}/state", json={"entries": {"apples in cart": "7"}})
    assert resp.status_code == 200 and resp.json()["version"] == 1
    assert state_of(client, sid)["current"]["entries"] == [["apples in cart", "7"]]
    before = state_of(client, sid)
    assert_envelope(client.post(f"/sessions/{sid}/state", json={"apples": 1}), 400, "config_error")
    assert state_of(client, sid) == before


def test_snapshot_restore(client):
    sid, other = new_session(client), new_session(client)
    snap = client.post(f"/sessions/{sid}/snapshots")
    assert snap.status_code == 201
    snap_id = snap.json()["snapshot_id"]
    client.post(f"/sessions/{sid}/tools/add_to_cart", json={"item": "apple", "quantity": 3})
    restored = client.post(f"/sessions/{sid}/snapshots/{snap_id}/restore")
    assert restored.status_code == 200
    assert restored.json()["call_count"] == 0
    assert restored.json()["state"]["entries"] == [["apples in cart", "0"]]
    before = state_of(client, other)
    assert_envelope(client.post(f"/sessions/{other}/snapshots/{snap_id}/restore"), 409, "foreign_snapshot")
    assert_envelope(client.post(f"/sessions/{other}/snapshots/nope/restore"), 404, "unknown_snapshot")
    assert state_of(client, other) == before


def test_judge_and_usage(client):
    sid = new_session(client)
    client.post(f"/sessions/{sid}/tools/add_to_cart", json={"item": "apple", "quantity": 3})
    client.post(f"/sessions/{sid}/tools/remove_from_cart", json={"item": "apple", "quantity": 1})
    feedback = client.post(f"/sessions/{sid}/judge", json={"final_answer": "done"}).json()
    assert feedback["verdict"] == "success" and feedback["remaining"] == []
    usage = client.get(f"/sessions/{sid}/usage").json()
    assert usage["calls_per_role"]["judge"] == 1
    assert usage["total_calls"] == sum(usage["calls_per_role"].values())


def test_judge_without_calls_is_incomplete(client):
    sid = new_session(client)
    feedback = client.post(f"/sessions/{sid}/judge").json()
    assert feedback["verdict"] == "incomplete" and len(feedback["remaining"]) == 2


def test_middleware_order(client):
    sid = new_session(client)
    resp = client.get(f"/sessions/{sid}")
    assert resp.headers["x-middleware-trace"] == "session_middleware,route_middleware"
    assert MiddlewareChain().stages == ("session_middleware", "route_middleware", "handler")


def test_upstream_failure_maps_to_503_and_no_mutation(tmp_path):
    store = demo_store(FixtureStore(tmp_path / "empty.jsonl", "replay_strict"))
    with TestClient(create_app(store)) as c:
        sid = new_session(c, {"initial_state": {"apples in cart": "1"}})
        before = state_of(c, sid)
        assert_envelope(c.post(f"/sessions/{sid}/tools/view_cart", json={}), 503, "fixture_missing")
        assert state_of(c, sid) == before
        assert c.get(f"/sessions/{sid}/calls").json() == []


def test_concurrent_calls_across_sessions(client):
    sids = [new_session(client, {"task": f"Shop {k}", "initial_state": {"apples in cart": "0"}}) for k in range(8)]

    def call(i):
        sid = sids[i % 8]
        return client.post(f"/sessions/{sid}/tools/add_to_cart", json={"item": "apple", "quantity": i % 8 + 1}).status_code

    with ThreadPoolExecutor(max_workers=16) as pool:
        codes = list(pool.map(call, range(64)))
    assert codes == [200] * 64
    for k, sid in enumerate(sids):
        state = state_of(client, sid)
        assert state["current"]["entries"] == [["apples in cart", str(8 * (k + 1))]]
        assert len(client.get(f"/sessions/{sid}/calls").json()) == 8


def test_dump_on_shutdown(tmp_path):
    store = demo_store(ScriptedBackend(demo_helper()))
    with TestClient(create_app(store, tmp_path / "dump.json")) as c:
        new_session(c)
    assert len(json.loads((tmp_path / "dump.json").read_text())) == 1


def test_gateway_config(tmp_path):
    from toolsim.demo import build_demo

    build_demo(tmp_path / "demo")
    config_path = tmp_path / "gateway.json"
    config_path.write_text(json.dumps({
        "manifests": {"default": "demo/manifest.json"},
        "llm": {"backend": "replay", "fixtures": "demo/fixtures.jsonl"},
        "port": 0,
    }))
    config = GatewayConfig.load(config_path)
    assert config.manifests["default"] == str(tmp_path / "demo/manifest.json")
    store = build_store(config)
    assert isinstance(store.llm, FixtureStore) and store.llm.mode == "replay_strict"
    assert len(store.registries["default"]) == 7


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        GatewayConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        build_store(GatewayConfig())
    with pytest.raises(ConfigError):
        build_backend({"backend": "psychic"})
    assert isinstance(build_backend({"backend": "live"}), LiveBackend)


def test_bind_error(tmp_path):
    import socket

    from toolsim.demo import build_demo

    build_demo(tmp_path / "demo")
    with socket.socket() as busy:
        busy.bind(("127.0.0.1", 0))
        busy.listen()
        port = busy.getsockname()[1]
        config = GatewayConfig(manifests={"default": str(tmp_path / "demo/manifest.json")}, port=port,
                               llm={"backend": "replay", "fixtures": str(tmp_path / "demo/fixtures.jsonl")})
        with pytest.raises(BindError):
            serve(config)
