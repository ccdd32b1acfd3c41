import threading

import pytest

from aadk.debug_service import DebugService
from aadk.gateway import Gateway, MockProvider
from aadk.model import Edge, make_graph, make_node
from aadk.trace import check_log

from conftest import linear_graph
from wireclient import DebugClient, WsDebugClient


def branch_loop_graph():
    nodes = (
        make_node("start", "Start"),
        make_node("check", "Branch", {"cases": [{"port": "then", "cond": "payload >= 0"}]}),
        make_node("mk", "Code", {"expr": "[payload, payload + 1, payload + 2]"}),
        make_node("loop", "ArrayLoop"),
        make_node("double", "Code", {"expr": "item * 2"}),
        make_node("total", "Code", {"expr": "payload[0] + payload[1] + payload[2]"}),
        make_node("fin", "End"),
        make_node("neg", "Prompt", {"template": "negative"}),
        make_node("fin2", "End"),
    )
    edges = (
        Edge("start", "out", "check", "in"),
        Edge("check", "then", "mk", "in"),
        Edge("mk", "out", "loop", "in"),
        Edge("loop", "body", "double", "in"),
        Edge("double", "out", "loop", "loopback"),
        Edge("loop", "done", "total", "in"),
        Edge("total", "out", "fin", "in"),
        Edge("check", "else", "neg", "in"),
        Edge("neg", "out", "fin2", "in"),
    )
    return make_graph("branch_loop", nodes, edges, entry="start")


@pytest.fixture
def service():
    svc = DebugService(
        {
            "branch_loop": branch_loop_graph(),
            "hello": linear_graph(("greet", "Prompt", {"template": "Hi {payload}"}), name="hello"),
            "asker": linear_graph(("llm", "LlmCall", {"model": "m", "prompt": "write chapter {payload}", "params": {}}), name="asker"),
        },
        entry_graph="branch_loop",
        gateway=Gateway(MockProvider(1), mode="mimic-first"),
        dev=True,
    )
    handle = svc.serve()
    yield handle
    handle.stop()


def test_attach_reply_shape(service):
    client = DebugClient(service.host, service.port)
    reply = client.request("attach")
    assert reply["ok"] is True and reply["re"] == 1
    assert reply["result"]["sessions"] == []
    assert "branch_loop" in reply["result"]["graphs"]
    doc = reply["result"]["graphs"]["branch_loop"]
    assert doc["schema_version"] == 1
    client.close()


def test_malformed_json_keeps_connection_open(service):
    client = DebugClient(service.host, service.port)
    client.send_raw("this is not json")
    msg = client.recv()
    assert msg == {"re": None, "ok": False, "error": "parse"}
    assert client.must("attach")["sessions"] == []
    client.close()


def test_unknown_command_rejected(service):
    client = DebugClient(service.host, service.port)
    reply = client.request("explode")
    assert reply["ok"] is False
    client.close()


def test_breakpoint_continue_inspect_step_cycle(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    started = client.must("start", {"graph": "branch_loop", "input": 1})
    sid = started["session"]

    client.must("set_breakpoint", {"session": sid, "node": "loop"})
    stopped = client.must("continue", {"session": sid})
    assert stopped["status"] == "PausedBreakpoint"
    assert stopped["node"] == "loop"
    paused = client.wait_event("paused")
    assert paused["data"]["node"] == "loop"

    # pause-before-execution: the loop node has not entered yet
    log = client.must("get_trace", {"session": sid})
    assert not any(e["kind"] == "NodeEnter" and e["node"] == "loop" for e in log["events"])

    snap = client.must("inspect", {"session": sid})
    assert snap["status"]["state"] == "PausedBreakpoint"
    assert snap["frames"][0]["env"] == {"payload": 1}
    assert snap["breakpoints"] == ["loop"]

    into = client.must("step_into", {"session": sid})
    assert into["applied"] == "step_into"
    assert into["frame_depth"] == 2
    assert into["node"] == "double"

    out = client.must("step_out", {"session": sid})
    assert out["frame_depth"] == 2  # body 0 popped, paused at body 1
    assert out["node"] == "double"

    finished = client.must("continue", {"session": sid})
    assert finished["status"] == "Finished"
    assert finished["result"] == 12  # (1+2+3)*2

    log = client.must("get_trace", {"session": sid})
    assert check_log(log) == []
    client.close()


def test_step_into_not_applicable_flagged(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    sid = client.must("start", {"graph": "hello", "input": "x"})["session"]
    result = client.must("step_into", {"session": sid})
    assert result["applied"] == "step_over"
    assert result["note"] == "StepIntoNotApplicable"
    client.close()


def test_step_over_treats_subframe_as_one_unit(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    sid = client.must("start", {"graph": "branch_loop", "input": 0, "breakpoints": ["loop"]})["session"]
    client.must("continue", {"session": sid})
    over = client.must("step_over", {"session": sid})
    assert over["frame_depth"] == 1
    assert over["node"] == "total"  # whole loop ran as one unit
    log = client.must("get_trace", {"session": sid})
    assert sum(1 for e in log["events"] if e["kind"] == "NodeEnter" and e["node"] == "double") == 3
    client.close()


def test_two_attached_clients_both_receive_events(service):
    watcher = DebugClient(service.host, service.port)
    driver = DebugClient(service.host, service.port)
    watcher.must("attach")
    driver.must("attach")
    sid = driver.must("start", {"graph": "branch_loop", "input": 2, "breakpoints": ["total"]})["session"]
    driver.must("continue", {"session": sid})
    for client in (watcher, driver):
        event = client.wait_event("paused")
        assert event["session"] == sid
        assert event["data"]["node"] == "total"
    watcher.close()
    driver.close()


def test_detached_client_gets_no_events(service):
    watcher = DebugClient(service.host, service.port)
    driver = DebugClient(service.host, service.port)
    watcher.must("attach")
    watcher.must("detach")
    driver.must("attach")
    sid = driver.must("start", {"graph": "hello", "input": "a"})["session"]
    driver.must("continue", {"session": sid})
    driver.wait_event("finished")
    assert watcher.events == []
    watcher.close()
    driver.close()


def test_websocket_binding_same_protocol(service):
    client = WsDebugClient(service.host, service.port)
    client.must("attach")
    sid = client.must("start", {"graph": "hello", "input": "ws"})["session"]
    result = client.must("continue", {"session": sid})
    assert result["status"] == "Finished"
    assert result["result"] == "Hi ws"
    client.wait_event("finished")
    client.close()


def test_mimic_rule_commands(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    result = client.must("set_mimic_rule", {"rule": {
        "id": "r1", "match": {"contains": "x"}, "response": "canned",
    }})
    assert len(result["rules"]) == 1
    assert client.must("clear_mimic_rules")["rules"] == []
    client.close()


def test_wire_set_mimic_rule_answers_session_locally(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    client.must("set_mimic_rule", {"rule": {
        "id": "canned-chapter", "match": {"contains": "chapter"}, "response": "Once upon a time.",
    }})
    live_before = service.service.gateway.live_traffic
    sid = client.must("start", {"graph": "asker", "input": 2})["session"]
    result = client.must("continue", {"session": sid})
    assert result["result"] == "Once upon a time."
    assert service.service.gateway.live_traffic == live_before  # no network
    log = client.must("get_trace", {"session": sid})
    sources = [e["data"]["source"] for e in log["events"] if e["kind"] == "LlmCall"]
    assert sources == ["mimic:canned-chapter"]
    client.must("clear_mimic_rules")
    client.close()


def test_step_out_at_root_depth_runs_to_completion(service):
    client = DebugClient(service.host, service.port)
    client.must("attach")
    sid = client.must("start", {"graph": "hello", "input": "Z"})["session"]
    result = client.must("step_out", {"session": sid})
    assert result["status"] == "Finished"
    assert result["result"] == "Hi Z"
    client.wait_event("finished")
    client.close()


def test_export_trace_idempotent_for_terminal_session(service, tmp_path):
    from aadk.debug_service import export_trace

    client = DebugClient(service.host, service.port)
    client.must("attach")
    sid = client.must("start", {"graph": "hello", "input": "x"})["session"]
    client.must("continue", {"session": sid})
    session = service.service.manager.get(sid)
    a, b = tmp_path / "a.trace.json", tmp_path / "b.trace.json"
    export_trace(session, a)
    export_trace(session, b)
    assert a.read_bytes() == b.read_bytes()
    client.close()


def test_protocol_soak_interleaved_clients(service):
    """Every command gets exactly one reply with a matching req."""
    errors = []

    def hammer(worker_id):
        try:
            client = DebugClient(service.host, service.port)
            client.must("attach")
            sid = client.must("start", {"graph": "branch_loop", "input": worker_id})["session"]
            for cmd, args in [
                ("set_breakpoint", {"session": sid, "node": "total"}),
                ("inspect", {"session": sid}),
                ("continue", {"session": sid}),
                ("inspect", {"session": sid}),
                ("clear_breakpoint", {"session": sid}),
                ("continue", {"session": sid}),
                ("get_trace", {"session": sid}),
            ]:
                reply = client.request(cmd, args)
                assert reply["re"] == client.req, f"req mismatch: {reply}"
                assert reply["ok"], f"{cmd}: {reply}"
            log = client.request("get_trace", {"session": sid})["result"]
            assert check_log(log) == []
            client.close()
        except Exception as exc:  # noqa: BLE001
            errors.append(f"worker {worker_id}: {exc!r}")

    threads = [threading.Thread(target=hammer, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    assert errors == []


def test_unknown_session_error(service):
    client = DebugClient(service.host, service.port)
    reply = client.request("inspect", {"session": "nope"})
    assert reply["ok"] is False
    assert "session" in reply["error"]
    client.close()
