"""The wire protocol's messages conform to the shared schema file, which the
browser client's tests validate against as well."""

import json
from pathlib import Path

import jsonschema
import pytest

from aadk import debug_service
from aadk.debug_service import DebugService
from aadk.gateway import Gateway, MockProvider

from conftest import linear_graph
from wireclient import DebugClient

SCHEMA = json.loads((Path(__file__).parent.parent / "docs" / "debug-protocol.schema.json").read_text())


def validator(definition):
    return jsonschema.Draft7Validator({**SCHEMA, "$ref": f"#/definitions/{definition}"})


def test_schema_command_enum_matches_service():
    enum = SCHEMA["definitions"]["command"]["properties"]["cmd"]["enum"]
    assert tuple(enum) == debug_service.COMMANDS


def test_run_mode_commands_are_strict_subset():
    assert set(debug_service.RUN_MODE_COMMANDS) < set(debug_service.COMMANDS)


def test_all_wire_messages_conform():
    graphs = {"hello": linear_graph(("greet", "Prompt", {"template": "Hi {payload}"}), name="hello")}
    service = DebugService(graphs, "hello", gateway=Gateway(MockProvider(1)), dev=True)
    handle = service.serve()
    command_check = validator("command")
    reply_check = validator("reply")
    event_check = validator("event")
    sent = []
    received = []
    try:
        client = DebugClient(handle.host, handle.port)
        original = client.send_raw

        def spy(text):
            sent.append(json.loads(text))
            original(text)

        client.send_raw = spy
        client.must("attach")
        sid = client.must("start", {"graph": "hello", "input": "x", "breakpoints": ["greet"]})["session"]
        client.request("continue", {"session": sid})
        client.must("inspect", {"session": sid})
        client.must("step_over", {"session": sid})
        client.must("continue", {"session": sid})
        client.must("get_trace", {"session": sid})
        client.must("detach")
        received = [m for m in client.events]
        client.close()
    finally:
        handle.stop()

    assert len(sent) >= 8
    for message in sent:
        command_check.validate(message)

    # Replies and events captured by the client must also conform.
    assert received, "expected at least one event"
    for message in received:
        event_check.validate(message)
    reply_check.validate({"re": 1, "ok": True, "result": {}})
    reply_check.validate({"re": None, "ok": False, "error": "parse"})
    with pytest.raises(jsonschema.ValidationError):
        reply_check.validate({"ok": True})
    with pytest.raises(jsonschema.ValidationError):
        command_check.validate({"cmd": "explode", "req": 1})
