import pytest

from aadk import engine, model, trace
from aadk.engine import RunFailed, Session, StepOutcome, start_session
from aadk.errors import IllegalStateError, InvalidChoiceError, InvalidGraphError
from aadk.model import Edge, TopologyGraph, make_graph, make_node
from aadk.trace import check_log
from aadk.values import values_equal

from conftest import linear_graph
from graphgen import random_graph, random_input
from oracle import run_oracle


def test_minimal_session_lifecycle():
    g = linear_graph(("greet", "Prompt", {"template": "Hi {payload}"}))
    session = start_session(g, "Bob")
    assert session.status == engine.READY
    assert session.peek_next() == "start"
    outcomes = [session.step() for _ in range(3)]
    assert [o.kind for o in outcomes] == [
        StepOutcome.ADVANCED, StepOutcome.ADVANCED, StepOutcome.DONE,
    ]
    assert outcomes[-1].value == "Hi Bob"
    assert session.status == engine.FINISHED
    with pytest.raises(IllegalStateError):
        session.step()


def test_invalid_graph_refused():
    with pytest.raises(InvalidGraphError):
        start_session(TopologyGraph(name="nope"), 1)


def test_breakpoint_pauses_before_execution():
    g = linear_graph(("a", "Connector"), ("b", "Connector"))
    session = start_session(g, 5, breakpoints={"b"})
    session.step()  # start
    session.step()  # a
    outcome = session.step()
    assert outcome.kind == StepOutcome.PAUSED and outcome.node == "b"
    assert session.status == engine.PAUSED
    # b has not executed: no NodeEnter for it yet
    assert not any(e.kind == trace.NODE_ENTER and e.node == "b" for e in session.trace.events)
    outcome = session.step()  # stepping from the pause executes b
    assert outcome.kind == StepOutcome.ADVANCED and outcome.node == "b"


def test_end_default_result_is_payload():
    g = linear_graph(("c", "Connector"))
    session = start_session(g, {"deep": [1]})
    assert session.run_to_completion() == {"deep": [1]}


def test_branch_routes_first_true_case():
    nodes = (
        make_node("start", "Start"),
        make_node("br", "Branch", {"cases": [{"port": "then", "cond": "payload > 0"}]}),
        make_node("pos", "Prompt", {"template": "pos"}),
        make_node("neg", "Prompt", {"template": "neg"}),
        make_node("e1", "End"),
        make_node("e2", "End"),
    )
    edges = (
        Edge("start", "out", "br", "in"),
        Edge("br", "then", "pos", "in"),
        Edge("br", "else", "neg", "in"),
        Edge("pos", "out", "e1", "in"),
        Edge("neg", "out", "e2", "in"),
    )
    g = make_graph("br", nodes, edges, entry="start")
    assert start_session(g, 1).run_to_completion() == "pos"
    assert start_session(g, -1).run_to_completion() == "neg"


def test_branch_route_missing_fails():
    nodes = (
        make_node("start", "Start"),
        make_node("br", "Branch", {"cases": [{"port": "then", "cond": "false"}]}),
        make_node("pos", "Prompt", {"template": "pos"}),
        make_node("e1", "End"),
    )
    edges = (
        Edge("start", "out", "br", "in"),
        Edge("br", "then", "pos", "in"),
        Edge("pos", "out", "e1", "in"),
    )
    g = make_graph("nr", nodes, edges, entry="start")
    with pytest.raises(RunFailed) as exc:
        start_session(g, 1).run_to_completion()
    assert exc.value.record["kind"] == "RouteMissing"
    assert exc.value.record["node"] == "br"


def loop_graph(body_expr="item * 2"):
    nodes = (
        make_node("start", "Start"),
        make_node("loop", "ArrayLoop"),
        make_node("double", "Code", {"expr": body_expr}),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "loop", "in"),
        Edge("loop", "body", "double", "in"),
        Edge("double", "out", "loop", "loopback"),
        Edge("loop", "done", "end", "in"),
    )
    return make_graph("loop", nodes, edges, entry="start")


def test_arrayloop_collects_body_results():
    assert start_session(loop_graph(), [1, 2, 3]).run_to_completion() == [2, 4, 6]


def test_arrayloop_empty_array():
    assert start_session(loop_graph(), []).run_to_completion() == []


def test_arrayloop_non_array_fails():
    with pytest.raises(RunFailed) as exc:
        start_session(loop_graph(), "nope").run_to_completion()
    assert exc.value.record["kind"] == "TypeMismatch"


def test_arrayloop_env_bindings():
    session = start_session(loop_graph('str(index) + ":" + str(item)'), [10, 20])
    assert session.run_to_completion() == ["0:10", "1:20"]


def test_loop_iteration_frame_env_visible_while_paused():
    session = start_session(loop_graph(), [10, 20, 30], breakpoints={"double"})
    while session.status != engine.PAUSED:
        session.step()
    session.step()  # execute body for item 10
    while session.status != engine.PAUSED:
        session.step()
    snap = session.snapshot()
    top = snap["frames"][-1]
    assert top["env"]["item"] == 20
    assert top["env"]["index"] == 1


def test_error_handler_catches_downstream():
    nodes = (
        make_node("start", "Start"),
        make_node("eh", "ErrorHandler"),
        make_node("boom", "Code", {"expr": "payload / 0"}),
        make_node("ok_end", "End"),
        make_node("report", "Prompt", {"template": "err: {payload.kind}"}),
        make_node("err_end", "End"),
    )
    edges = (
        Edge("start", "out", "eh", "in"),
        Edge("eh", "try", "boom", "in"),
        Edge("boom", "out", "ok_end", "in"),
        Edge("eh", "catch", "report", "in"),
        Edge("report", "out", "err_end", "in"),
    )
    g = make_graph("eh", nodes, edges, entry="start")
    assert start_session(g, 3).run_to_completion() == "err: DivByZero"
    events = start_session(g, 3)
    events.run_to_completion()
    kinds = [e.kind for e in events.trace.events]
    assert trace.ERROR_RAISED in kinds and trace.ERROR_CAUGHT in kinds


def test_uncaught_error_fails_session():
    g = linear_graph(("boom", "Code", {"expr": "1 / 0"}))
    session = start_session(g, 1)
    with pytest.raises(RunFailed) as exc:
        session.run_to_completion()
    assert session.status == engine.FAILED
    assert exc.value.record["kind"] == "DivByZero"
    assert exc.value.record["node"] == "boom"
    assert check_log(session.trace_log()) == []


def test_error_in_loop_body_unwinds_to_outer_handler():
    nodes = (
        make_node("start", "Start"),
        make_node("eh", "ErrorHandler"),
        make_node("mk", "Code", {"expr": "[1, 0, 2]"}),
        make_node("loop", "ArrayLoop"),
        make_node("inv", "Code", {"expr": "10 / item"}),
        make_node("ok_end", "End"),
        make_node("report", "Prompt", {"template": "caught {payload.kind} at {payload.node}"}),
        make_node("err_end", "End"),
    )
    edges = (
        Edge("start", "out", "eh", "in"),
        Edge("eh", "try", "mk", "in"),
        Edge("mk", "out", "loop", "in"),
        Edge("loop", "body", "inv", "in"),
        Edge("inv", "out", "loop", "loopback"),
        Edge("loop", "done", "ok_end", "in"),
        Edge("eh", "catch", "report", "in"),
        Edge("report", "out", "err_end", "in"),
    )
    g = make_graph("loop_eh", nodes, edges, entry="start")
    session = start_session(g, None)
    assert session.run_to_completion() == "caught DivByZero at inv"
    assert check_log(session.trace_log()) == []


def test_subagent_runs_named_graph():
    sub = linear_graph(("x2", "Code", {"expr": "payload * 2"}), name="doubler")
    nodes = (
        make_node("start", "Start"),
        make_node("sub", "SubAgent", {"graph": "doubler"}),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "sub", "in"),
        Edge("sub", "out", "end", "in"),
    )
    g = make_graph("outer", nodes, edges, entry="start")
    session = start_session(g, 21, graph_lib={"doubler": sub})
    assert session.run_to_completion() == 42
    assert check_log(session.trace_log()) == []
    pushes = [e for e in session.trace.events if e.kind == trace.FRAME_PUSH]
    assert any(e.data.get("kind") == engine.SUBAGENT for e in pushes)


def test_summary_join_waits_for_all_edges():
    nodes = (
        make_node("start", "Start"),
        make_node("dup", "Connector", out_ports=["out", "out2"]),
        make_node("a", "Prompt", {"template": "A{payload}"}),
        make_node("b", "Prompt", {"template": "B{payload}"}),
        make_node("join", "Summary", {"mode": "collect_array"}),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "dup", "in"),
        Edge("dup", "out", "a", "in"),
        Edge("dup", "out2", "b", "in"),
        Edge("a", "out", "join", "in"),
        Edge("b", "out", "join", "in"),
        Edge("join", "out", "end", "in"),
    )
    g = make_graph("join", nodes, edges, entry="start")
    assert start_session(g, 7).run_to_completion() == ["A7", "B7"]


def test_summary_concat_flattens_arrays():
    nodes = (
        make_node("start", "Start"),
        make_node("mk", "Code", {"expr": '["x", "y"]'}),
        make_node("join", "Summary", {"mode": "concat_text"}),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "mk", "in"),
        Edge("mk", "out", "join", "in"),
        Edge("join", "out", "end", "in"),
    )
    g = make_graph("concat", nodes, edges, entry="start")
    assert start_session(g, None).run_to_completion() == "x\ny"


def ask_graph(kind="AskText", config=None):
    config = config or {"question": "Ready {payload}?"}
    nodes = (
        make_node("start", "Start"),
        make_node("ask", kind, config),
        make_node("end", "End"),
    )
    edges = (Edge("start", "out", "ask", "in"), Edge("ask", "out", "end", "in"))
    return make_graph("ask", nodes, edges, entry="start")


def test_asktext_suspends_and_resumes():
    session = start_session(ask_graph(), "Bob")
    session.step()
    outcome = session.step()
    assert outcome.kind == StepOutcome.NEEDS_INPUT
    assert session.status == engine.AWAITING_INPUT
    assert session.pending_input["question"] == "Ready Bob?"
    with pytest.raises(IllegalStateError):
        session.step()
    session.provide_input("yes")
    assert session.run_to_completion() == "yes"


def test_askchoice_validates_options():
    g = ask_graph("AskChoice", {"question": "pick", "options": ["a", "b"]})
    session = start_session(g, None)
    session.step()
    session.step()
    with pytest.raises(InvalidChoiceError):
        session.provide_input("c")
    assert session.status == engine.AWAITING_INPUT
    session.provide_input("b")
    assert session.run_to_completion() == "b"


def test_provide_input_on_finished_session_illegal():
    g = linear_graph(("c", "Connector"))
    session = start_session(g, 1)
    session.run_to_completion()
    with pytest.raises(IllegalStateError):
        session.provide_input("x")


def test_run_to_completion_with_input_provider():
    session = start_session(ask_graph(), "Ann")
    result = session.run_to_completion(input_provider=lambda spec: "sure")
    assert result == "sure"


def test_show_message_emits_display_event():
    g = linear_graph(("show", "ShowMessage", {"template": "got {payload}"}))
    session = start_session(g, 9)
    assert session.run_to_completion() == 9  # pass-through
    displays = [e for e in session.trace.events if e.kind == trace.DISPLAY]
    assert displays and displays[0].data["text"] == "got 9"


def test_step_count_matches_path_length():
    g = linear_graph(("a", "Connector"), ("b", "Connector"), ("c", "Connector"))
    session = start_session(g, 0)
    advanced = 0
    while session.status not in engine.TERMINAL:
        outcome = session.step()
        if outcome.kind in (StepOutcome.ADVANCED, StepOutcome.DONE):
            advanced += 1
    assert advanced == 5  # start, a, b, c, end


def test_trace_wellformed_for_linear_run():
    g = linear_graph(("a", "Connector"))
    session = start_session(g, 1)
    session.run_to_completion()
    log = session.trace_log()
    assert check_log(log) == []
    kinds = [e["kind"] for e in log["events"]]
    # 3-node run: SessionStart, 3 enter/exit pairs, SessionEnd; seq dense 0..7
    assert kinds.count(trace.NODE_ENTER) == 3
    assert kinds.count(trace.NODE_EXIT) == 3
    assert kinds[0] == trace.SESSION_START and kinds[-1] == trace.SESSION_END
    assert len(kinds) == 8
    assert [e["seq"] for e in log["events"]] == list(range(8))


def test_external_code_node_roundtrip():
    import sys
    script = "import json,sys; d=json.load(sys.stdin); print(json.dumps(d['payload'] * 3))"
    g = linear_graph(("ext", "Code", {"external": {"command": [sys.executable, "-c", script], "timeout_ms": 20000}}))
    session = start_session(g, 5)
    assert session.run_to_completion() == 15


def test_external_code_node_failure_is_catchable():
    import sys
    nodes = (
        make_node("start", "Start"),
        make_node("eh", "ErrorHandler"),
        make_node("ext", "Code", {"external": {"command": [sys.executable, "-c", "raise SystemExit(3)"]}}),
        make_node("e1", "End"),
        make_node("report", "Code", {"expr": "payload.kind"}),
        make_node("e2", "End"),
    )
    edges = (
        Edge("start", "out", "eh", "in"),
        Edge("eh", "try", "ext", "in"),
        Edge("ext", "out", "e1", "in"),
        Edge("eh", "catch", "report", "in"),
        Edge("report", "out", "e2", "in"),
    )
    g = make_graph("ext", nodes, edges, entry="start")
    assert start_session(g, 1).run_to_completion() == "ExternalFailed"


def test_nested_subagents_and_loops():
    inner = linear_graph(("inc", "Code", {"expr": "payload + 1"}), name="inner")
    mid_nodes = (
        make_node("start", "Start"),
        make_node("mk", "Code", {"expr": "[payload, payload * 10]"}),
        make_node("loop", "ArrayLoop"),
        make_node("deeper", "SubAgent", {"graph": "inner"}),
        make_node("end", "End"),
    )
    mid_edges = (
        Edge("start", "out", "mk", "in"),
        Edge("mk", "out", "loop", "in"),
        Edge("loop", "body", "deeper", "in"),
        Edge("deeper", "out", "loop", "loopback"),
        Edge("loop", "done", "end", "in"),
    )
    mid = make_graph("mid", mid_nodes, mid_edges, entry="start")
    outer = linear_graph(("call_mid", "SubAgent", {"graph": "mid"}), name="outer")
    session = start_session(outer, 5, graph_lib={"inner": inner, "mid": mid})
    assert session.run_to_completion() == [6, 51]
    assert check_log(session.trace_log()) == []
    depths = [e.frame_depth for e in session.trace.events if e.kind == trace.NODE_ENTER]
    assert max(depths) == 4  # root -> mid -> loop body -> inner


def test_recursive_subagent_hits_depth_guard():
    g = linear_graph(("again", "SubAgent", {"graph": "lin"}), name="lin")
    session = start_session(g, 1, graph_lib={"lin": g})
    with pytest.raises(RunFailed) as exc:
        session.run_to_completion()
    assert exc.value.record["kind"] == "RecursionLimit"
    assert check_log(session.trace_log()) == []


def test_interaction_inside_loop_body_asks_per_iteration():
    nodes = (
        make_node("start", "Start"),
        make_node("loop", "ArrayLoop"),
        make_node("ask", "AskText", {"question": "rename {item}?"}),
        make_node("end", "End"),
    )
    edges = (
        Edge("start", "out", "loop", "in"),
        Edge("loop", "body", "ask", "in"),
        Edge("ask", "out", "loop", "loopback"),
        Edge("loop", "done", "end", "in"),
    )
    g = make_graph("askloop", nodes, edges, entry="start")
    session = start_session(g, ["a", "b"])
    questions = []

    def answer(spec):
        questions.append(spec["question"])
        return spec["question"].split()[1].rstrip("?") + "!"

    assert session.run_to_completion(input_provider=answer) == ["a!", "b!"]
    assert questions == ["rename a?", "rename b?"]


def test_breakpoint_inside_subagent_graph():
    sub = linear_graph(("x2", "Code", {"expr": "payload * 2"}), name="doubler")
    nodes = (
        make_node("start", "Start"),
        make_node("sub", "SubAgent", {"graph": "doubler"}),
        make_node("end", "End"),
    )
    edges = (Edge("start", "out", "sub", "in"), Edge("sub", "out", "end", "in"))
    g = make_graph("outer", nodes, edges, entry="start")
    session = start_session(g, 3, graph_lib={"doubler": sub}, breakpoints={"x2"})
    outcomes = []
    while session.status not in engine.TERMINAL:
        outcomes.append(session.step())
    paused = [o for o in outcomes if o.kind == StepOutcome.PAUSED]
    assert len(paused) == 1 and paused[0].node == "x2"
    assert session.result == 6


def compare_with_oracle(seed):
    g = random_graph(seed, executable=True, max_nodes=40)
    input_value = random_input(seed)
    expected = run_oracle(g, input_value)
    session = start_session(g, input_value)
    try:
        value = session.run_to_completion()
        actual = ("finished", value)
    except RunFailed as exc:
        actual = ("failed", exc.record)
    assert actual[0] == expected[0], f"seed {seed}: {actual} vs {expected}"
    if actual[0] == "finished":
        assert values_equal(actual[1], expected[1]), f"seed {seed}"
    else:
        assert actual[1]["kind"] == expected[1]["kind"], f"seed {seed}"
        assert actual[1]["node"] == expected[1]["node"], f"seed {seed}"
    assert check_log(session.trace_log()) == [], f"seed {seed}"


@pytest.mark.parametrize("seed", range(120))
def test_engine_matches_oracle(seed):
    compare_with_oracle(seed)
