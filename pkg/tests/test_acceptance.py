"""Acceptance suite: one test per criterion, one PASS line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines. Every
tolerance is pinned here; nothing is deferred to later calibration.
"""

import json
import shutil
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from aadk import agentscript, bundle, topoformat
from aadk.cli import main as cli_main
from aadk.debug_service import DebugService, export_trace
from aadk.engine import RunFailed, start_session
from aadk.gateway import Gateway, MockProvider, RecordStore
from aadk.model import SetConfig, apply_edit, structural_equal, validate
from aadk.plugins import PluginRegistry
from aadk.simweb import builtin_plugin_dir
from aadk.trace import check_log, strip_timestamps
from aadk.values import values_equal

from graphgen import random_graph, random_input
from oracle import run_oracle
from wireclient import DebugClient

SAMPLES = Path(__file__).parent.parent / "sample_projects"


def report(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})", flush=True)


# --- A1: serialization round trips ------------------------------------------------

def test_a1_round_trip_suites():
    started = time.monotonic()
    n = 1000

    for seed in range(n):
        graph = random_graph(seed, executable=(seed % 4 == 0))
        text = topoformat.serialize(graph)
        back = topoformat.deserialize(text)
        assert structural_equal(graph, back), f"topo-format value trip failed at seed {seed}"
        assert topoformat.serialize(back) == text, f"topo-format byte trip failed at seed {seed}"

    for seed in range(n):
        graph = random_graph(seed + 50_000, executable=(seed % 3 == 0))
        script = agentscript.generate(graph)
        parsed = agentscript.parse(script)
        assert structural_equal(graph, parsed), f"code-sync parse(generate) failed at seed {seed}"
        assert agentscript.generate(parsed) == script, f"code-sync generate(parse) failed at seed {seed}"
        if seed % 10 == 0:
            lines = script.splitlines()
            margin = [f"margin {seed} // kept text", "", "  indented margin"]
            lines[1:1] = margin
            lines.append("trailing margin")
            edited = "\n".join(lines) + "\n"
            result = agentscript.sync(parsed, edited)
            for chunk in margin + ["trailing margin"]:
                assert chunk in result.script.splitlines(), f"margin lost at seed {seed}"
            assert result.conflicts == []

    elapsed = time.monotonic() - started
    assert elapsed < 60, f"A1 took {elapsed:.1f}s (budget 60s)"
    report("A1", f"2x{n} round trips + margin preservation in {elapsed:.1f}s")


# --- A2: engine equals the reference interpreter -----------------------------------

def test_a2_oracle_equivalence():
    started = time.monotonic()
    n = 1000
    finished = failed = 0
    for seed in range(n):
        graph = random_graph(seed + 100_000, executable=True, max_nodes=40)
        input_value = random_input(seed)
        expected = run_oracle(graph, input_value)
        session = start_session(graph, input_value)
        try:
            actual = ("finished", session.run_to_completion())
        except RunFailed as exc:
            actual = ("failed", exc.record)
        assert actual[0] == expected[0], f"seed {seed}: {actual[0]} vs {expected[0]}"
        if actual[0] == "finished":
            assert values_equal(actual[1], expected[1]), f"seed {seed}: value mismatch"
            finished += 1
        else:
            assert actual[1]["kind"] == expected[1]["kind"], f"seed {seed}: error kind"
            assert actual[1]["node"] == expected[1]["node"], f"seed {seed}: error node"
            failed += 1
        assert check_log(session.trace_log()) == [], f"seed {seed}: malformed trace"
    elapsed = time.monotonic() - started
    assert elapsed < 120, f"A2 took {elapsed:.1f}s (budget 120s)"
    report("A2", f"{n} graphs agree ({finished} finished, {failed} failed paths) in {elapsed:.1f}s")


# --- A3: mimic-assisted debugging savings -------------------------------------------

def test_a3_storywriter_debug_savings(tmp_path):
    started = time.monotonic()
    graphs = bundle.load_graph_dir(SAMPLES / "storywriter_mini" / "graphs")
    story, iterations, topic = graphs["story"], 20, "a lighthouse keeper"

    def run_once(graph, gateway, trace_path):
        session = start_session(graph, topic, gateway=gateway, graph_lib=graphs)
        session.run_to_completion(input_provider=lambda spec: "publish")
        export_trace(session, trace_path)

    def repaired(i):
        # each debug iteration tweaks only the final review/edit stage
        return apply_edit(story, SetConfig("review", "question", f"Publish this story? (rev {i})"))

    baseline_paths = []
    for i in range(iterations):
        path = tmp_path / f"baseline_{i:02d}.trace.json"
        run_once(repaired(i), Gateway(MockProvider(7), mode="live"), path)
        baseline_paths.append(path)

    store = RecordStore(tmp_path / "records.ndjson")
    treatment_paths = []
    first = tmp_path / "treatment_00.trace.json"
    run_once(repaired(0), Gateway(MockProvider(7), mode="record", store=store), first)
    treatment_paths.append(first)
    for i in range(1, iterations):
        path = tmp_path / f"treatment_{i:02d}.trace.json"
        gateway = Gateway(MockProvider(7), mode="mimic-first", store=store)
        run_once(repaired(i), gateway, path)
        assert gateway.live_traffic == 0, f"iteration {i} leaked live traffic"
        treatment_paths.append(path)

    runner = CliRunner()
    args = ["mimic", "savings", "--json"]
    for path in baseline_paths:
        args += ["--baseline", str(path)]
    for path in treatment_paths:
        args += ["--treatment", str(path)]
    result = runner.invoke(cli_main, args, catch_exceptions=False)
    assert result.exit_code == 0
    savings = json.loads(result.output)["savings"]

    assert savings["baseline_live_calls"] == 8 * iterations
    assert savings["token_reduction"] >= 0.90, f"token reduction {savings['token_reduction']:.4f} < 0.90"
    assert savings["call_reduction"] >= 0.80, f"call reduction {savings['call_reduction']:.4f} < 0.80"
    elapsed = time.monotonic() - started
    assert elapsed < 30, f"A3 took {elapsed:.1f}s (budget 30s)"
    report("A3", f"token_reduction={savings['token_reduction']:.3f}, "
                 f"call_reduction={savings['call_reduction']:.3f} over {iterations} iterations in {elapsed:.1f}s")


# --- A4: debugger protocol conformance -----------------------------------------------

def test_a4_debug_protocol_conformance():
    graphs = bundle.load_graph_dir(SAMPLES / "branch_loop" / "graphs")
    service = DebugService(graphs, "branch_loop", gateway=Gateway(MockProvider(1)), dev=True)
    handle = service.serve()
    try:
        client = DebugClient(handle.host, handle.port)
        attach = client.request("attach")
        assert attach["ok"] and attach["re"] == 1

        sid = client.must("start", {"graph": "branch_loop", "input": 1})["session"]
        client.must("set_breakpoint", {"session": sid, "node": "loop"})
        stopped = client.must("continue", {"session": sid})
        assert stopped["status"] == "PausedBreakpoint" and stopped["node"] == "loop"

        # pause-before-execution: the paused node has not entered yet
        log = client.must("get_trace", {"session": sid})
        assert not any(e["kind"] == "NodeEnter" and e["node"] == "loop" for e in log["events"])

        snap = client.must("inspect", {"session": sid})
        depth_before = len(snap["frames"])
        assert depth_before == 1

        into = client.must("step_into", {"session": sid})
        assert into["applied"] == "step_into"
        assert into["frame_depth"] == depth_before + 1, "step_into must increase depth by exactly 1"

        out = client.must("step_out", {"session": sid})
        assert out["frame_depth"] >= 1

        final = client.must("continue", {"session": sid})
        assert final["status"] == "Finished" and final["result"] == 12

        log = client.must("get_trace", {"session": sid})
        problems = check_log(log)
        assert problems == [], f"trace not well-formed: {problems}"
        assert [e["seq"] for e in log["events"]] == list(range(len(log["events"])))
        client.close()
    finally:
        handle.stop()
    report("A4", "attach/breakpoint/step cycle conforms; exported trace is well-formed")


# --- A5: deterministic traces ----------------------------------------------------------

def test_a5_deterministic_traces(tmp_path):
    runner = CliRunner()
    story = str(SAMPLES / "storywriter_mini" / "graphs" / "story.topo.json")
    dumps = []
    for name in ("one", "two"):
        path = tmp_path / f"{name}.trace.json"
        result = runner.invoke(cli_main, [
            "run", story, "--input", '"a robot gardener"', "--seed", "7",
            "--answers", '["publish"]', "--trace", str(path),
        ], catch_exceptions=False)
        assert result.exit_code == 0
        log = strip_timestamps(json.loads(path.read_text()))
        dumps.append(json.dumps(log, sort_keys=True).encode("utf-8"))
    assert dumps[0] == dumps[1], "seeded runs must produce identical traces modulo ts"
    report("A5", f"two seeded runs byte-identical after ts strip ({len(dumps[0])} bytes)")


# --- A6: the 20-component plugin -----------------------------------------------------

def test_a6_simweb_plugin(tmp_path):
    registry = PluginRegistry()
    names = registry.load_plugin(builtin_plugin_dir())
    assert len(names) == 20, f"simweb registered {len(names)} components, expected 20"
    assert len(registry.list_components()) == 20

    graphs = bundle.load_graph_dir(SAMPLES / "webagent" / "graphs")
    session = start_session(graphs["webagent"], None, registry=registry)
    table = session.run_to_completion()
    assert table["headers"] == ["item", "price"]
    assert table["rows"] == [["anvil", "19"], ["rocket", "99"], ["magnet", "7"]]

    broken = apply_edit(graphs["webagent"], SetConfig("go", "args", {"id": '"no_such_element"'}))
    session = start_session(broken, None, registry=registry)
    assert session.run_to_completion() == "handler", "failure must route to the catch path"
    assert any(e.kind == "ErrorCaught" for e in session.trace.events)
    report("A6", "20 components; navigation returns fixture table; failure routes to catch")


# --- A7: bundle closure ------------------------------------------------------------------

def test_a7_bundle_closure(tmp_path, monkeypatch):
    built = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "stage")
    clean = tmp_path / "clean"
    clean.mkdir()
    moved = clean / "bundle"
    shutil.copytree(built, moved)
    shutil.rmtree(built)
    monkeypatch.chdir(clean)  # no project anywhere in sight

    handle = bundle.serve_bundle(moved, seed=11)
    try:
        client = DebugClient(handle.host, handle.port)
        client.must("attach")
        sid = client.must("start", {"input": "closure check"})["session"]
        ask = client.wait_event("awaiting_input")
        assert ask["data"]["options"] == ["publish", "discard"]

        refused = client.request("set_breakpoint", {"session": sid, "node": "review"})
        assert refused["ok"] is False and refused["error"] == "forbidden"

        client.must("provide_input", {"session": sid, "value": "publish"})
        finished = client.wait_event("finished")
        assert finished["data"]["result"] == "published"
        embed = json.loads((moved / "embed.json").read_text())
        assert embed == {
            "endpoint": f"{handle.host}:{handle.port}",
            "entry_graph": "story",
            "protocol": "ndjson-v1",
        }
        client.close()
    finally:
        handle.stop()
    report("A7", "bundle served from a clean directory; run-mode session completed; set_breakpoint refused")
