import json
import shutil
from pathlib import Path

import pytest

from aadk import bundle
from aadk.errors import InvalidBundleError, MissingGraphError, UnresolvedPluginError, UnresolvedSubAgentError
from aadk.trace import check_log

from wireclient import DebugClient

SAMPLES = Path(__file__).parent.parent / "sample_projects"


def test_package_storywriter_lists_graphs(tmp_path):
    out = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "bundle")
    manifest = json.loads((out / "bundle.json").read_text())
    assert manifest["entry_graph"] == "story"
    assert manifest["graphs"] == ["graphs/draft.topo.json", "graphs/story.topo.json"]
    assert manifest["plugins"] == []
    assert (out / "graphs" / "story.topo.json").exists()


def test_package_webagent_bundles_plugin(tmp_path):
    out = bundle.package(SAMPLES / "webagent", tmp_path / "bundle")
    manifest = json.loads((out / "bundle.json").read_text())
    assert manifest["plugins"] == ["simweb"]
    assert (out / "plugins" / "simweb" / "plugin.json").exists()
    assert (out / "plugins" / "simweb" / "site.json").exists()


def test_package_is_deterministic_modulo_created_at(tmp_path):
    out1 = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "b1")
    out2 = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "b2")
    m1 = json.loads((out1 / "bundle.json").read_text())
    m2 = json.loads((out2 / "bundle.json").read_text())
    m1.pop("created_at"), m2.pop("created_at")
    assert m1 == m2
    for rel in m1["graphs"]:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


def test_unresolved_subagent_named(tmp_path):
    project = tmp_path / "proj"
    shutil.copytree(SAMPLES / "storywriter_mini", project)
    (project / "graphs" / "draft.topo.json").unlink()
    with pytest.raises(UnresolvedSubAgentError) as exc:
        bundle.package(project, tmp_path / "out")
    assert "draft" in str(exc.value)


def test_unresolved_plugin_named(tmp_path):
    project = tmp_path / "proj"
    shutil.copytree(SAMPLES / "webagent", project)
    config = json.loads((project / "project.json").read_text())
    config["plugin_paths"] = []
    (project / "project.json").write_text(json.dumps(config))
    with pytest.raises(UnresolvedPluginError):
        bundle.package(project, tmp_path / "out")


def test_missing_graphs_dir(tmp_path):
    project = tmp_path / "empty"
    project.mkdir()
    (project / "project.json").write_text('{"name": "x", "entry_graph": "missing"}')
    with pytest.raises(MissingGraphError):
        bundle.package(project, tmp_path / "out")


def test_bundle_closure_serves_from_fresh_directory(tmp_path):
    built = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "stage")
    moved = tmp_path / "elsewhere" / "bundle"
    moved.parent.mkdir()
    shutil.copytree(built, moved)
    shutil.rmtree(built)

    handle = bundle.serve_bundle(moved, seed=3)
    try:
        embed = json.loads((moved / "embed.json").read_text())
        assert embed["protocol"] == "ndjson-v1"
        assert embed["entry_graph"] == "story"
        assert embed["endpoint"] == f"{handle.host}:{handle.port}"

        client = DebugClient(handle.host, handle.port)
        client.must("attach")
        sid = client.must("start", {"input": "a tiny dragon"})["session"]
        ask = client.wait_event("awaiting_input")
        assert ask["data"]["options"] == ["publish", "discard"]
        client.must("provide_input", {"session": sid, "value": "publish"})
        finished = client.wait_event("finished")
        assert finished["data"]["result"] == "published"

        refused = client.request("set_breakpoint", {"session": sid, "node": "review"})
        assert refused["ok"] is False
        assert refused["error"] == "forbidden"

        log = client.must("get_trace", {"session": sid})
        assert check_log(log) == []
        client.close()
    finally:
        handle.stop()


def test_serve_bundle_dev_mode_allows_breakpoints(tmp_path):
    built = bundle.package(SAMPLES / "branch_loop", tmp_path / "bundle")
    handle = bundle.serve_bundle(built, dev=True, seed=1)
    try:
        client = DebugClient(handle.host, handle.port)
        client.must("attach")
        sid = client.must("start", {"input": 5})["session"]
        assert client.must("set_breakpoint", {"session": sid, "node": "total"})["breakpoints"] == ["total"]
        stopped = client.must("continue", {"session": sid})
        assert stopped["status"] == "PausedBreakpoint"
        client.close()
    finally:
        handle.stop()


def test_replay_bundle_zero_live_traffic(tmp_path):
    project = tmp_path / "proj"
    shutil.copytree(SAMPLES / "storywriter_mini", project)
    config = json.loads((project / "project.json").read_text())
    config["gateway"] = {"mode": "record", "records": "records.ndjson"}
    (project / "project.json").write_text(json.dumps(config))

    # record a run
    graphs = bundle.load_graph_dir(project / "graphs")
    gateway = bundle.build_gateway("record", seed=9, records_path=project / "records.ndjson")
    from aadk.engine import start_session
    session = start_session(graphs["story"], "space turtles", gateway=gateway, graph_lib=graphs)
    session.run_to_completion(input_provider=lambda spec: "publish")
    assert gateway.live_traffic == 8

    config["gateway"] = {"mode": "replay", "records": "records.ndjson"}
    (project / "project.json").write_text(json.dumps(config))
    built = bundle.package(project, tmp_path / "bundle")
    assert (built / "records.ndjson").exists()

    handle = bundle.serve_bundle(built, seed=9)
    try:
        client = DebugClient(handle.host, handle.port)
        client.must("attach")
        sid = client.must("start", {"input": "space turtles"})["session"]
        client.wait_event("awaiting_input")
        client.must("provide_input", {"session": sid, "value": "publish"})
        client.wait_event("finished")
        assert handle.service.gateway.live_traffic == 0
        log = client.must("get_trace", {"session": sid})
        sources = [e["data"]["source"] for e in log["events"] if e["kind"] == "LlmCall"]
        assert len(sources) == 8 and all(s.startswith("replay:") for s in sources)
        client.close()
    finally:
        handle.stop()


def test_load_bundle_rejects_missing_pieces(tmp_path):
    built = bundle.package(SAMPLES / "storywriter_mini", tmp_path / "bundle")
    (built / "graphs" / "draft.topo.json").unlink()
    with pytest.raises(InvalidBundleError):
        bundle.load_bundle(built)
