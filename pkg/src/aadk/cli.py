"""Command-line entry point.

Exit codes: 0 success, 1 operational error, 2 conflicts or invalid input.
stdout carries data (human tables or --json), stderr carries diagnostics
as one-line `error: <code>: <message>` records.
"""

from __future__ import annotations

import json
import shutil
import sys
import uuid
from pathlib import Path
from typing import Optional

import click

from . import agentscript, bundle, gateway as gw, model, topoformat, trace
from .debug_service import DebugService, export_trace
from .engine import RunFailed, start_session
from .errors import AadkError, IllegalStateError
from .plugins import PluginRegistry


def _fail(exc: AadkError, code: int = 1) -> "click.exceptions.Exit":
    click.echo(f"error: {exc.code}: {exc.message}", err=True)
    return click.exceptions.Exit(code)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False)


@click.group()
def main():
    """Toolkit for topology-graph agent apps: validate, run, sync, debug,
    package, and serve."""


# --- validate -----------------------------------------------------------------

@main.command()
@click.argument("graph_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="machine-readable report")
def validate(graph_path, as_json):
    """Validate a .topo.json graph; exit 0 iff it is valid."""
    try:
        graph = topoformat.load_graph(graph_path)
        registry = _registry_for(Path(graph_path))
        report = model.validate(graph, extensions=registry.kinds() if registry else None)
    except AadkError as exc:
        raise _fail(exc)
    if as_json:
        click.echo(_dump({
            "ok": report.ok,
            "issues": [{"code": i.code, "ref": i.ref, "message": i.message} for i in report.issues],
        }))
    elif report.ok:
        click.echo("ok")
    else:
        for issue in report.issues:
            click.echo(f"{issue.code}: {issue.message}")
    if not report.ok:
        raise click.exceptions.Exit(2)


def _project_dir_for(path: Path) -> Optional[Path]:
    """Walk up from a graph file to the enclosing project, if any."""
    for candidate in [path.parent, *path.parent.parents]:
        if (candidate / "project.json").is_file():
            return candidate
    return None


def _registry_for(path: Path) -> Optional[PluginRegistry]:
    project_dir = _project_dir_for(path)
    if project_dir is None:
        return None
    try:
        config = bundle.load_project(project_dir)
        return bundle.load_project_registry(project_dir, config)
    except AadkError:
        return None


# --- run ----------------------------------------------------------------------

@main.command()
@click.argument("graph_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_text", default="null", help="session input as JSON")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="write the trace log here")
@click.option("--seed", type=int, default=None, help="seed for the mock provider (makes runs reproducible)")
@click.option("--answers", default="[]", help="JSON array of answers for interaction nodes")
@click.option("--mode", "mode_override", type=click.Choice(gw.MODES), default=None, help="override the gateway mode")
def run(graph_path, input_text, trace_path, seed, answers, mode_override):
    """Run a graph headless and print its result as JSON."""
    try:
        input_value = json.loads(input_text)
        answer_queue = list(json.loads(answers))
    except ValueError as exc:
        click.echo(f"error: syntax: bad JSON argument: {exc}", err=True)
        raise click.exceptions.Exit(1)

    graph_file = Path(graph_path)
    project_dir = _project_dir_for(graph_file)
    try:
        graph = topoformat.load_graph(graph_file)
        graph_lib = bundle.load_graph_dir(graph_file.parent)
        registry = None
        mode = mode_override or gw.MODE_MOCK
        records = profile = None
        if project_dir is not None:
            config = bundle.load_project(project_dir)
            registry = bundle.load_project_registry(project_dir, config)
            gateway_cfg = config.get("gateway", {})
            mode = mode_override or gateway_cfg.get("mode", gw.MODE_MOCK)
            if gateway_cfg.get("records"):
                records = project_dir / gateway_cfg["records"]
            if gateway_cfg.get("mimic_profile"):
                profile = project_dir / gateway_cfg["mimic_profile"]
            base_url = gateway_cfg.get("base_url")
        else:
            base_url = None
        gateway = bundle.build_gateway(mode, base_url=base_url, seed=seed,
                                       records_path=records, profile_path=profile)
        session_id = None
        if seed is not None:
            session_id = str(uuid.uuid5(uuid.NAMESPACE_URL, f"aadk:{seed}:1"))

        session = start_session(graph, input_value, gateway=gateway,
                                graph_lib=graph_lib, registry=registry, session_id=session_id)

        def answer(spec):
            if not answer_queue:
                raise IllegalStateError(
                    f"node {spec.get('node')} asked {spec.get('question')!r} but --answers is exhausted"
                )
            return answer_queue.pop(0)

        try:
            result = session.run_to_completion(input_provider=answer)
        finally:
            if trace_path:
                export_trace(session, trace_path)
        click.echo(_dump(result))
    except RunFailed as exc:
        raise _fail(exc)
    except AadkError as exc:
        raise _fail(exc)


# --- debug --------------------------------------------------------------------

@main.command()
@click.option("--project", "project_dir", type=click.Path(exists=True, file_okay=False), default=".")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=None)
@click.option("--seed", type=int, default=None)
def debug(project_dir, host, port, seed):
    """Start the debug service on the project (full command set)."""
    project_dir = Path(project_dir)
    try:
        config = bundle.load_project(project_dir)
        graphs = bundle.load_graph_dir(project_dir / "graphs")
        registry = bundle.load_project_registry(project_dir, config)
        bundle.check_closure(graphs, config["entry_graph"], registry)
        gateway_cfg = config.get("gateway", {})
        gateway = bundle.build_gateway(
            gateway_cfg.get("mode", gw.MODE_MOCK),
            base_url=gateway_cfg.get("base_url"),
            seed=seed,
            records_path=project_dir / gateway_cfg["records"] if gateway_cfg.get("records") else None,
            profile_path=project_dir / gateway_cfg["mimic_profile"] if gateway_cfg.get("mimic_profile") else None,
        )
        service = DebugService(graphs, config["entry_graph"], gateway=gateway,
                               registry=registry, dev=True, seed=seed)
        handle = service.serve(host, port if port is not None else config.get("debug", {}).get("port", 0))
    except AadkError as exc:
        raise _fail(exc)
    click.echo(f"debug service on {handle.host}:{handle.port} (ndjson + ws at /debug)", err=True)
    handle.wait()


# --- sync ---------------------------------------------------------------------

def _sync_paths(path: Path):
    name = path.name
    if name.endswith(".topo.json"):
        stem = name[: -len(".topo.json")]
        return path.parent, stem, path, path.parent / f"{stem}.agent.aad"
    if name.endswith(".agent.aad"):
        stem = name[: -len(".agent.aad")]
        return path.parent, stem, path.parent / f"{stem}.topo.json", path
    raise AadkError(f"expected a .topo.json or .agent.aad path, got {name!r}")


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def sync(path, as_json):
    """Two-way sync a graph with its agent script; exit 2 on conflicts.

    Keeps a shadow ancestor under .aad-sync/ to detect edits on both sides.
    """
    try:
        folder, stem, graph_path, script_path = _sync_paths(Path(path))
        graph = topoformat.load_graph(graph_path) if graph_path.exists() else None
        if graph is None:
            raise AadkError(f"no graph file {graph_path.name!r} to sync against")
        if not script_path.exists():
            script_path.write_text(agentscript.generate(graph), encoding="utf-8", newline="\n")
            click.echo(f"created {script_path.name}")
        shadow_dir = folder / ".aad-sync"
        shadow_path = shadow_dir / f"{stem}.topo.json"
        ancestor = topoformat.load_graph(shadow_path) if shadow_path.exists() else None

        result = agentscript.sync(graph, script_path.read_text(encoding="utf-8"), ancestor=ancestor)

        topoformat.save_graph(result.graph, graph_path)
        script_path.write_text(result.script, encoding="utf-8", newline="\n")
        shadow_dir.mkdir(exist_ok=True)
        topoformat.save_graph(result.graph, shadow_path)
    except AadkError as exc:
        raise _fail(exc)

    if as_json:
        click.echo(_dump({
            "changes": [_change_obj(c) for c in result.changes],
            "conflicts": [c.__dict__ for c in result.conflicts],
        }))
    else:
        for change in result.changes:
            click.echo(f"{change.origin}: {_describe_edit(change.edit)}")
        for conflict in result.conflicts:
            click.echo(
                f"CONFLICT {conflict.node}.{conflict.key}: "
                f"graph={json.dumps(conflict.graph_value)} text={json.dumps(conflict.text_value)} (text wins)"
            )
        if not result.changes and not result.conflicts:
            click.echo("in sync")
    if result.conflicts:
        raise click.exceptions.Exit(2)


def _change_obj(change):
    return {"origin": change.origin, "edit": _describe_edit(change.edit)}


def _describe_edit(edit) -> str:
    if isinstance(edit, model.AddNode):
        return f"AddNode {edit.node.id} ({edit.node.kind})"
    if isinstance(edit, model.RemoveNode):
        return f"RemoveNode {edit.id}"
    if isinstance(edit, model.Connect):
        e = edit.edge
        return f"Connect {e.from_node}.{e.from_port} -> {e.to_node}.{e.to_port}"
    if isinstance(edit, model.Disconnect):
        e = edit.edge
        return f"Disconnect {e.from_node}.{e.from_port} -> {e.to_node}.{e.to_port}"
    if isinstance(edit, model.SetConfig):
        if edit.value is model.UNSET:
            return f"UnsetConfig {edit.id}.{edit.key}"
        return f"SetConfig {edit.id}.{edit.key} = {json.dumps(edit.value, ensure_ascii=False)}"
    if isinstance(edit, model.MoveNode):
        return f"MoveNode {edit.id} -> ({edit.x}, {edit.y})"
    if isinstance(edit, agentscript.TextRegion):
        return f"script {edit.action} {edit.node}.{edit.field}"
    return repr(edit)


# --- package / serve -------------------------------------------------------------

@main.command()
@click.option("--project", "project_dir", type=click.Path(exists=True, file_okay=False), default=".")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def package(project_dir, out_dir):
    """Package the project into a relocatable bundle."""
    try:
        path = bundle.package(project_dir, out_dir)
    except AadkError as exc:
        raise _fail(exc)
    click.echo(str(path))


@main.command()
@click.argument("bundle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=0)
@click.option("--dev", is_flag=True, help="expose the full debug command set")
@click.option("--mode", type=click.Choice(gw.MODES), default=None)
@click.option("--seed", type=int, default=None)
def serve(bundle_dir, host, port, dev, mode, seed):
    """Serve a bundle as an agent service (run-mode protocol by default)."""
    try:
        handle = bundle.serve_bundle(bundle_dir, host, port, dev=dev, mode=mode, seed=seed)
    except AadkError as exc:
        raise _fail(exc)
    click.echo(f"serving on {handle.host}:{handle.port} "
               f"({'dev' if dev else 'run'} mode; embed.json written)", err=True)
    handle.wait()


# --- plugin ---------------------------------------------------------------------

@main.group()
def plugin():
    """List or install plugins for the current project."""


@plugin.command("list")
@click.option("--project", "project_dir", type=click.Path(exists=True, file_okay=False), default=".")
@click.option("--json", "as_json", is_flag=True)
def plugin_list(project_dir, as_json):
    try:
        config = bundle.load_project(project_dir)
        registry = bundle.load_project_registry(project_dir, config)
    except AadkError as exc:
        raise _fail(exc)
    catalog = registry.list_components()
    if as_json:
        click.echo(_dump([c.__dict__ for c in catalog]))
        return
    if not catalog:
        click.echo("no components installed")
        return
    for info in catalog:
        click.echo(f"{info.namespace}/{info.name}\t{info.version}\t{info.description}")


@plugin.command("install")
@click.argument("plugin_path", type=click.Path(exists=True))
@click.option("--project", "project_dir", type=click.Path(exists=True, file_okay=False), default=".")
def plugin_install(plugin_path, project_dir):
    """Copy a plugin into the project and register it in project.json."""
    project_dir = Path(project_dir)
    source = Path(plugin_path)
    if source.name == "plugin.json":
        source = source.parent
    try:
        config = bundle.load_project(project_dir)
        probe = PluginRegistry()
        names = probe.load_plugin(source)
        namespace = names[0][0]
        dest = project_dir / "plugins" / namespace
        if dest.resolve() != source.resolve():
            if dest.exists():
                shutil.rmtree(dest)
            dest.parent.mkdir(exist_ok=True)
            shutil.copytree(source, dest)
        rel = f"plugins/{namespace}"
        if rel not in config["plugin_paths"]:
            config["plugin_paths"].append(rel)
        (project_dir / "project.json").write_text(_dump(config) + "\n", encoding="utf-8")
    except AadkError as exc:
        raise _fail(exc)
    click.echo(f"installed {namespace} ({len(names)} components)")


# --- trace tools ------------------------------------------------------------------

@main.group(name="trace")
def trace_group():
    """Trace log utilities."""


@trace_group.command("check")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def trace_check(trace_path, as_json):
    """Check a trace log's well-formedness; exit 2 on violations."""
    try:
        log = json.loads(Path(trace_path).read_text(encoding="utf-8"))
    except ValueError as exc:
        click.echo(f"error: syntax: {exc}", err=True)
        raise click.exceptions.Exit(1)
    problems = trace.check_log(log)
    if as_json:
        click.echo(_dump({"ok": not problems, "problems": problems}))
    elif not problems:
        click.echo("ok")
    else:
        for problem in problems:
            click.echo(problem)
    if problems:
        raise click.exceptions.Exit(2)


# --- mimic tools --------------------------------------------------------------------

@main.group()
def mimic():
    """GPT-mimic utilities."""


@mimic.command("savings")
@click.argument("traces", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", "baseline_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--treatment", "treatment_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def mimic_savings(traces, baseline_paths, treatment_paths, as_json):
    """Tokens and calls per trace; with --baseline/--treatment, reductions."""
    def load(paths):
        return [json.loads(Path(p).read_text(encoding="utf-8")) for p in paths]

    rows = []
    for path in traces:
        log = json.loads(Path(path).read_text(encoding="utf-8"))
        rows.append({"trace": str(path), **gw.trace_usage(log)})

    output = {"traces": rows}
    if baseline_paths or treatment_paths:
        output["savings"] = gw.savings(load(baseline_paths), load(treatment_paths))

    if as_json:
        click.echo(_dump(output))
        return
    if rows:
        click.echo("trace\tlive_calls\tmimic_calls\tprompt\tcompletion\tsaved")
        for row in rows:
            click.echo(
                f"{row['trace']}\t{row['live_calls']}\t{row['mimic_calls']}\t"
                f"{row['prompt_tokens']}\t{row['completion_tokens']}\t{row['saved_tokens']}"
            )
    if "savings" in output:
        s = output["savings"]
        click.echo(f"token_reduction\t{s['token_reduction']:.4f}")
        click.echo(f"call_reduction\t{s['call_reduction']:.4f}")


if __name__ == "__main__":
    main()
