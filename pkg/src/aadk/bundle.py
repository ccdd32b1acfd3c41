"""Project packaging: self-contained runnable bundles, and serving them.

A bundle directory holds bundle.json, every graph the entry graph can
reach through SubAgent nodes, the plugins its components need, and any
gateway assets (recordings, mimic profile). Bundles contain no absolute
paths, so they serve identically from any location.
"""

from __future__ import annotations

import json
import shutil
import time
from pathlib import Path
from typing import Dict, Optional, Tuple

from . import model, simweb, topoformat
from .debug_service import DebugService
from .errors import (
    InvalidBundleError,
    MissingGraphError,
    SchemaError,
    UnresolvedPluginError,
    UnresolvedSubAgentError,
)
from .gateway import (
    MODE_MOCK,
    MODES,
    Gateway,
    HttpProvider,
    MockProvider,
    RecordStore,
    load_mimic_profile,
)
from .model import TopologyGraph
from .plugins import PluginRegistry

BUNDLE_MANIFEST = "bundle.json"


# --- project loading ------------------------------------------------------------

def load_project(project_dir) -> dict:
    project_dir = Path(project_dir)
    config_path = project_dir / "project.json"
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"no project.json in {project_dir}")
    except ValueError as exc:
        raise SchemaError(f"project.json is not valid JSON: {exc}")
    config.setdefault("name", project_dir.name)
    config.setdefault("plugin_paths", [])
    config.setdefault("gateway", {})
    config["gateway"].setdefault("mode", MODE_MOCK)
    config.setdefault("debug", {})
    if config["gateway"]["mode"] not in MODES:
        raise SchemaError(f"unknown gateway mode {config['gateway']['mode']!r}")
    if not config.get("entry_graph"):
        raise SchemaError("project.json needs 'entry_graph'")
    return config


def load_graph_dir(graphs_dir) -> Dict[str, TopologyGraph]:
    graphs: Dict[str, TopologyGraph] = {}
    graphs_dir = Path(graphs_dir)
    if not graphs_dir.is_dir():
        return graphs
    for path in sorted(graphs_dir.glob("*.topo.json")):
        graph = topoformat.load_graph(path)
        if graph.name in graphs:
            raise SchemaError(f"two graphs named {graph.name!r} in {graphs_dir}")
        graphs[graph.name] = graph
    return graphs


def _resolve_plugin_path(project_dir: Path, entry: str) -> Path:
    if entry == "builtin:simweb":
        return simweb.builtin_plugin_dir()
    return (project_dir / entry).resolve()


def load_project_registry(project_dir, config) -> PluginRegistry:
    registry = PluginRegistry()
    for entry in config.get("plugin_paths", []):
        registry.load_plugin(_resolve_plugin_path(Path(project_dir), entry))
    return registry


# --- closure checks ----------------------------------------------------------------

def check_closure(graphs: Dict[str, TopologyGraph], entry_graph: str, registry: PluginRegistry) -> None:
    if entry_graph not in graphs:
        raise MissingGraphError(f"entry graph {entry_graph!r} is not among the packaged graphs")
    kinds = registry.kinds()
    for graph in graphs.values():
        report = model.validate(graph, extensions=kinds)
        if not report.ok:
            first = report.issues[0]
            raise InvalidBundleError(f"graph {graph.name!r}: {first.code}: {first.message}")
        for node in graph.nodes:
            if node.kind == "SubAgent":
                target = node.config.get("graph", "")
                if target not in graphs:
                    raise UnresolvedSubAgentError(
                        f"node {node.id!r} in graph {graph.name!r} needs graph {target!r}"
                    )
            component = None
            if node.kind == "Tool":
                component = node.config.get("component", "")
            elif model.is_extension_kind(node.kind):
                component = node.kind
            if component and component not in kinds:
                raise UnresolvedPluginError(
                    f"node {node.id!r} in graph {graph.name!r} needs component {component!r}"
                )


# --- packaging ------------------------------------------------------------------------

def package(project_dir, out_dir) -> Path:
    """Build a relocatable bundle from a project directory."""
    project_dir = Path(project_dir)
    config = load_project(project_dir)
    graphs = load_graph_dir(project_dir / "graphs")
    if not graphs:
        raise MissingGraphError(f"no graphs/*.topo.json under {project_dir}")
    registry = load_project_registry(project_dir, config)
    check_closure(graphs, config["entry_graph"], registry)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    graphs_out = out_dir / "graphs"
    graphs_out.mkdir(exist_ok=True)
    graph_paths = []
    for name in sorted(graphs):
        rel = f"graphs/{name}.topo.json"
        topoformat.save_graph(graphs[name], out_dir / rel)
        graph_paths.append(rel)

    namespaces = []
    for namespace in sorted(registry.namespaces()):
        src = registry.manifest_dir(namespace)
        dst = out_dir / "plugins" / namespace
        if dst.exists():
            shutil.rmtree(dst)
        shutil.copytree(src, dst)
        namespaces.append(namespace)

    gateway_cfg = config.get("gateway", {})
    for key, default_name in (("records", "records.ndjson"), ("mimic_profile", "profile.mimic.json")):
        rel = gateway_cfg.get(key)
        if rel:
            src = project_dir / rel
            if src.exists():
                shutil.copy(src, out_dir / default_name)

    ui_dir = config.get("ui")
    if ui_dir and (project_dir / ui_dir).is_dir():
        dst = out_dir / "ui"
        if dst.exists():
            shutil.rmtree(dst)
        shutil.copytree(project_dir / ui_dir, dst)

    manifest = {
        "name": config["name"],
        "version": config.get("version", "0.1.0"),
        "entry_graph": config["entry_graph"],
        "graphs": graph_paths,
        "plugins": namespaces,
        "default_mode": gateway_cfg.get("mode", MODE_MOCK),
        "created_at": int(time.time() * 1000),
    }
    (out_dir / BUNDLE_MANIFEST).write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return out_dir


# --- serving ----------------------------------------------------------------------------

def load_bundle(bundle_dir) -> Tuple[dict, Dict[str, TopologyGraph], PluginRegistry]:
    bundle_dir = Path(bundle_dir)
    try:
        manifest = json.loads((bundle_dir / BUNDLE_MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidBundleError(f"no {BUNDLE_MANIFEST} in {bundle_dir}")
    except ValueError as exc:
        raise InvalidBundleError(f"{BUNDLE_MANIFEST} is not valid JSON: {exc}")

    graphs: Dict[str, TopologyGraph] = {}
    for rel in manifest.get("graphs", []):
        path = bundle_dir / rel
        if not path.is_file():
            raise InvalidBundleError(f"bundle lists missing graph file {rel!r}")
        graph = topoformat.load_graph(path)
        graphs[graph.name] = graph

    registry = PluginRegistry()
    for namespace in manifest.get("plugins", []):
        plugin_dir = bundle_dir / "plugins" / namespace
        if not plugin_dir.is_dir():
            raise InvalidBundleError(f"bundle lists missing plugin {namespace!r}")
        registry.load_plugin(plugin_dir)

    check_closure(graphs, manifest.get("entry_graph", ""), registry)
    return manifest, graphs, registry


def build_gateway(mode: str, *, base_url: Optional[str] = None, seed: Optional[int] = None,
                  records_path=None, profile_path=None) -> Gateway:
    if mode not in MODES:
        raise SchemaError(f"unknown gateway mode {mode!r}")
    if mode != MODE_MOCK and base_url:
        provider = HttpProvider(base_url)
    else:
        provider = MockProvider(seed if seed is not None else 0)
    store = RecordStore(records_path) if records_path else RecordStore()
    rules = []
    if profile_path and Path(profile_path).exists():
        rules = load_mimic_profile(profile_path)
    return Gateway(provider, mode=mode, rules=rules, store=store)


def serve_bundle(bundle_dir, host: str = "127.0.0.1", port: int = 0, *,
                 dev: bool = False, mode: Optional[str] = None, seed: Optional[int] = None):
    """Serve a bundle as an agent service; returns the service handle.

    Run mode (default) exposes only the run-mode command subset and runs
    sessions automatically; --dev exposes the full debug protocol.
    """
    bundle_dir = Path(bundle_dir)
    manifest, graphs, registry = load_bundle(bundle_dir)
    gateway_mode = mode or manifest.get("default_mode", MODE_MOCK)
    records = bundle_dir / "records.ndjson"
    profile = bundle_dir / "profile.mimic.json"
    gateway = build_gateway(
        gateway_mode,
        seed=seed,
        records_path=records if records.exists() else None,
        profile_path=profile if profile.exists() else None,
    )
    service = DebugService(
        graphs,
        manifest.get("entry_graph", ""),
        gateway=gateway,
        registry=registry,
        dev=dev,
        static_dir=bundle_dir / "ui" if (bundle_dir / "ui").is_dir() else None,
        seed=seed,
    )
    handle = service.serve(host, port)
    embed = {
        "endpoint": f"{handle.host}:{handle.port}",
        "entry_graph": manifest.get("entry_graph", ""),
        "protocol": "ndjson-v1",
    }
    service.embed = embed
    (bundle_dir / "embed.json").write_text(
        json.dumps(embed, indent=2) + "\n", encoding="utf-8"
    )
    return handle
