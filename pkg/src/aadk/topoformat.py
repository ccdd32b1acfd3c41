"""Canonical on-disk form of a topology graph (`.topo.json`).

Canonical documents are deterministic: fixed key order, nodes sorted by id,
edges sorted by source, config keys sorted recursively, two-space indent,
LF endings, trailing newline. Parsing accepts any JSON layout and
normalizes; re-serializing a canonical document reproduces it byte-for-byte.
"""

from __future__ import annotations

import json
from typing import Any, List

from . import model
from .errors import DocumentSyntaxError, InvalidGraphError, SchemaError
from .model import Edge, Node, TopologyGraph

FILE_SUFFIX = ".topo.json"

_TOP_KEYS = ("schema_version", "name", "entry", "nodes", "edges")
_NODE_KEYS = ("id", "kind", "config", "in_ports", "out_ports", "layout")


def _sorted_value(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _sorted_value(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_sorted_value(v) for v in value]
    return value


def serialize(graph: TopologyGraph) -> str:
    """Render the canonical document text for a structurally valid graph.

    Extension registration is a runtime concern and is not checked here.
    """
    report = model.validate_structure(graph)
    if not report.ok:
        first = report.issues[0]
        raise InvalidGraphError(f"cannot serialize invalid graph: {first.code}: {first.message}")

    doc = {
        "schema_version": graph.schema_version,
        "name": graph.name,
        "entry": graph.entry,
        "nodes": [_node_obj(n) for n in sorted(graph.nodes, key=lambda n: n.id)],
        "edges": [_edge_obj(e) for e in sorted(graph.edges, key=lambda e: (e.from_node, e.from_port))],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _node_obj(n: Node) -> dict:
    obj = {
        "id": n.id,
        "kind": n.kind,
        "config": _sorted_value(n.config),
        "in_ports": list(n.in_ports),
        "out_ports": list(n.out_ports),
    }
    if n.layout is not None:
        obj["layout"] = {"x": n.layout[0], "y": n.layout[1]}
    return obj


def _edge_obj(e: Edge) -> dict:
    return {
        "from": {"node": e.from_node, "port": e.from_port},
        "to": {"node": e.to_node, "port": e.to_port},
    }


def deserialize(text: str) -> TopologyGraph:
    """Parse a document, accepting non-canonical key order and whitespace."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(exc.msg, exc.lineno, exc.colno) from exc

    if not isinstance(doc, dict):
        raise SchemaError("document root must be an object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise SchemaError(f"unknown top-level key {key!r}")
    for key in _TOP_KEYS:
        if key not in doc:
            raise SchemaError(f"missing top-level key {key!r}")
    if doc["schema_version"] != 1:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']!r} (expected 1)")
    if not isinstance(doc["name"], str) or not isinstance(doc["entry"], str):
        raise SchemaError("'name' and 'entry' must be strings")
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise SchemaError("'nodes' and 'edges' must be arrays")

    nodes = [_parse_node(obj, i) for i, obj in enumerate(doc["nodes"])]
    edges = [_parse_edge(obj, i) for i, obj in enumerate(doc["edges"])]
    return TopologyGraph(
        name=doc["name"],
        nodes=tuple(nodes),
        edges=tuple(edges),
        entry=doc["entry"],
        schema_version=1,
    )


def _parse_node(obj: Any, index: int) -> Node:
    where = f"nodes[{index}]"
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be an object")
    for key in obj:
        if key not in _NODE_KEYS:
            raise SchemaError(f"{where}: unknown key {key!r}")
    for key in ("id", "kind", "config", "in_ports", "out_ports"):
        if key not in obj:
            raise SchemaError(f"{where}: missing key {key!r}")
    if not isinstance(obj["id"], str) or not isinstance(obj["kind"], str):
        raise SchemaError(f"{where}: 'id' and 'kind' must be strings")
    if not isinstance(obj["config"], dict):
        raise SchemaError(f"{where}: 'config' must be an object")
    ports: List[List[str]] = []
    for key in ("in_ports", "out_ports"):
        if not isinstance(obj[key], list) or not all(isinstance(p, str) for p in obj[key]):
            raise SchemaError(f"{where}: {key!r} must be an array of strings")
        ports.append(obj[key])
    layout = None
    if "layout" in obj:
        lay = obj["layout"]
        if not isinstance(lay, dict) or set(lay) != {"x", "y"} or any(
            isinstance(lay[k], bool) or not isinstance(lay[k], (int, float)) for k in ("x", "y")
        ):
            raise SchemaError(f"{where}: 'layout' must be an object {{x, y}} of numbers")
        layout = (lay["x"], lay["y"])
    return Node(
        id=obj["id"],
        kind=obj["kind"],
        config=obj["config"],
        in_ports=tuple(ports[0]),
        out_ports=tuple(ports[1]),
        layout=layout,
    )


def _parse_edge(obj: Any, index: int) -> Edge:
    where = f"edges[{index}]"
    if not isinstance(obj, dict) or set(obj) != {"from", "to"}:
        raise SchemaError(f"{where} must be an object with 'from' and 'to'")
    ends = []
    for key in ("from", "to"):
        end = obj[key]
        if not isinstance(end, dict) or set(end) != {"node", "port"} or not all(
            isinstance(end[k], str) for k in ("node", "port")
        ):
            raise SchemaError(f"{where}.{key} must be {{node, port}} of strings")
        ends.append((end["node"], end["port"]))
    return Edge(ends[0][0], ends[0][1], ends[1][0], ends[1][1])


def load_graph(path) -> TopologyGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize(fh.read())


def save_graph(graph: TopologyGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(graph))
