"""Two-way sync between a topology graph and its agent-script text form.

The script (`.agent.aad`) is an anchored line format: a header, one block
per node, one wire line per edge. Anything outside those anchors is margin
text owned by the script author and preserved byte-for-byte by sync.

Layout (`at=`) is owned by the graph side: canvas moves regenerate into the
script, and hand edits to `at=` are overwritten. Everything else is owned
by the text side; with a recorded ancestor, sync performs a genuine
three-way merge and reports conflicts (text still wins).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from . import model
from .errors import InvalidGraphError, SchemaError
from .errors import DocumentSyntaxError as ScriptParseError
from .model import (
    UNSET,
    AddNode,
    Connect,
    Disconnect,
    Edge,
    MoveNode,
    Node,
    RemoveNode,
    SetConfig,
    TopologyGraph,
    make_graph,
)

FILE_SUFFIX = ".agent.aad"

_HEADER_RE = re.compile(r'^#aad agent (".*") v1$')
_NODE_RE = re.compile(
    r"^#aad node ([A-Za-z_][A-Za-z0-9_]*) kind=(\S+)"
    r"(?: at=\(([^)]*)\))?(?: in=\(([^)]*)\))?(?: out=\(([^)]*)\))?$"
)
_CONFIG_RE = re.compile(r"^  ([A-Za-z_][A-Za-z0-9_]*): (.*)$")
_WIRE_RE = re.compile(
    r"^#aad wire ([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)"
    r" -> ([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)$"
)


# --- document model ----------------------------------------------------------------

@dataclass
class MarginEntry:
    lines: List[str]


@dataclass
class BlockEntry:
    node: Node
    key_order: List[str] = field(default_factory=list)


@dataclass
class WireEntry:
    edge: Edge


DocEntry = Union[MarginEntry, BlockEntry, WireEntry]


@dataclass
class Document:
    name: str
    entries: List[DocEntry] = field(default_factory=list)

    def blocks(self) -> Dict[str, BlockEntry]:
        return {e.node.id: e for e in self.entries if isinstance(e, BlockEntry)}

    def graph(self) -> TopologyGraph:
        nodes = [e.node for e in self.entries if isinstance(e, BlockEntry)]
        edges = [e.edge for e in self.entries if isinstance(e, WireEntry)]
        return make_graph(self.name, nodes, edges)

    def render(self) -> str:
        lines = [f"#aad agent {json.dumps(self.name, ensure_ascii=False)} v1"]
        for entry in self.entries:
            if isinstance(entry, MarginEntry):
                lines.extend(entry.lines)
            elif isinstance(entry, BlockEntry):
                lines.extend(_block_lines(entry))
            else:
                e = entry.edge
                lines.append(f"#aad wire {e.from_node}.{e.from_port} -> {e.to_node}.{e.to_port}")
        return "\n".join(lines) + "\n"


def _num_text(value) -> str:
    return json.dumps(value, allow_nan=False)


def _block_lines(entry: BlockEntry) -> List[str]:
    node = entry.node
    head = f"#aad node {node.id} kind={node.kind}"
    if node.layout is not None:
        head += f" at=({_num_text(node.layout[0])},{_num_text(node.layout[1])})"
    if node.in_ports != model.default_in_ports(node.kind):
        head += f" in=({','.join(node.in_ports)})"
    if node.out_ports != model.default_out_ports(node.kind, node.config):
        head += f" out=({','.join(node.out_ports)})"
    lines = [head]
    keys = [k for k in entry.key_order if k in node.config]
    keys += sorted(k for k in node.config if k not in keys)
    for key in keys:
        lines.extend(_config_lines(key, node.config[key]))
    lines.append("#aad end")
    return lines


def _config_lines(key: str, value) -> List[str]:
    if isinstance(value, str) and "\n" in value:
        delim = "EOT"
        n = 0
        while delim in value.split("\n"):
            n += 1
            delim = f"EOT{n}"
        return [f"  {key}: <<{delim}", *value.split("\n"), delim]
    return [f"  {key}: " + json.dumps(value, sort_keys=True, separators=(", ", ": "), ensure_ascii=False, allow_nan=False)]


# --- parsing -----------------------------------------------------------------------

def parse_document(text: str) -> Document:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ScriptParseError("empty script", 1, 1)
    header = _HEADER_RE.match(lines[0])
    if not header:
        raise ScriptParseError('expected header: #aad agent "<name>" v1', 1, 1)
    try:
        name = json.loads(header.group(1))
    except ValueError:
        raise ScriptParseError("malformed agent name", 1, 1)

    doc = Document(name=name)
    seen: Dict[str, int] = {}
    margin: List[str] = []
    i = 1

    def flush_margin() -> None:
        if margin:
            doc.entries.append(MarginEntry(lines=list(margin)))
            margin.clear()

    while i < len(lines):
        line = lines[i]
        lineno = i + 1
        if line.startswith("#aad node "):
            flush_margin()
            entry, i = _parse_block(lines, i)
            if entry.node.id in seen:
                raise SchemaError(f"duplicate node id {entry.node.id!r}", lineno)
            problems = model.config_issues(entry.node)
            if problems:
                raise SchemaError(f"node {entry.node.id!r}: {problems[0]}", lineno)
            seen[entry.node.id] = lineno
            doc.entries.append(entry)
            continue
        if line.startswith("#aad wire "):
            match = _WIRE_RE.match(line)
            if not match:
                raise SchemaError("malformed wire line", lineno)
            for ref in (match.group(1), match.group(3)):
                if ref not in seen:
                    raise SchemaError(f"wire references undeclared node {ref!r}", lineno)
            flush_margin()
            doc.entries.append(WireEntry(Edge(*match.groups())))
            i += 1
            continue
        if line.startswith("#aad"):
            raise ScriptParseError(f"unexpected directive {line.split()[0] if line.split() else line!r}", lineno, 1)
        margin.append(line)
        i += 1
    flush_margin()
    return doc


def _parse_block(lines: List[str], start: int) -> Tuple[BlockEntry, int]:
    lineno = start + 1
    match = _NODE_RE.match(lines[start])
    if not match:
        raise ScriptParseError("malformed node line", lineno, 1)
    node_id, kind, at_text, in_text, out_text = match.groups()
    if not model.is_known_kind(kind):
        raise SchemaError(f"unknown node kind {kind!r}", lineno)
    layout = None
    if at_text is not None:
        parts = at_text.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            coords = [json.loads(p) for p in parts]
            if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in coords):
                raise ValueError
        except ValueError:
            raise ScriptParseError(f"malformed at=({at_text})", lineno, 1)
        layout = (coords[0], coords[1])

    config: Dict[str, object] = {}
    key_order: List[str] = []
    i = start + 1
    while True:
        if i >= len(lines):
            raise ScriptParseError(f"node {node_id!r} has no matching #aad end", lineno, 1)
        line = lines[i]
        if line == "#aad end":
            i += 1
            break
        cfg = _CONFIG_RE.match(line)
        if not cfg:
            raise ScriptParseError(f"expected config line or #aad end in node {node_id!r}", i + 1, 1)
        key, raw = cfg.group(1), cfg.group(2)
        if key in config:
            raise SchemaError(f"duplicate config key {key!r} in node {node_id!r}", i + 1)
        if raw.startswith("<<"):
            delim = raw[2:]
            if not delim:
                raise ScriptParseError("heredoc needs a delimiter", i + 1, 1)
            body: List[str] = []
            i += 1
            while i < len(lines) and lines[i] != delim:
                body.append(lines[i])
                i += 1
            if i >= len(lines):
                raise ScriptParseError(f"unterminated heredoc {delim!r}", lineno, 1)
            config[key] = "\n".join(body)
            i += 1
        else:
            try:
                config[key] = json.loads(raw)
            except ValueError:
                raise ScriptParseError(f"config value for {key!r} is not valid JSON", i + 1, 1)
            i += 1
        key_order.append(key)

    in_ports = tuple(p for p in in_text.split(",") if p) if in_text is not None else model.default_in_ports(kind)
    out_ports = tuple(p for p in out_text.split(",") if p) if out_text is not None else model.default_out_ports(kind, config)
    node = Node(id=node_id, kind=kind, config=config, in_ports=in_ports, out_ports=out_ports, layout=layout)
    return BlockEntry(node=node, key_order=key_order), i


def parse(script: str) -> TopologyGraph:
    """Reconstruct the graph from blocks and wires; margin text is ignored."""
    return parse_document(script).graph()


# --- generation --------------------------------------------------------------------

def generate(graph: TopologyGraph) -> str:
    """Deterministic script for a valid graph: blocks in topological order
    (entry first, id tiebreak), wires sorted by source."""
    report = model.validate_structure(graph)
    if not report.ok:
        first = report.issues[0]
        raise InvalidGraphError(f"cannot generate script for invalid graph: {first.code}: {first.message}")
    return build_document(graph).render()


def build_document(graph: TopologyGraph) -> Document:
    nodes = graph.node_map()
    doc = Document(name=graph.name)
    for node_id in model.topological_order(graph):
        node = nodes[node_id]
        doc.entries.append(BlockEntry(node=node, key_order=sorted(node.config)))
    for edge in sorted(graph.edges, key=lambda e: (e.from_node, e.from_port)):
        doc.entries.append(WireEntry(edge))
    return doc


# --- diffing -----------------------------------------------------------------------

def diff_graphs(old: TopologyGraph, new: TopologyGraph, include_layout: bool = False) -> List[object]:
    """GraphEdits that rewrite `old` into `new` (structure and config)."""
    edits: List[object] = []
    old_nodes, new_nodes = old.node_map(), new.node_map()

    removed = sorted(set(old_nodes) - set(new_nodes))
    added = sorted(set(new_nodes) - set(old_nodes))
    # Kind or port changes are remove+add (the edit vocabulary has no rename).
    for node_id in sorted(set(old_nodes) & set(new_nodes)):
        o, n = old_nodes[node_id], new_nodes[node_id]
        if o.kind != n.kind or o.in_ports != n.in_ports or o.out_ports != n.out_ports:
            removed.append(node_id)
            added.append(node_id)
    for node_id in sorted(removed):
        edits.append(RemoveNode(node_id))
    for node_id in sorted(added):
        edits.append(AddNode(new_nodes[node_id]))

    for node_id in sorted(set(old_nodes) & set(new_nodes)):
        if node_id in added:
            continue
        o, n = old_nodes[node_id], new_nodes[node_id]
        for key in sorted(set(o.config) | set(n.config)):
            if key not in n.config:
                edits.append(SetConfig(node_id, key, UNSET))
            elif key not in o.config or o.config[key] != n.config[key]:
                edits.append(SetConfig(node_id, key, n.config[key]))
        if include_layout and o.layout != n.layout and n.layout is not None:
            edits.append(MoveNode(node_id, n.layout[0], n.layout[1]))

    old_edges, new_edges = set(old.edges), set(new.edges)
    survivors = set(new_nodes) - set(added)
    for edge in sorted(old_edges - new_edges, key=lambda e: (e.from_node, e.from_port)):
        if edge.from_node in survivors and edge.to_node in survivors:
            edits.append(Disconnect(edge))
    for edge in sorted(new_edges - old_edges, key=lambda e: (e.from_node, e.from_port)):
        edits.append(Connect(edge))
    return edits


def apply_edits(graph: TopologyGraph, edits: List[object]) -> TopologyGraph:
    """Apply a diff tolerantly: RemoveNode drops incident edges, so a later
    Disconnect/Connect touching a removed node is skipped."""
    for edit in edits:
        try:
            graph = model.apply_edit(graph, edit)
        except model.UnknownNodeError:
            continue
    return graph


# --- sync --------------------------------------------------------------------------

FROM_TEXT = "FromText"
FROM_GRAPH = "FromGraph"


@dataclass(frozen=True)
class TextRegion:
    """A script-side rewrite performed by sync."""

    node: str
    field: str  # "at", a config key, "block", or "wire"
    action: str  # "rewrite", "add", "remove"


@dataclass(frozen=True)
class Change:
    origin: str
    edit: object  # GraphEdit (FromText) or TextRegion (FromGraph)


@dataclass(frozen=True)
class Conflict:
    node: str
    key: str
    graph_value: object
    text_value: object


@dataclass
class SyncResult:
    graph: TopologyGraph
    script: str
    changes: List[Change]
    conflicts: List[Conflict]


def sync(base: TopologyGraph, edited_script: str, ancestor: Optional[TopologyGraph] = None) -> SyncResult:
    """Reconcile the graph side (`base`) with an edited script.

    Text owns structure and config; the graph owns layout. With an
    ``ancestor`` (the state at last sync) both sides' edits are detected:
    non-overlapping graph edits flow into the script, and overlapping
    config keys become conflicts resolved in the text's favor.
    """
    doc = parse_document(edited_script)
    text_graph = doc.graph()
    anc = ancestor if ancestor is not None else base

    text_edits = diff_graphs(anc, text_graph)
    graph_edits = diff_graphs(anc, base) if ancestor is not None else []

    conflicts: List[Conflict] = []
    winning_graph_edits: List[object] = []
    text_set = {(e.id, e.key): e.value for e in text_edits if isinstance(e, SetConfig)}
    text_removed = {e.id for e in text_edits if isinstance(e, RemoveNode)}
    text_added = {e.node.id for e in text_edits if isinstance(e, AddNode)}
    text_edges = {e.edge for e in text_edits if isinstance(e, (Connect, Disconnect))}
    for edit in graph_edits:
        if isinstance(edit, SetConfig):
            if edit.id in text_removed or edit.id in text_added:
                continue
            if (edit.id, edit.key) in text_set:
                text_value = text_set[(edit.id, edit.key)]
                if text_value != edit.value:
                    gv = None if edit.value is UNSET else edit.value
                    tv = None if text_value is UNSET else text_value
                    conflicts.append(Conflict(edit.id, edit.key, gv, tv))
                continue
            winning_graph_edits.append(edit)
        elif isinstance(edit, (RemoveNode, AddNode)):
            target = edit.id if isinstance(edit, RemoveNode) else edit.node.id
            if target in text_removed or target in text_added:
                continue
            winning_graph_edits.append(edit)
        elif isinstance(edit, (Connect, Disconnect)):
            if edit.edge in text_edges:
                continue
            winning_graph_edits.append(edit)

    merged = apply_edits(text_graph, winning_graph_edits)

    # Layout always follows the graph side for nodes the graph knows.
    base_nodes = base.node_map()
    layout_fixes: List[str] = []
    fixed_nodes = []
    for node in merged.nodes:
        src = base_nodes.get(node.id)
        if src is not None and src.layout != node.layout:
            fixed_nodes.append(model.Node(
                id=node.id, kind=node.kind, config=node.config,
                in_ports=node.in_ports, out_ports=node.out_ports, layout=src.layout,
            ))
            layout_fixes.append(node.id)
        else:
            fixed_nodes.append(node)
    merged = TopologyGraph(
        name=merged.name, nodes=tuple(fixed_nodes), edges=merged.edges,
        entry=merged.entry, schema_version=merged.schema_version,
    )

    script, regions = _rebuild_script(doc, merged)

    changes = [Change(FROM_TEXT, e) for e in diff_graphs(base, merged)]
    changes += [Change(FROM_GRAPH, r) for r in regions]
    return SyncResult(graph=merged, script=script, changes=changes, conflicts=conflicts)


def _rebuild_script(doc: Document, merged: TopologyGraph) -> Tuple[str, List[TextRegion]]:
    merged_nodes = merged.node_map()
    merged_edges = set(merged.edges)
    regions: List[TextRegion] = []

    entries: List[DocEntry] = []
    seen_nodes = set()
    seen_edges = set()
    last_block = -1
    for entry in doc.entries:
        if isinstance(entry, BlockEntry):
            node_id = entry.node.id
            if node_id not in merged_nodes:
                regions.append(TextRegion(node_id, "block", "remove"))
                continue
            new_node = merged_nodes[node_id]
            if new_node != entry.node:
                for key in set(new_node.config) | set(entry.node.config):
                    if entry.node.config.get(key) != new_node.config.get(key):
                        regions.append(TextRegion(node_id, key, "rewrite"))
                if new_node.layout != entry.node.layout:
                    regions.append(TextRegion(node_id, "at", "rewrite"))
            entries.append(BlockEntry(node=new_node, key_order=entry.key_order))
            seen_nodes.add(node_id)
            last_block = len(entries) - 1
        elif isinstance(entry, WireEntry):
            if entry.edge not in merged_edges or entry.edge.from_node not in merged_nodes:
                regions.append(TextRegion(entry.edge.from_node, "wire", "remove"))
                continue
            entries.append(entry)
            seen_edges.add(entry.edge)
        else:
            entries.append(entry)

    new_blocks = [
        BlockEntry(node=merged_nodes[nid], key_order=sorted(merged_nodes[nid].config))
        for nid in model.topological_order(merged)
        if nid not in seen_nodes
    ]
    for block in new_blocks:
        regions.append(TextRegion(block.node.id, "block", "add"))
    if new_blocks:
        entries[last_block + 1:last_block + 1] = new_blocks

    for edge in sorted(merged_edges - seen_edges, key=lambda e: (e.from_node, e.from_port)):
        entries.append(WireEntry(edge))
        regions.append(TextRegion(edge.from_node, "wire", "add"))

    return Document(name=merged.name, entries=entries).render(), regions
