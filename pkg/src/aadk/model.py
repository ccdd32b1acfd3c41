"""Typed topology graph: nodes, ports, edges, validation, and editing.

Graphs are immutable values; every edit returns a new graph. Execution
semantics live in the engine; this module owns structure only.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .errors import (
    DuplicateEdgeError,
    DuplicateNodeError,
    UnknownNodeError,
    UnknownPortError,
)
from .values import Value

# --- node kinds ---------------------------------------------------------------

CHAIN_KINDS = ("LlmCall", "Prompt", "Code", "SubAgent", "Tool")
FLOW_KINDS = ("Start", "End", "Connector", "Branch", "ArrayLoop", "Summary", "ErrorHandler")
INTERACTION_KINDS = ("AskText", "AskChoice", "ShowMessage", "ShowChart")

BUILTIN_KINDS = frozenset(CHAIN_KINDS + FLOW_KINDS + INTERACTION_KINDS)

# The in-port closing an ArrayLoop body; edges into it are the only legal cycles.
LOOPBACK_PORT = "loopback"

_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_EXT_RE = re.compile(r"^[a-z][a-z0-9_]*/[A-Za-z_][A-Za-z0-9_]*$")


def is_extension_kind(kind: str) -> bool:
    """Extension kinds are written ``namespace/name``; builtins have no slash."""
    return "/" in kind


def is_known_kind(kind: str) -> bool:
    return kind in BUILTIN_KINDS or bool(_EXT_RE.match(kind))


def default_in_ports(kind: str) -> Tuple[str, ...]:
    if kind == "Start":
        return ()
    if kind == "ArrayLoop":
        return ("in", LOOPBACK_PORT)
    return ("in",)


def default_out_ports(kind: str, config: Optional[dict] = None) -> Tuple[str, ...]:
    if kind == "End":
        return ()
    if kind == "Branch":
        ports = ["then", "else"]
        for case in (config or {}).get("cases", []) or []:
            port = case.get("port") if isinstance(case, dict) else None
            if isinstance(port, str) and port not in ports:
                ports.append(port)
        return tuple(ports)
    if kind == "ArrayLoop":
        return ("body", "done")
    if kind == "ErrorHandler":
        return ("try", "catch")
    return ("out",)


# --- core types ---------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    config: dict = field(default_factory=dict)
    in_ports: Tuple[str, ...] = ()
    out_ports: Tuple[str, ...] = ()
    layout: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class Edge:
    from_node: str
    from_port: str
    to_node: str
    to_port: str

    @property
    def source(self) -> Tuple[str, str]:
        return (self.from_node, self.from_port)

    @property
    def target(self) -> Tuple[str, str]:
        return (self.to_node, self.to_port)


@dataclass(frozen=True)
class TopologyGraph:
    name: str
    nodes: Tuple[Node, ...] = ()
    edges: Tuple[Edge, ...] = ()
    entry: str = ""
    schema_version: int = 1

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UnknownNodeError(f"no node {node_id!r} in graph {self.name!r}")

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def node_map(self) -> Dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def edges_from(self, node_id: str) -> List[Edge]:
        return [e for e in self.edges if e.from_node == node_id]

    def edges_into(self, node_id: str) -> List[Edge]:
        return [e for e in self.edges if e.to_node == node_id]


def make_node(
    node_id: str,
    kind: str,
    config: Optional[dict] = None,
    in_ports: Optional[Iterable[str]] = None,
    out_ports: Optional[Iterable[str]] = None,
    layout: Optional[Tuple[float, float]] = None,
) -> Node:
    """Build a node, filling in the kind's default ports when unspecified."""
    config = dict(config or {})
    ins = tuple(in_ports) if in_ports is not None else default_in_ports(kind)
    outs = tuple(out_ports) if out_ports is not None else default_out_ports(kind, config)
    return Node(id=node_id, kind=kind, config=config, in_ports=ins, out_ports=outs, layout=layout)


def make_graph(name: str, nodes: Iterable[Node], edges: Iterable[Edge], entry: str = "") -> TopologyGraph:
    nodes = tuple(nodes)
    if not entry:
        starts = [n.id for n in nodes if n.kind == "Start"]
        entry = starts[0] if starts else ""
    return TopologyGraph(name=name, nodes=nodes, edges=tuple(edges), entry=entry)


# --- validation ---------------------------------------------------------------

MISSING_ENTRY = "MissingEntry"
DUPLICATE_ID = "DuplicateId"
DANGLING_EDGE = "DanglingEdge"
ILLEGAL_CYCLE = "IllegalCycle"
UNREACHABLE_NODE = "UnreachableNode"
UNKNOWN_EXTENSION = "UnknownExtension"
FANOUT_VIOLATION = "FanoutViolation"


@dataclass(frozen=True)
class Issue:
    code: str
    ref: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: Tuple[Issue, ...] = ()

    @classmethod
    def from_issues(cls, issues: List[Issue]) -> "ValidationReport":
        return cls(ok=not issues, issues=tuple(issues))


def _edge_ref(e: Edge) -> str:
    return f"{e.from_node}.{e.from_port}->{e.to_node}.{e.to_port}"


def is_loopback_edge(e: Edge, nodes: Dict[str, Node]) -> bool:
    target = nodes.get(e.to_node)
    return e.to_port == LOOPBACK_PORT and target is not None and target.kind == "ArrayLoop"


def validate(graph: TopologyGraph, extensions: Optional[Iterable[str]] = None) -> ValidationReport:
    """Structural validation; every violated invariant becomes an issue.

    ``extensions`` is the set of registered ``namespace/name`` kinds;
    extension nodes outside it are UnknownExtension.
    """
    issues: List[Issue] = []
    ext_kinds = set(extensions or ())

    nodes: Dict[str, Node] = {}
    for n in graph.nodes:
        if n.id in nodes:
            issues.append(Issue(DUPLICATE_ID, n.id, f"duplicate node id {n.id!r}"))
            continue
        nodes[n.id] = n
        if not _ID_RE.match(n.id):
            issues.append(Issue(DUPLICATE_ID, n.id, f"malformed node id {n.id!r}"))
        if len(set(n.in_ports)) != len(n.in_ports) or len(set(n.out_ports)) != len(n.out_ports):
            issues.append(Issue(DUPLICATE_ID, n.id, f"duplicate port name on node {n.id!r}"))
        if is_extension_kind(n.kind):
            if n.kind not in ext_kinds:
                issues.append(Issue(UNKNOWN_EXTENSION, n.id, f"extension kind {n.kind!r} is not registered"))
        elif n.kind not in BUILTIN_KINDS:
            issues.append(Issue(UNKNOWN_EXTENSION, n.id, f"unknown node kind {n.kind!r}"))

    starts = [n for n in graph.nodes if n.kind == "Start"]
    ends = [n for n in graph.nodes if n.kind == "End"]
    if not starts:
        issues.append(Issue(MISSING_ENTRY, "", "graph has no Start node"))
    elif len(starts) > 1:
        issues.append(Issue(MISSING_ENTRY, starts[1].id, "graph has more than one Start node"))
    elif graph.entry not in nodes or nodes[graph.entry].kind != "Start":
        issues.append(Issue(MISSING_ENTRY, graph.entry, f"entry {graph.entry!r} is not the Start node"))
    if not ends:
        issues.append(Issue(MISSING_ENTRY, "", "graph has no End node"))

    # Edge endpoint and fan checks.
    seen_sources: Set[Tuple[str, str]] = set()
    fan_in: Dict[Tuple[str, str], int] = {}
    for e in graph.edges:
        ok = True
        src = nodes.get(e.from_node)
        dst = nodes.get(e.to_node)
        if src is None or e.from_port not in src.out_ports:
            issues.append(Issue(DANGLING_EDGE, _edge_ref(e), f"edge source {e.from_node}.{e.from_port} does not exist"))
            ok = False
        if dst is None or e.to_port not in dst.in_ports:
            issues.append(Issue(DANGLING_EDGE, _edge_ref(e), f"edge target {e.to_node}.{e.to_port} does not exist"))
            ok = False
        if not ok:
            continue
        if e.source in seen_sources:
            issues.append(Issue(FANOUT_VIOLATION, _edge_ref(e), f"out-port {e.from_node}.{e.from_port} has more than one edge"))
        seen_sources.add(e.source)
        fan_in[e.target] = fan_in.get(e.target, 0) + 1

    for (node_id, port), count in sorted(fan_in.items()):
        if count > 1 and nodes[node_id].kind != "Summary":
            issues.append(Issue(FANOUT_VIOLATION, f"{node_id}.{port}", f"in-port {node_id}.{port} receives {count} edges but only Summary nodes may join"))

    # Cycle discipline: the graph without loopback edges must be acyclic,
    # and every loopback edge must close its own loop's body.
    forward_edges = [e for e in graph.edges if not is_loopback_edge(e, nodes) and e.from_node in nodes and e.to_node in nodes]
    cyclic = _nodes_on_cycles(nodes.keys(), forward_edges)
    for node_id in sorted(cyclic):
        issues.append(Issue(ILLEGAL_CYCLE, node_id, f"node {node_id!r} is on a cycle outside an ArrayLoop body"))

    for e in graph.edges:
        if not is_loopback_edge(e, nodes) or e.from_node not in nodes:
            continue
        loop = nodes[e.to_node]
        body_edge = next((b for b in graph.edges if b.from_node == loop.id and b.from_port == "body"), None)
        if body_edge is None:
            issues.append(Issue(ILLEGAL_CYCLE, _edge_ref(e), f"loopback into {loop.id!r} but its body port is unwired"))
            continue
        body_region = _reachable(body_edge.to_node, forward_edges)
        if e.from_node not in body_region:
            issues.append(Issue(ILLEGAL_CYCLE, _edge_ref(e), f"loopback into {loop.id!r} from outside its body"))

    # Reachability: forward from Start, backward to an End. ArrayLoops whose
    # done port is unwired terminate their paths, so they count as exits.
    if starts and not cyclic:
        all_edges = [e for e in graph.edges if e.from_node in nodes and e.to_node in nodes]
        from_start = _reachable(starts[0].id, all_edges)
        exits = {n.id for n in ends}
        for n in graph.nodes:
            if n.kind == "ArrayLoop" and not any(e.from_node == n.id and e.from_port == "done" for e in graph.edges):
                exits.add(n.id)
        to_end = _reachable_back(exits, all_edges)
        for n in graph.nodes:
            if n.id not in from_start:
                issues.append(Issue(UNREACHABLE_NODE, n.id, f"node {n.id!r} is not reachable from Start"))
            elif n.id not in to_end and n.kind != "End" and n.id not in exits:
                issues.append(Issue(UNREACHABLE_NODE, n.id, f"node {n.id!r} cannot reach an End node"))

    return ValidationReport.from_issues(issues)


def _reachable(start: str, edges: List[Edge]) -> Set[str]:
    succ: Dict[str, List[str]] = {}
    for e in edges:
        succ.setdefault(e.from_node, []).append(e.to_node)
    seen = {start}
    stack = [start]
    while stack:
        for nxt in succ.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _reachable_back(targets: Set[str], edges: List[Edge]) -> Set[str]:
    pred: Dict[str, List[str]] = {}
    for e in edges:
        pred.setdefault(e.to_node, []).append(e.from_node)
    seen = set(targets)
    stack = list(targets)
    while stack:
        for prv in pred.get(stack.pop(), ()):
            if prv not in seen:
                seen.add(prv)
                stack.append(prv)
    return seen


def _nodes_on_cycles(node_ids: Iterable[str], edges: List[Edge]) -> Set[str]:
    """Kahn's algorithm; whatever cannot be peeled off sits on a cycle."""
    indeg = {nid: 0 for nid in node_ids}
    succ: Dict[str, List[str]] = {nid: [] for nid in node_ids}
    for e in edges:
        succ[e.from_node].append(e.to_node)
        indeg[e.to_node] += 1
    queue = [nid for nid, d in indeg.items() if d == 0]
    remaining = set(indeg)
    while queue:
        nid = queue.pop()
        remaining.discard(nid)
        for nxt in succ[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    return remaining


# --- edits ----------------------------------------------------------------------

class UNSET:
    """Sentinel for SetConfig meaning: remove the key."""


@dataclass(frozen=True)
class AddNode:
    node: Node


@dataclass(frozen=True)
class RemoveNode:
    id: str


@dataclass(frozen=True)
class Connect:
    edge: Edge


@dataclass(frozen=True)
class Disconnect:
    edge: Edge


@dataclass(frozen=True)
class SetConfig:
    id: str
    key: str
    value: Value


@dataclass(frozen=True)
class MoveNode:
    id: str
    x: float
    y: float


GraphEdit = object  # union of the six dataclasses above


def apply_edit(graph: TopologyGraph, edit: GraphEdit) -> TopologyGraph:
    """Apply one edit, returning a new graph; the input is never mutated."""
    if isinstance(edit, AddNode):
        if graph.has_node(edit.node.id):
            raise DuplicateNodeError(f"node {edit.node.id!r} already exists")
        return replace(graph, nodes=graph.nodes + (edit.node,))

    if isinstance(edit, RemoveNode):
        if not graph.has_node(edit.id):
            raise UnknownNodeError(f"no node {edit.id!r} to remove")
        nodes = tuple(n for n in graph.nodes if n.id != edit.id)
        edges = tuple(e for e in graph.edges if edit.id not in (e.from_node, e.to_node))
        return replace(graph, nodes=nodes, edges=edges)

    if isinstance(edit, Connect):
        e = edit.edge
        for old in graph.edges:
            if old.source == e.source:
                raise DuplicateEdgeError(f"out-port {e.from_node}.{e.from_port} is already wired")
        return replace(graph, edges=graph.edges + (e,))

    if isinstance(edit, Disconnect):
        return replace(graph, edges=tuple(e for e in graph.edges if e != edit.edge))

    if isinstance(edit, SetConfig):
        node = graph.node(edit.id)
        config = dict(node.config)
        if edit.value is UNSET:
            config.pop(edit.key, None)
        else:
            config[edit.key] = edit.value
        out_ports = node.out_ports
        if node.kind == "Branch" and edit.key == "cases":
            extras = tuple(p for p in node.out_ports if p not in default_out_ports("Branch", node.config))
            out_ports = tuple(dict.fromkeys(default_out_ports("Branch", config) + extras))
        new_node = replace(node, config=config, out_ports=out_ports)
        return replace(graph, nodes=tuple(new_node if n.id == edit.id else n for n in graph.nodes))

    if isinstance(edit, MoveNode):
        node = graph.node(edit.id)
        new_node = replace(node, layout=(edit.x, edit.y))
        return replace(graph, nodes=tuple(new_node if n.id == edit.id else n for n in graph.nodes))

    raise TypeError(f"unknown edit {edit!r}")


def next_hop(graph: TopologyGraph, node_id: str, port: str) -> Optional[Tuple[str, str]]:
    """Resolve the unique edge leaving (node, out-port), or None if unwired."""
    node = graph.node(node_id)
    if port not in node.out_ports:
        raise UnknownPortError(f"node {node_id!r} has no out-port {port!r}")
    for e in graph.edges:
        if e.from_node == node_id and e.from_port == port:
            return (e.to_node, e.to_port)
    return None


def validate_structure(graph: TopologyGraph) -> ValidationReport:
    """Validation ignoring extension registration (a runtime concern):
    what serializers and generators require of a graph."""
    report = validate(graph, extensions=None)
    issues = [i for i in report.issues if i.code != UNKNOWN_EXTENSION]
    return ValidationReport.from_issues(issues)


def config_issues(node: Node) -> List[str]:
    """Kind-aware config type checks used when parsing agent scripts."""
    from . import scriptlet  # local import keeps module load light

    problems: List[str] = []
    cfg = node.config

    def check_expr(key: str) -> None:
        value = cfg.get(key)
        if value is None:
            return
        if not isinstance(value, str):
            problems.append(f"{key!r} must be a scriptlet string")
            return
        try:
            scriptlet.parse(value)
        except Exception as exc:
            problems.append(f"{key!r} does not parse: {exc}")

    def check_template(key: str) -> None:
        value = cfg.get(key)
        if value is None:
            return
        if not isinstance(value, str):
            problems.append(f"{key!r} must be a template string")
            return
        try:
            scriptlet.parse_template(value)
        except Exception as exc:
            problems.append(f"{key!r} does not parse: {exc}")

    kind = node.kind
    if kind == "Prompt":
        check_template("template")
    elif kind == "Code":
        check_expr("expr")
        external = cfg.get("external")
        if external is not None and (
            not isinstance(external, dict) or "command" not in external
        ):
            problems.append("'external' must be an object with 'command'")
    elif kind == "LlmCall":
        if not isinstance(cfg.get("model", ""), str):
            problems.append("'model' must be a string")
        check_template("system")
        check_template("prompt")
        if not isinstance(cfg.get("params", {}), dict):
            problems.append("'params' must be an object")
    elif kind == "SubAgent":
        if not isinstance(cfg.get("graph", ""), str):
            problems.append("'graph' must be a string")
    elif kind == "Tool":
        if not isinstance(cfg.get("component", ""), str):
            problems.append("'component' must be a string")
        args = cfg.get("args", {})
        if not isinstance(args, dict):
            problems.append("'args' must be an object of scriptlets")
        else:
            for key, value in args.items():
                if not isinstance(value, str):
                    problems.append(f"args[{key!r}] must be a scriptlet string")
                else:
                    try:
                        scriptlet.parse(value)
                    except Exception as exc:
                        problems.append(f"args[{key!r}] does not parse: {exc}")
    elif kind == "Branch":
        cases = cfg.get("cases", [])
        if not isinstance(cases, list):
            problems.append("'cases' must be an array")
        else:
            for i, case in enumerate(cases):
                if not isinstance(case, dict) or not isinstance(case.get("port"), str):
                    problems.append(f"cases[{i}] must be {{port, cond}}")
                    continue
                cond = case.get("cond")
                if not isinstance(cond, str):
                    problems.append(f"cases[{i}].cond must be a scriptlet string")
                    continue
                try:
                    scriptlet.parse(cond)
                except Exception as exc:
                    problems.append(f"cases[{i}].cond does not parse: {exc}")
    elif kind == "Summary":
        mode = cfg.get("mode", "collect_array")
        if mode not in ("concat_text", "collect_array", "template"):
            problems.append(f"unknown summary mode {mode!r}")
        if mode == "template":
            check_template("template")
    elif kind == "End":
        check_expr("result")
    elif kind in ("AskText", "AskChoice", "ShowMessage"):
        check_template("question" if kind.startswith("Ask") else "template")
        if kind == "AskChoice":
            options = cfg.get("options", [])
            if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
                problems.append("'options' must be an array of strings")
    return problems


def structural_equal(a: TopologyGraph, b: TopologyGraph) -> bool:
    """Graph equality independent of node/edge declaration order."""
    if (a.name, a.entry, a.schema_version) != (b.name, b.entry, b.schema_version):
        return False
    if sorted(n.id for n in a.nodes) != sorted(n.id for n in b.nodes):
        return False
    b_nodes = b.node_map()
    for n in a.nodes:
        if b_nodes[n.id] != n:
            return False
    return set(a.edges) == set(b.edges)


# --- derived structure used by the engine ---------------------------------------

def topological_order(graph: TopologyGraph) -> List[str]:
    """Kahn order over non-loopback edges, entry first, id tiebreak."""
    nodes = graph.node_map()
    forward = [e for e in graph.edges if not is_loopback_edge(e, nodes)
               and e.from_node in nodes and e.to_node in nodes]
    indeg = {nid: 0 for nid in nodes}
    succ: Dict[str, List[str]] = {nid: [] for nid in nodes}
    for e in forward:
        succ[e.from_node].append(e.to_node)
        indeg[e.to_node] += 1
    heap = sorted(nid for nid, d in indeg.items() if d == 0 and nid != graph.entry)
    order: List[str] = []
    if graph.entry in indeg:
        order.append(graph.entry)
        for nxt in succ[graph.entry]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
        heapq.heapify(heap)
    else:
        heapq.heapify(heap)
    done = set(order)
    while heap:
        nid = heapq.heappop(heap)
        if nid in done:
            continue
        done.add(nid)
        order.append(nid)
        for nxt in succ[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    # Cyclic leftovers (invalid graphs) appended deterministically.
    order.extend(sorted(nid for nid in nodes if nid not in done))
    return order


def try_region(graph: TopologyGraph, handler_id: str) -> Set[str]:
    """Nodes guarded by an ErrorHandler: reachable from its try port while
    never entering the catch continuation."""
    handler = graph.node(handler_id)
    if handler.kind != "ErrorHandler":
        return set()
    try_hop = next_hop(graph, handler_id, "try")
    if try_hop is None:
        return set()
    catch_hop = next_hop(graph, handler_id, "catch")
    blocked = {handler_id}
    if catch_hop is not None:
        blocked.add(catch_hop[0])
    succ: Dict[str, List[str]] = {}
    for e in graph.edges:
        succ.setdefault(e.from_node, []).append(e.to_node)
    region: Set[str] = set()
    stack = [try_hop[0]]
    while stack:
        nid = stack.pop()
        if nid in region or nid in blocked:
            continue
        region.add(nid)
        stack.extend(succ.get(nid, ()))
    return region


def handler_regions(graph: TopologyGraph) -> Dict[str, Set[str]]:
    return {n.id: try_region(graph, n.id) for n in graph.nodes if n.kind == "ErrorHandler"}


def innermost_handler(regions: Dict[str, Set[str]], node_id: str) -> Optional[str]:
    """The handler whose try region contains the node and is nested deepest."""
    containing = [h for h, region in regions.items() if node_id in region]
    if not containing:
        return None
    best = containing[0]
    for h in containing[1:]:
        if h in regions[best]:
            best = h
    return best
