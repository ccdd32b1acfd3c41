"""Graph execution: sessions, frames, node-by-node stepping, suspension.

One step executes exactly one node. Entering a SubAgent or an ArrayLoop
iteration counts as the push step; the container node's trace enter stays
open until its sub-frames finish. Values travel along edges as deliveries
queued per frame; Summary nodes buffer deliveries until every wired in-edge
has arrived.
"""

from __future__ import annotations

import json
import subprocess
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from . import model, scriptlet, trace
from .errors import (
    AadkError,
    EvalError,
    IllegalStateError,
    InvalidChoiceError,
    InvalidGraphError,
    NodeFailure,
    UnknownSessionError,
)
from .model import TopologyGraph, next_hop
from .values import Value, display_str

READY = "Ready"
RUNNING = "Running"
PAUSED = "PausedBreakpoint"
AWAITING_INPUT = "AwaitingInput"
FINISHED = "Finished"
FAILED = "Failed"

TERMINAL = (FINISHED, FAILED)

ROOT = "Root"
SUBAGENT = "SubAgent"
LOOP_BODY = "LoopBody"


@dataclass
class StepOutcome:
    kind: str  # advanced | paused | needs_input | done | error
    node: Optional[str] = None
    value: Value = None
    error: Optional[dict] = None

    ADVANCED = "advanced"
    PAUSED = "paused"
    NEEDS_INPUT = "needs_input"
    DONE = "done"
    ERROR = "error"


@dataclass
class _LoopState:
    items: list
    index: int = 0
    results: list = field(default_factory=list)


@dataclass
class Frame:
    kind: str
    graph: TopologyGraph
    env: Dict[str, Value]
    owner_node: Optional[str] = None  # SubAgent/ArrayLoop node in the parent frame
    queue: deque = field(default_factory=deque)  # (node_id, in_port, value)
    joins: Dict[str, Dict[model.Edge, Value]] = field(default_factory=dict)
    loops: Dict[str, _LoopState] = field(default_factory=dict)
    result: Value = None
    completed: bool = False


class RunFailed(AadkError):
    """run_to_completion on a session that ended Failed."""

    code = "run-failed"

    def __init__(self, record: dict, session: "Session"):
        super().__init__(f"{record.get('kind')} at {record.get('node')}: {record.get('message')}")
        self.record = record
        self.session = session


class Session:
    """One running instance of a graph, steered step by step."""

    def __init__(
        self,
        graph: TopologyGraph,
        input_value: Value,
        *,
        breakpoints: Optional[Set[str]] = None,
        gateway=None,
        graph_lib: Optional[Dict[str, TopologyGraph]] = None,
        registry=None,
        session_id: Optional[str] = None,
    ):
        self.id = session_id or str(uuid.uuid4())
        self.graph = graph
        self.input = input_value
        self.status = READY
        self.breakpoints: Set[str] = set(breakpoints or ())
        self.gateway = gateway
        self.graph_lib = graph_lib or {}
        self.registry = registry
        self.trace = trace.TraceBuffer()
        self.frames: List[Frame] = []
        self.usage = {
            "live_calls": 0, "mimic_calls": 0,
            "prompt_tokens": 0, "completion_tokens": 0, "saved_tokens": 0,
        }
        self.started_at = trace.now_ms()
        self.ended_at: Optional[int] = None
        self.result: Value = None
        self.error: Optional[dict] = None
        self.paused_node: Optional[str] = None
        self.pending_input: Optional[dict] = None  # {node, question, options?}
        self.call_index = 0
        self.plugin_scratch: Dict[str, dict] = {}
        self._regions_cache: Dict[int, Dict[str, Set[str]]] = {}
        self._body_region_cache: Dict[Tuple[int, str], Set[str]] = {}
        self._validated_graphs: Set[int] = {id(graph)}

        self.trace.emit(trace.SESSION_START, None, 0, {"graph": graph.name, "input": input_value})
        # The root frame is implicit in the trace: no push/pop events for it.
        self.frames.append(Frame(kind=ROOT, graph=graph, env={"payload": input_value}))
        self.frames[-1].queue.append((graph.entry, "", input_value))

    # -- frame helpers ---------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.frames)

    MAX_FRAME_DEPTH = 128  # guards runaway SubAgent recursion

    def _push_frame(self, kind: str, graph: TopologyGraph, env: Dict[str, Value], owner: Optional[str]) -> Frame:
        if len(self.frames) >= self.MAX_FRAME_DEPTH:
            raise NodeFailure("RecursionLimit", f"frame depth exceeds {self.MAX_FRAME_DEPTH}", owner or "")
        frame = Frame(kind=kind, graph=graph, env=env, owner_node=owner)
        self.frames.append(frame)
        data = {"kind": kind}
        if owner:
            data["node"] = owner
        self.trace.emit(trace.FRAME_PUSH, owner, self.depth, data)
        for key in sorted(env):
            self.trace.emit(trace.VAR_UPDATE, owner, self.depth, {"key": key, "value": env[key]})
        return frame

    def _regions(self, graph: TopologyGraph) -> Dict[str, Set[str]]:
        key = id(graph)
        if key not in self._regions_cache:
            regions = {}
            for node in graph.nodes:
                if node.kind == "ErrorHandler" and next_hop(graph, node.id, "catch") is not None:
                    regions[node.id] = model.try_region(graph, node.id)
            self._regions_cache[key] = regions
        return self._regions_cache[key]

    def _body_region(self, graph: TopologyGraph, loop_id: str) -> Set[str]:
        key = (id(graph), loop_id)
        if key not in self._body_region_cache:
            hop = next_hop(graph, loop_id, "body")
            if hop is None or hop[0] == loop_id:
                region: Set[str] = set()
            else:
                nodes = graph.node_map()
                forward = [e for e in graph.edges if not model.is_loopback_edge(e, nodes)]
                region = model._reachable(hop[0], forward)
            self._body_region_cache[key] = region
        return self._body_region_cache[key]

    # -- public operations -------------------------------------------------------

    def peek_next(self) -> Optional[str]:
        """The node the next step would execute, or None at a dead end/terminal."""
        if self.status in TERMINAL or not self.frames:
            return None
        queue = self.frames[-1].queue
        return queue[0][0] if queue else None

    def step(self) -> StepOutcome:
        if self.status in TERMINAL:
            raise IllegalStateError(f"session is {self.status}")
        if self.status == AWAITING_INPUT:
            raise IllegalStateError("session is awaiting input; call provide_input")

        frame = self.frames[-1]
        if not frame.queue:
            # A wired path dropped its value (unwired port or starved join).
            failure = NodeFailure("DeadEnd", "execution stalled with no deliverable work", "")
            return self._fail_session(failure.record())

        node_id = frame.queue[0][0]
        if node_id in self.breakpoints and not (self.status == PAUSED and self.paused_node == node_id):
            self.status = PAUSED
            self.paused_node = node_id
            self.trace.emit(trace.BREAKPOINT_HIT, node_id, self.depth)
            return StepOutcome(StepOutcome.PAUSED, node=node_id)

        self.status = RUNNING
        self.paused_node = None
        node_id, port, value = frame.queue.popleft()
        try:
            return self._execute(frame, node_id, port, value)
        except NodeFailure as failure:
            failure.node = failure.node or node_id
            return self._handle_failure(node_id, failure)

    def provide_input(self, value: Value) -> StepOutcome:
        if self.status != AWAITING_INPUT or not self.pending_input:
            raise IllegalStateError("session is not awaiting input")
        spec = self.pending_input
        options = spec.get("options")
        if options is not None and value not in options:
            raise InvalidChoiceError(f"answer must be one of {options!r}")
        node_id = spec["node"]
        self.pending_input = None
        self.status = RUNNING
        frame = self.frames[-1]
        self.trace.emit(trace.NODE_EXIT, node_id, self.depth, {"output": value})
        try:
            self._route(frame, node_id, [("out", value)])
            return self._settle(node_id)
        except NodeFailure as failure:
            failure.node = failure.node or node_id
            return self._handle_failure(node_id, failure)

    def run_to_completion(
        self,
        input_provider: Optional[Callable[[dict], Value]] = None,
        honor_breakpoints: bool = False,
    ) -> Value:
        if self.status not in (READY, RUNNING, PAUSED):
            raise IllegalStateError(f"cannot run a session in state {self.status}")
        while True:
            if self.status == AWAITING_INPUT:
                if input_provider is None:
                    raise IllegalStateError("session needs input but no input provider was given")
                self.provide_input(input_provider(dict(self.pending_input)))
                continue
            outcome = self.step()
            if outcome.kind == StepOutcome.DONE:
                return outcome.value
            if outcome.kind == StepOutcome.ERROR:
                raise RunFailed(outcome.error, self)
            if outcome.kind == StepOutcome.PAUSED and honor_breakpoints:
                raise IllegalStateError(f"paused at breakpoint {outcome.node}")

    # -- execution ----------------------------------------------------------------

    def _execute(self, frame: Frame, node_id: str, port: str, value: Value) -> StepOutcome:
        node = frame.graph.node(node_id)
        self.trace.emit(trace.NODE_ENTER, node_id, self.depth, {"input": value})
        kind = node.kind

        if kind in ("AskText", "AskChoice"):
            spec = {"node": node_id, "question": self._render(node.config.get("question", ""), frame.env, value, node_id)}
            if kind == "AskChoice":
                options = node.config.get("options", [])
                if not options:
                    raise NodeFailure("BadConfig", "AskChoice needs non-empty options", node_id)
                spec["options"] = list(options)
            self.pending_input = spec
            self.status = AWAITING_INPUT
            return StepOutcome(StepOutcome.NEEDS_INPUT, node=node_id)

        if kind == "SubAgent":
            sub = self._resolve_graph(node.config.get("graph", ""), node_id)
            child = self._push_frame(SUBAGENT, sub, {"payload": value}, owner=node_id)
            child.queue.append((sub.entry, "", value))
            return self._settle(node_id)

        if kind == "ArrayLoop":
            if not isinstance(value, list):
                raise NodeFailure("TypeMismatch", "ArrayLoop input must be an array", node_id)
            if not value:
                self.trace.emit(trace.NODE_EXIT, node_id, self.depth, {"output": []})
                self._route(frame, node_id, [("done", [])])
                return self._settle(node_id)
            frame.loops[node_id] = _LoopState(items=list(value))
            self._start_iteration(frame, node_id)
            return self._settle(node_id)

        outputs = self._run_simple(frame, node, value)
        out_value = outputs[0][1] if outputs else None
        self.trace.emit(trace.NODE_EXIT, node_id, self.depth, {"output": out_value})
        if kind == "End":
            self._complete_frame(out_value)
        else:
            self._route(frame, node_id, outputs)
        return self._settle(node_id)

    def _run_simple(self, frame: Frame, node: model.Node, value: Value) -> List[Tuple[str, Value]]:
        kind, cfg, node_id = node.kind, node.config, node.id

        if kind == "Start":
            return [("out", value)]
        if kind == "Connector":
            return [(p, value) for p in node.out_ports]
        if kind == "End":
            return [("", self._eval(cfg.get("result", "payload"), frame.env, value, node_id))]
        if kind == "Prompt":
            return [("out", self._render(cfg.get("template", ""), frame.env, value, node_id))]
        if kind == "Code":
            if "external" in cfg:
                return [("out", self._run_external(cfg["external"], frame.env, value, node_id))]
            return [("out", self._eval(cfg.get("expr", "payload"), frame.env, value, node_id))]
        if kind == "LlmCall":
            return [("out", self._run_llm(cfg, frame.env, value, node_id))]
        if kind == "Branch":
            chosen = "else"
            for case in cfg.get("cases", []):
                if self._eval_bool(case.get("cond", "false"), frame.env, value, node_id):
                    chosen = case.get("port", "else")
                    break
            if chosen not in node.out_ports or next_hop(frame.graph, node_id, chosen) is None:
                raise NodeFailure("RouteMissing", f"branch routed to unwired port {chosen!r}", node_id)
            return [(chosen, value)]
        if kind == "Summary":
            return [("out", self._merge_summary(cfg, frame.env, value, node_id))]
        if kind == "ErrorHandler":
            return [("try", value)]
        if kind == "ShowMessage":
            text = self._render(cfg.get("template", "{payload}"), frame.env, value, node_id)
            self.trace.emit(trace.DISPLAY, node_id, self.depth, {"widget": "message", "text": text})
            return [("out", value)]
        if kind == "ShowChart":
            self.trace.emit(trace.DISPLAY, node_id, self.depth, {
                "widget": "chart", "title": cfg.get("title", ""), "data": value,
            })
            return [("out", value)]
        if kind == "Tool":
            component = cfg.get("component", "")
            args = {
                key: self._eval(expr, frame.env, value, node_id)
                for key, expr in sorted(cfg.get("args", {}).items())
            }
            return [("out", self._invoke_component(component, args, value, node_id))]
        if model.is_extension_kind(kind):
            return [("out", self._invoke_component(kind, dict(cfg), value, node_id))]
        raise NodeFailure("BadConfig", f"kind {kind!r} is not executable", node_id)

    # -- node semantics helpers ------------------------------------------------------

    def _eval_env(self, env: Dict[str, Value], value: Value) -> Dict[str, Value]:
        merged = dict(env)
        merged["payload"] = value
        return merged

    def _eval(self, source: str, env: Dict[str, Value], value: Value, node_id: str) -> Value:
        try:
            return scriptlet.run(source, self._eval_env(env, value))
        except (EvalError, scriptlet.ScriptletParseError) as exc:
            kind = exc.kind if isinstance(exc, EvalError) else "ParseError"
            raise NodeFailure(kind, str(exc), node_id)

    def _eval_bool(self, source: str, env: Dict[str, Value], value: Value, node_id: str) -> bool:
        result = self._eval(source, env, value, node_id)
        if not isinstance(result, bool):
            raise NodeFailure("TypeMismatch", "branch condition must return a boolean", node_id)
        return result

    def _render(self, template: str, env: Dict[str, Value], value: Value, node_id: str) -> str:
        try:
            return scriptlet.render(template, self._eval_env(env, value))
        except (EvalError, scriptlet.ScriptletParseError) as exc:
            kind = exc.kind if isinstance(exc, EvalError) else "ParseError"
            raise NodeFailure(kind, str(exc), node_id)

    def _merge_summary(self, cfg: dict, env: Dict[str, Value], values: Value, node_id: str) -> Value:
        mode = cfg.get("mode", "collect_array")
        if mode == "collect_array":
            return list(values)
        if mode == "concat_text":
            parts: List[str] = []
            for v in values:
                if isinstance(v, list):
                    parts.extend(display_str(item) for item in v)
                else:
                    parts.append(display_str(v))
            return "\n".join(parts)
        if mode == "template":
            merged = dict(env)
            merged["values"] = list(values)
            return self._render(cfg.get("template", ""), merged, list(values), node_id)
        raise NodeFailure("BadConfig", f"unknown summary mode {mode!r}", node_id)

    def _run_llm(self, cfg: dict, env: Dict[str, Value], value: Value, node_id: str) -> str:
        if self.gateway is None:
            raise NodeFailure("NoGateway", "session has no LLM gateway", node_id)
        messages = []
        system = cfg.get("system")
        if system:
            messages.append({"role": "system", "content": self._render(system, env, value, node_id)})
        messages.append({"role": "user", "content": self._render(cfg.get("prompt", "{payload}"), env, value, node_id)})
        request = {
            "model": cfg.get("model", "default"),
            "messages": messages,
            "params": dict(cfg.get("params", {})),
            "origin": {"session": self.id, "node": node_id, "call_index": self.call_index},
        }
        self.call_index += 1
        try:
            response, accounting = self.gateway.complete(request)
        except AadkError as exc:
            raise NodeFailure("LlmFailed", str(exc), node_id)
        for key, delta in accounting.items():
            self.usage[key] += delta
        self.trace.emit(trace.LLM_CALL, node_id, self.depth, {
            "model": request["model"],
            "source": response["source"],
            "usage": response["usage"],
        })
        return response["content"]

    def _run_external(self, external: dict, env: Dict[str, Value], value: Value, node_id: str) -> Value:
        command = external.get("command")
        timeout_ms = external.get("timeout_ms", 10000)
        if isinstance(command, str):
            command = [command]
        if not isinstance(command, list) or not command:
            raise NodeFailure("BadConfig", "external.command must be a command list", node_id)
        payload = json.dumps({"env": self._eval_env(env, value), "payload": value}, ensure_ascii=False)
        try:
            proc = subprocess.run(
                command, input=payload.encode("utf-8"),
                capture_output=True, timeout=timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            raise NodeFailure("ExternalFailed", f"external command timed out after {timeout_ms}ms", node_id)
        except OSError as exc:
            raise NodeFailure("ExternalFailed", f"cannot run external command: {exc}", node_id)
        if proc.returncode != 0:
            raise NodeFailure("ExternalFailed", f"external command exited {proc.returncode}", node_id)
        try:
            return json.loads(proc.stdout.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise NodeFailure("ExternalFailed", "external command produced invalid JSON", node_id)

    def _invoke_component(self, component: str, config: dict, value: Value, node_id: str) -> Value:
        if self.registry is None:
            raise NodeFailure("UnknownComponent", "session has no plugin registry", node_id)
        if "/" not in component:
            raise NodeFailure("BadConfig", f"component reference {component!r} must be namespace/name", node_id)
        namespace, name = component.split("/", 1)
        scratch = self.plugin_scratch.setdefault(namespace, {})
        ctx = {"session": self.id, "node": node_id, "scratch": scratch}
        try:
            return self.registry.invoke_component(namespace, name, config, value, ctx)
        except NodeFailure:
            raise
        except AadkError as exc:
            raise NodeFailure(getattr(exc, "code", "HandlerError"), str(exc), node_id)

    def _resolve_graph(self, name: str, node_id: str) -> TopologyGraph:
        sub = self.graph_lib.get(name)
        if sub is None:
            raise NodeFailure("UnknownGraph", f"no packaged graph named {name!r}", node_id)
        if id(sub) not in self._validated_graphs:
            report = _validate_for_run(sub, self.registry)
            if not report.ok:
                first = report.issues[0]
                raise NodeFailure("InvalidGraph", f"subgraph {name!r}: {first.code}: {first.message}", node_id)
            self._validated_graphs.add(id(sub))
        return sub

    # -- routing and frame lifecycle ----------------------------------------------

    def _route(self, frame: Frame, node_id: str, outputs: List[Tuple[str, Value]]) -> None:
        for port, value in outputs:
            try:
                hop = next_hop(frame.graph, node_id, port)
            except AadkError:
                hop = None  # semantic port removed by a custom port list
            if hop is None:
                continue
            to_node, to_port = hop
            if to_port == model.LOOPBACK_PORT:
                if frame.kind == LOOP_BODY and frame.owner_node == to_node:
                    self._complete_frame(value)
                    return  # the frame is gone; remaining outputs have nowhere to go
                raise NodeFailure("RouteMissing", "loopback outside the loop's body", node_id)
            target = frame.graph.node(to_node)
            if target.kind == "Summary":
                self._deliver_join(frame, to_node, node_id, port, value)
            else:
                frame.queue.append((to_node, to_port, value))

    def _deliver_join(self, frame: Frame, summary_id: str, from_node: str, from_port: str, value: Value) -> None:
        wired = sorted(
            (e for e in frame.graph.edges_into(summary_id) if e.to_port == "in"),
            key=lambda e: (e.from_node, e.from_port),
        )
        buf = frame.joins.setdefault(summary_id, {})
        for edge in wired:
            if edge.from_node == from_node and edge.from_port == from_port:
                buf[edge] = value
                break
        if len(buf) == len(wired):
            ordered = [buf[e] for e in wired]
            frame.joins.pop(summary_id)
            frame.queue.append((summary_id, "in", ordered))

    def _start_iteration(self, frame: Frame, loop_id: str) -> None:
        """Push body frames until one has real work (empty bodies complete
        immediately), or until the loop finishes."""
        state = frame.loops[loop_id]
        graph = frame.graph
        hop = next_hop(graph, loop_id, "body")
        if hop is None:
            raise NodeFailure("RouteMissing", "ArrayLoop body port is unwired", loop_id)
        while state.index < len(state.items):
            item = state.items[state.index]
            if hop[0] == loop_id and hop[1] == model.LOOPBACK_PORT:
                state.results.append(item)
                state.index += 1
                continue
            env = {"item": item, "index": state.index, "payload": item}
            child = self._push_frame(LOOP_BODY, graph, env, owner=loop_id)
            child.queue.append((hop[0], hop[1], item))
            return
        frame.loops.pop(loop_id)
        self.trace.emit(trace.NODE_EXIT, loop_id, self.depth, {"output": state.results})
        self._route(frame, loop_id, [("done", state.results)])

    def _complete_frame(self, result: Value) -> None:
        frame = self.frames[-1]
        frame.result = result
        frame.completed = True
        if frame.kind != ROOT:
            self.trace.emit(trace.FRAME_POP, frame.owner_node, self.depth, {"result": result})
        self.frames.pop()

        if frame.kind == ROOT:
            self.status = FINISHED
            self.result = result
            self.ended_at = trace.now_ms()
            self.trace.emit(trace.SESSION_END, None, 0, {"status": "finished", "result": result})
            return

        parent = self.frames[-1]
        owner = frame.owner_node
        if frame.kind == SUBAGENT:
            self.trace.emit(trace.NODE_EXIT, owner, self.depth, {"output": result})
            self._route(parent, owner, [("out", result)])
            return

        state = parent.loops.get(owner)
        if state is None:
            raise NodeFailure("RouteMissing", f"loop state for {owner!r} vanished", owner)
        state.results.append(result)
        state.index += 1
        self._start_iteration(parent, owner)

    def _settle(self, executed_node: str) -> StepOutcome:
        if self.status == FINISHED:
            return StepOutcome(StepOutcome.DONE, node=executed_node, value=self.result)
        if self.status == FAILED:
            return StepOutcome(StepOutcome.ERROR, node=executed_node, error=self.error)
        if self.status == AWAITING_INPUT:
            return StepOutcome(StepOutcome.NEEDS_INPUT, node=executed_node)
        return StepOutcome(StepOutcome.ADVANCED, node=executed_node)

    # -- failure handling -----------------------------------------------------------

    def _handle_failure(self, node_id: str, failure: NodeFailure) -> StepOutcome:
        record = failure.record()
        self.trace.emit(trace.ERROR_RAISED, node_id, self.depth, {
            "kind": failure.kind, "message": failure.message,
        })
        search = node_id
        while self.frames:
            frame = self.frames[-1]
            handler = self._find_handler(frame, search)
            if handler is not None:
                self._unwind_into(frame, handler, record)
                return self._settle(node_id)
            self.frames.pop()
            if frame.kind != ROOT:
                self.trace.emit(trace.FRAME_POP, frame.owner_node, self.depth + 1, {"reason": "unwind"})
            if not self.frames:
                break
            owner = frame.owner_node
            parent = self.frames[-1]
            if frame.kind == LOOP_BODY:
                parent.loops.pop(owner, None)
            self.trace.emit(trace.ERROR_RAISED, owner, self.depth, {
                "kind": failure.kind, "message": failure.message, "from": search,
            })
            search = owner
        return self._fail_session(record, emit_raised=False)

    def _find_handler(self, frame: Frame, node_id: str) -> Optional[str]:
        regions = self._regions(frame.graph)
        if frame.kind == LOOP_BODY:
            scope = self._body_region(frame.graph, frame.owner_node)
            regions = {h: r for h, r in regions.items() if h in scope}
        return model.innermost_handler(regions, node_id)

    def _unwind_into(self, frame: Frame, handler: str, record: dict) -> None:
        region = self._regions(frame.graph)[handler]
        dropped = region | {handler}
        frame.queue = deque(d for d in frame.queue if d[0] not in dropped)
        for summary_id in list(frame.joins):
            if summary_id in dropped:
                frame.joins.pop(summary_id)
        for loop_id in list(frame.loops):
            if loop_id in dropped:
                frame.loops.pop(loop_id)
        self.trace.emit(trace.ERROR_CAUGHT, handler, self.depth, {"record": record})
        catch_hop = next_hop(frame.graph, handler, "catch")
        to_node, to_port = catch_hop
        target = frame.graph.node(to_node)
        if target.kind == "Summary":
            self._deliver_join(frame, to_node, handler, "catch", record)
        else:
            frame.queue.append((to_node, to_port, record))
        self.status = RUNNING

    def _fail_session(self, record: dict, emit_raised: bool = True) -> StepOutcome:
        while self.frames:
            frame = self.frames.pop()
            if frame.kind != ROOT:
                self.trace.emit(trace.FRAME_POP, frame.owner_node, self.depth + 1, {"reason": "failure"})
            if self.frames and frame.owner_node and emit_raised:
                self.trace.emit(trace.ERROR_RAISED, frame.owner_node, self.depth, {
                    "kind": record.get("kind"), "message": record.get("message"),
                })
        self.status = FAILED
        self.error = record
        self.ended_at = trace.now_ms()
        self.trace.emit(trace.SESSION_END, None, 0, {"status": "failed", "error": record})
        return StepOutcome(StepOutcome.ERROR, node=record.get("node") or None, error=record)

    # -- inspection -------------------------------------------------------------------

    def snapshot(self) -> dict:
        frames = [
            {
                "kind": f.kind,
                "node": f.queue[0][0] if f.queue else None,
                "owner": f.owner_node,
                "env": f.env,
            }
            for f in self.frames
        ]
        status: dict = {"state": self.status}
        if self.status == PAUSED:
            status["node"] = self.paused_node
        if self.status == AWAITING_INPUT:
            status["prompt"] = dict(self.pending_input or {})
        if self.status == FINISHED:
            status["result"] = self.result
        if self.status == FAILED:
            status["error"] = self.error
        return {
            "session": self.id,
            "graph": self.graph.name,
            "status": status,
            "frames": frames,
            "breakpoints": sorted(self.breakpoints),
            "usage": dict(self.usage),
        }

    def trace_log(self) -> dict:
        return self.trace.to_log(self.id, self.graph.name)


def _validate_for_run(graph: TopologyGraph, registry) -> model.ValidationReport:
    extensions = registry.kinds() if registry is not None else ()
    return model.validate(graph, extensions=extensions)


def start_session(
    graph: TopologyGraph,
    input_value: Value,
    *,
    breakpoints: Optional[Set[str]] = None,
    gateway=None,
    graph_lib: Optional[Dict[str, TopologyGraph]] = None,
    registry=None,
    session_id: Optional[str] = None,
) -> Session:
    """Validate the graph and create a Ready session positioned at Start."""
    report = _validate_for_run(graph, registry)
    if not report.ok:
        first = report.issues[0]
        raise InvalidGraphError(f"{first.code}: {first.message}")
    return Session(
        graph, input_value,
        breakpoints=breakpoints, gateway=gateway,
        graph_lib=graph_lib, registry=registry, session_id=session_id,
    )


class SessionManager:
    """Registry of live sessions with per-session execution locks."""

    def __init__(self):
        self._sessions: Dict[str, Session] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def add(self, session: Session) -> Session:
        with self._guard:
            self._sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
        return session

    def get(self, session_id: str) -> Session:
        with self._guard:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"no session {session_id!r}")
        return session

    def lock(self, session_id: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(session_id)
        if lock is None:
            raise UnknownSessionError(f"no session {session_id!r}")
        return lock

    def list(self) -> List[Session]:
        with self._guard:
            return list(self._sessions.values())

    def remove(self, session_id: str) -> None:
        with self._guard:
            self._sessions.pop(session_id, None)
            self._locks.pop(session_id, None)
