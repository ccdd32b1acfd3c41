"""Session trace events, the JSON trace log, and its well-formedness checker.

A trace is an append-only event list with dense sequence numbers. Node
enter/exit events nest like a stack (container nodes stay open while their
sub-frames run), and frame push/pop events balance. The checker accepts
any valid prefix; a log ending in SessionEnd must be fully balanced.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import List, Optional

SESSION_START = "SessionStart"
NODE_ENTER = "NodeEnter"
NODE_EXIT = "NodeExit"
VAR_UPDATE = "VarUpdate"
LLM_CALL = "LlmCall"
DISPLAY = "Display"
BREAKPOINT_HIT = "BreakpointHit"
FRAME_PUSH = "FramePush"
FRAME_POP = "FramePop"
ERROR_RAISED = "ErrorRaised"
ERROR_CAUGHT = "ErrorCaught"
SESSION_END = "SessionEnd"

KINDS = frozenset({
    SESSION_START, NODE_ENTER, NODE_EXIT, VAR_UPDATE, LLM_CALL, DISPLAY,
    BREAKPOINT_HIT, FRAME_PUSH, FRAME_POP, ERROR_RAISED, ERROR_CAUGHT, SESSION_END,
})


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    ts: int
    kind: str
    node: Optional[str]
    frame_depth: int
    data: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "kind": self.kind,
            "node": self.node,
            "frame_depth": self.frame_depth,
            "data": self.data,
        }


def now_ms() -> int:
    return int(time.time() * 1000)


class TraceBuffer:
    """Ordered trace of one session; emit() assigns dense seq numbers."""

    def __init__(self):
        self.events: List[TraceEvent] = []

    def emit(self, kind: str, node: Optional[str], frame_depth: int, data: Optional[dict] = None) -> TraceEvent:
        event = TraceEvent(
            seq=len(self.events),
            ts=now_ms(),
            kind=kind,
            node=node,
            frame_depth=frame_depth,
            data=data or {},
        )
        self.events.append(event)
        return event

    def to_log(self, session_id: str, graph_name: str) -> dict:
        return {
            "session": session_id,
            "graph_name": graph_name,
            "events": [e.to_obj() for e in self.events],
        }


def dump_log(log: dict) -> str:
    return json.dumps(log, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def strip_timestamps(log: dict) -> dict:
    out = dict(log)
    out["events"] = [{k: v for k, v in e.items() if k != "ts"} for e in log.get("events", [])]
    return out


def check_log(log: dict) -> List[str]:
    """Validate a trace log; returns a list of problems (empty when well formed)."""
    problems: List[str] = []
    if not isinstance(log, dict) or not isinstance(log.get("events"), list):
        return ["log must be an object with an 'events' array"]
    events = log["events"]
    if not events:
        return ["trace has no events"]

    open_nodes: List[tuple] = []  # (node, depth)
    depth = 1  # the root frame is implicit and never pushed/popped
    ended = False
    for i, event in enumerate(events):
        if not isinstance(event, dict):
            problems.append(f"events[{i}] is not an object")
            continue
        seq, kind = event.get("seq"), event.get("kind")
        node, at = event.get("node"), event.get("frame_depth")
        if seq != i:
            problems.append(f"events[{i}]: seq {seq!r} is not dense")
        if kind not in KINDS:
            problems.append(f"events[{i}]: unknown kind {kind!r}")
            continue
        if ended:
            problems.append(f"events[{i}]: event after SessionEnd")
            continue
        if i == 0 and kind != SESSION_START:
            problems.append("first event must be SessionStart")
        if kind == SESSION_START and i != 0:
            problems.append(f"events[{i}]: duplicate SessionStart")

        if kind == FRAME_PUSH:
            if at != depth + 1:
                problems.append(f"events[{i}]: FramePush depth {at} (expected {depth + 1})")
            depth += 1
        elif kind == FRAME_POP:
            if depth <= 1:
                problems.append(f"events[{i}]: FramePop with no open frame")
            else:
                if at != depth:
                    problems.append(f"events[{i}]: FramePop depth {at} (expected {depth})")
                if any(d >= depth for _, d in open_nodes):
                    problems.append(f"events[{i}]: FramePop with a node still open in the frame")
                depth -= 1
        elif kind == NODE_ENTER:
            if at != depth:
                problems.append(f"events[{i}]: NodeEnter depth {at} (frame depth is {depth})")
            if open_nodes and open_nodes[-1][1] >= at:
                problems.append(f"events[{i}]: NodeEnter {node!r} while {open_nodes[-1][0]!r} is open at depth {open_nodes[-1][1]}")
            open_nodes.append((node, at))
        elif kind == NODE_EXIT:
            if not open_nodes or open_nodes[-1] != (node, at):
                problems.append(f"events[{i}]: NodeExit {node!r}@{at} does not match the open node")
            else:
                open_nodes.pop()
        elif kind == ERROR_RAISED:
            if open_nodes and open_nodes[-1] == (node, at):
                open_nodes.pop()
            else:
                problems.append(f"events[{i}]: ErrorRaised {node!r}@{at} does not match the open node")
        elif kind == SESSION_END:
            ended = True
            if open_nodes:
                problems.append(f"events[{i}]: SessionEnd with open node {open_nodes[-1][0]!r}")
            if depth != 1:
                problems.append(f"events[{i}]: SessionEnd with {depth - 1} subframe(s) open")
    return problems
